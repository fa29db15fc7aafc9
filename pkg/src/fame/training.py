"""Loss, analytic gradients, Adam and the mini-batch training loop."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _precise, kernels
from .data import Split, batches
from .membership import CENTER_SPACING
from .model import EPS_DEN, SIGMA_FIELDS, SIGMA_MIN, VARIANTS, ModelParams, ModelSpec, forward_batch, param_shapes

LOSS_KINDS = ("L2", "LF")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "L2"
    lam: float = 0.0

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        object.__setattr__(self, "kind", kind)

    @property
    def reg(self) -> float:
        return self.lam if self.kind == "LF" else 0.0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    lam: float = 0.05
    loss: str = "L2"
    batch_size: int = 64
    epochs: int = 100
    seed: int = 1
    snapshot: str = "best"  # "best" (arg-min epoch loss) or "final"
    z_range: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size <= 0:
            raise ValueError(f"batch size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.snapshot not in ("best", "final"):
            raise ValueError(f"snapshot must be 'best' or 'final', got {self.snapshot!r}")
        LossConfig(self.loss, self.lam)

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.loss, self.lam)


def loss(preds, targets, W, cfg: LossConfig) -> float:
    """Mean squared error, plus ``lam/2 * ||W||_F^2`` for the LF kind.

    Without a projection layer (``W`` is None) there is nothing to penalise
    and LF equals L2.
    """
    preds, targets = np.asarray(preds), np.asarray(targets)
    if preds.shape != targets.shape or preds.size == 0:
        raise ValueError("predictions and targets must be non-empty and of equal length")
    err = preds - targets
    value = (err * err).mean()
    if cfg.kind == "LF" and W is not None:
        value = value + cfg.lam / 2 * (np.asarray(W) ** 2).sum()
    return value


def model_loss(model: ModelParams, X, y, cfg: LossConfig, backend=None) -> float:
    W = model.params.get("W")
    return loss(forward_batch(model, X, backend)[0], y, W, cfg)


# --- gradients ---------------------------------------------------------------

def _sculpt_grad(g_c, g_sl, g_sr):
    """Map gradients w.r.t. realised (centers, left, right deviations), shape
    (..., P), onto the sculpting parameters (c1, sigma_l1, sigma_r)."""
    g_c1 = g_c.sum(axis=-1)
    g_sl1 = g_sl[..., 0]
    # centers after MF p all move by 4 * d sigma_r[p]
    tail = np.cumsum(g_c[..., ::-1], axis=-1)[..., ::-1]
    g_sigma_r = g_sr.copy()
    g_sigma_r[..., :-1] += g_sl[..., 1:] + CENTER_SPACING * tail[..., 1:]
    return g_c1, g_sl1, g_sigma_r


def _through_abs(g_real, raw):
    return g_real * np.sign(raw) * (np.abs(raw) > SIGMA_MIN)


def value_and_grad(model: ModelParams, X, y, cfg: LossConfig, backend=None) -> tuple[float, np.ndarray]:
    """Loss on the batch ``(X, y)`` and its gradient w.r.t. the raw parameter
    vector (same layout as ``model.to_vector()``)."""
    k = backend or kernels.default
    spec = model.spec
    p = model.params
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    W = p.get("W")

    u = np.ascontiguousarray(X @ W.T + p["b"]) if spec.projected else X
    c, sl, sr = (np.ascontiguousarray(a) for a in model.mf_arrays())
    grads: dict[str, np.ndarray] = {}

    if spec.additive:
        a, a0 = np.ascontiguousarray(p["a"]), np.ascontiguousarray(p["a0"])
        contrib = k.sfls_forward(u, c, sl, sr, a, a0, EPS_DEN)
        pred = contrib.sum(axis=1)
        err = pred - y
        dout = np.ascontiguousarray(np.repeat((2.0 / n * err)[:, None], spec.D, axis=1))
        g_u, g_c, g_sl, g_sr, grads["a"], grads["a0"] = k.sfls_backward(u, c, sl, sr, a, a0, EPS_DEN, dout)
    else:
        A, a0 = np.ascontiguousarray(p["A"]), np.ascontiguousarray(p["a0"])
        cdr = spec.variant.startswith("CDR-")
        v = u if cdr else X
        pred = k.mfls_forward(u, v, c, sl, sr, A, a0, EPS_DEN)
        err = pred - y
        dout = 2.0 / n * err
        g_u, g_v, g_c, g_sl, g_sr, grads["A"], grads["a0"] = k.mfls_backward(u, v, c, sl, sr, A, a0, EPS_DEN, dout)
        if cdr:
            g_u = g_u + g_v
        if spec.sculpted:
            g_c, g_sl, g_sr = g_c.T, g_sl.T, g_sr.T

    if spec.sculpted:
        g_c1, g_sl1, g_sigma_r = _sculpt_grad(g_c, g_sl, g_sr)
        grads["c1"] = g_c1
        grads["sigma_l1"] = _through_abs(g_sl1, p["sigma_l1"])
        grads["sigma_r"] = _through_abs(g_sigma_r, p["sigma_r"])
    else:
        grads["c"] = g_c
        grads["sigma"] = _through_abs(g_sl + g_sr, p["sigma"])

    value = (err * err).mean()
    if spec.projected:
        grads["W"] = g_u.T @ X
        grads["b"] = g_u.sum(axis=0)
        if cfg.kind == "LF":
            grads["W"] = grads["W"] + cfg.lam * W
            value += cfg.lam / 2 * (W * W).sum()

    flat = np.concatenate([np.asarray(grads[name], dtype=np.float64).ravel() for name in p])
    return float(value), flat


def backward(model: ModelParams, X, y, cfg: LossConfig, backend=None) -> np.ndarray:
    return value_and_grad(model, X, y, cfg, backend)[1]


def _kink_coordinates(model: ModelParams) -> np.ndarray:
    mask = []
    for name, arr in model.params.items():
        m = np.zeros(arr.size, dtype=bool)
        if name in SIGMA_FIELDS:
            m = arr.ravel() == 0
        mask.append(m)
    return np.concatenate(mask)


# extended-precision differences are trusted to 1e-7 relative
_REFINE_RATIO = 1e-7


def numeric_grad(model: ModelParams, X, y, cfg: LossConfig, step: float = 1e-6) -> np.ndarray:
    """Central differences of the loss.

    Evaluated in extended precision with the numpy kernels. Coordinates whose
    estimate is not safely above the rounding floor
    ``ulp(loss) / step`` are redone at ``_precise.DPS`` digits.
    """
    ld = np.longdouble
    Xl, yl = np.asarray(X, dtype=ld), np.asarray(y, dtype=ld)
    base = model.to_vector().astype(ld)
    h = ld(step)
    ref = kernels.reference
    out = np.empty(base.size)
    floor = np.empty(base.size)
    for j in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[j] += h
        minus[j] -= h
        fp = model_loss(model.with_vector(plus), Xl, yl, cfg, ref)
        fm = model_loss(model.with_vector(minus), Xl, yl, cfg, ref)
        out[j] = (fp - fm) / (plus[j] - minus[j])
        floor[j] = 8 * np.spacing(max(abs(fp), abs(fm))) / (2 * h)
    redo = np.flatnonzero(floor > _REFINE_RATIO * np.maximum(np.abs(out), 1e-8))
    if redo.size:
        for j, g in _precise.central_difference(model, X, y, cfg.kind, cfg.reg, redo, step).items():
            out[j] = g
    return out


def fd_check(model: ModelParams, X, y, cfg: LossConfig, step: float = 1e-6, backend=None) -> float:
    """Largest relative error between analytic and central-difference
    gradients, ``|a - n| / max(|a|, |n|, 1e-8)``. Deviation coordinates sitting
    exactly on the ``abs`` kink are skipped with a warning."""
    if not step > 0:
        raise ValueError("step must be positive")
    analytic = backward(model, X, y, cfg, backend)
    numeric = numeric_grad(model, X, y, cfg, step)
    keep = ~_kink_coordinates(model)
    if not keep.all():
        warnings.warn(
            f"{int((~keep).sum())} deviation coordinate(s) at the abs kink excluded from the check",
            RuntimeWarning,
            stacklevel=2,
        )
    a, nmr = analytic[keep], numeric[keep]
    if a.size == 0:
        return 0.0
    rel = np.abs(a - nmr) / np.maximum(np.maximum(np.abs(a), np.abs(nmr)), 1e-8)
    return float(rel.max())


def random_model(spec: ModelSpec, rng: np.random.Generator) -> ModelParams:
    """Unit-scale random parameters for gradient checks.

    Raw deviations are ``U(0.2, 1)`` with random sign so every realised MF has
    a meaningful width; centers and consequents are standard normal (slopes
    scaled by 0.5), W has variance 1/M.
    """
    params = {}
    for name, shape in param_shapes(spec).items():
        if name in SIGMA_FIELDS:
            params[name] = rng.uniform(0.2, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
        elif name == "W":
            params[name] = rng.normal(0.0, 1.0 / math.sqrt(spec.M), shape)
        elif name in ("a", "A", "a0"):
            params[name] = rng.normal(0.0, 0.5, shape)
        else:
            params[name] = rng.normal(0.0, 1.0, shape)
    return ModelParams(spec, params)


@dataclass(frozen=True)
class GradCheck:
    variant: str
    loss: str
    seed: int
    D: int
    error: float


def gradient_suite(
    variants=None,
    losses=LOSS_KINDS,
    seeds=range(5),
    P: int = 5,
    Ds=(2, 4),
    M: int = 8,
    batch: int = 16,
    lam: float = 0.05,
    step: float = 1e-6,
    backend=None,
) -> list[GradCheck]:
    """fd_check over random models and batches; seed ``s`` uses ``Ds[s % len(Ds)]``."""
    out = []
    for variant in variants or VARIANTS:
        for seed in seeds:
            D = Ds[seed % len(Ds)]
            spec = ModelSpec(variant=variant, P=P, D=D, M=M)
            rng = np.random.default_rng([seed, VARIANTS.index(spec.variant)])
            model = random_model(spec, rng)
            X, y = rng.normal(size=(batch, M)), rng.normal(size=batch)
            for kind in losses:
                err = fd_check(model, X, y, LossConfig(kind, lam), step, backend)
                out.append(GradCheck(spec.variant, kind, seed, spec.D, err))
    return out


# --- optimiser ----------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def zeros(cls, n: int, lr: float = 0.01, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), lr=lr, **kw)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Bias-corrected Adam update; advances ``state`` and returns new params."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1**state.t)
    v_hat = state.v / (1 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# --- initialisation -------------------------------------------------------------

def init(spec: ModelSpec, seed: int, z_range=(-2.0, 2.0)) -> ModelParams:
    """Deterministic initial parameters.

    W is Glorot-uniform and b zero; Gaussian centers are evenly spaced over
    ``z_range`` with sigma = span / (2(P-1)); sculpted partitions start at
    ``lo`` with every deviation span / (4(P-1)) so the centers are evenly
    spaced too; consequent slopes are U(-0.1, 0.1) and intercepts zero.
    """
    lo, hi = map(float, z_range)
    if not lo < hi:
        raise ValueError("z_range must satisfy lo < hi")
    rng = np.random.default_rng(seed)
    shapes = param_shapes(spec)
    P, span = spec.P, hi - lo
    params: dict[str, np.ndarray] = {}
    if spec.projected:
        limit = math.sqrt(6.0 / (spec.M + spec.D))
        params["W"] = rng.uniform(-limit, limit, size=shapes["W"])
        params["b"] = np.zeros(shapes["b"])
    centers = np.linspace(lo, hi, P) if P > 1 else np.array([(lo + hi) / 2])
    sigma = span / (2 * (P - 1)) if P > 1 else span / 2
    sigma_r = span / (4 * (P - 1)) if P > 1 else span / 4
    for name, shape in shapes.items():
        if name in params:
            continue
        if name == "c":
            # (D, P) for subnetworks, rule-major (P, d) for rule bases
            row = centers[None, :] if spec.additive else centers[:, None]
            params[name] = np.broadcast_to(row, shape).copy()
        elif name == "sigma":
            params[name] = np.full(shape, sigma)
        elif name == "c1":
            params[name] = np.full(shape, lo)
        elif name in ("sigma_l1", "sigma_r"):
            params[name] = np.full(shape, sigma_r)
        elif name in ("a", "A"):
            params[name] = rng.uniform(-0.1, 0.1, size=shape)
        elif name == "a0":
            params[name] = np.zeros(shape)
        else:  # pragma: no cover
            raise AssertionError(name)
    return ModelParams(spec, params)


# --- training loop ----------------------------------------------------------------

@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    best_loss: float = math.inf
    best_epoch: int = -1
    best_vector: np.ndarray | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,loss,wall_ms\n")
            for i, (l, ms) in enumerate(zip(self.losses, self.wall_ms), start=1):
                fh.write(f"{i},{l!r},{ms:.3f}\n")


def train(data: Split, spec: ModelSpec, cfg: TrainConfig, backend=None) -> tuple[ModelParams, TrainHistory]:
    """Mini-batch Adam training.

    After every epoch the full training objective is evaluated; with
    ``snapshot="best"`` the parameters of the lowest such epoch are returned.
    The seed drives both initialisation and the per-epoch shuffles.
    """
    X, y = data.train.features, data.train.targets
    if X.shape[1] != spec.M:
        raise ValueError(f"model expects M={spec.M} features, data has {X.shape[1]}")
    lcfg = cfg.loss_config

    model = init(spec, cfg.seed, cfg.z_range)
    history = TrainHistory()
    vec = model.to_vector()
    state = AdamState.zeros(vec.size, lr=cfg.lr)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        for idx in batches(len(y), cfg.batch_size, cfg.seed, epoch):
            _, g = value_and_grad(model, X[idx], y[idx], lcfg, backend)
            vec = adam_step(state, vec, g)
            model = model.with_vector(vec)
        epoch_loss = float(model_loss(model, X, y, lcfg, backend))
        if not math.isfinite(epoch_loss):
            raise FloatingPointError(f"training diverged at epoch {epoch + 1}")
        history.losses.append(epoch_loss)
        history.wall_ms.append((time.perf_counter() - t0) * 1e3)
        if epoch_loss < history.best_loss:
            history.best_loss, history.best_epoch = epoch_loss, epoch
            history.best_vector = vec.copy()
    if cfg.snapshot == "best" and history.best_vector is not None:
        model = model.with_vector(history.best_vector)
    return model, history

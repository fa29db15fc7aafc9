"""Forward inference for the ten fuzzy model variants.

Additive variants (FAM, V-FAM, FAME, V-FAME) sum the outputs of one
single-input TSK subnetwork per (projected) input dimension. The MFLS
baselines use one multi-input rule base with a product t-norm; the ``E``
variants use a diagonal rule base over sculpted two-sided Gaussians.

Deviations are stored unconstrained and realised as ``max(|s|, SIGMA_MIN)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .membership import GaussMF, SculptedPartition, active_pair, gauss, gauss2, sculpt, sculpt_arrays

VARIANTS = (
    "FAM",
    "V-FAM",
    "FAME",
    "V-FAME",
    "V-MFLS",
    "CDR-MFLS",
    "DR-MFLS",
    "V-MFLSE",
    "CDR-MFLSE",
    "DR-MFLSE",
)
ADDITIVE = frozenset({"FAM", "V-FAM", "FAME", "V-FAME"})
SCULPTED = frozenset({"FAME", "V-FAME", "V-MFLSE", "CDR-MFLSE", "DR-MFLSE"})

EPS_DEN = 1e-12
SIGMA_MIN = 1e-4
FORMAT = "fame-model/1"


class DimensionError(ValueError):
    pass


def canonical_variant(name: str) -> str:
    key = name.strip().upper()
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; valid names: {', '.join(VARIANTS)}")
    return key


@dataclass(frozen=True, kw_only=True)
class ModelSpec:
    """Variant name plus rule count P, input width M and reduced width D.

    Vanilla variants have no projection; their D is set to M.
    """

    variant: str
    P: int
    D: int | None = None
    M: int

    def __post_init__(self):
        v = canonical_variant(self.variant)
        object.__setattr__(self, "variant", v)
        if self.P < 1 or self.M < 1:
            raise ValueError("P and M must be positive")
        if self.projected:
            if self.D is None or self.D < 1:
                raise ValueError(f"{v} needs a positive reduced dimension D")
        else:
            object.__setattr__(self, "D", self.M)

    @property
    def projected(self) -> bool:
        return not self.variant.startswith("V-")

    @property
    def additive(self) -> bool:
        return self.variant in ADDITIVE

    @property
    def sculpted(self) -> bool:
        return self.variant in SCULPTED

    @property
    def antecedent_dim(self) -> int:
        return self.D

    @property
    def consequent_dim(self) -> int:
        return self.D if self.variant.startswith("CDR-") else self.M

    @property
    def label(self) -> str:
        return f"{self.variant}({self.D})" if self.projected else self.variant


def count_params(spec: ModelSpec) -> int:
    """Closed-form learnable-parameter count of ``spec``."""
    P, D, M = spec.P, spec.D, spec.M
    pl = (M + 1) * D
    return {
        "FAM": 4 * P * D + pl,
        "V-FAM": 4 * P * M,
        "FAME": D * (3 * P + 2) + pl,
        "V-FAME": M * (3 * P + 2),
        "V-MFLS": P * (3 * M + 1),
        "CDR-MFLS": P * (3 * D + 1) + pl,
        "DR-MFLS": P * (2 * D + M + 1) + pl,
        "V-MFLSE": M * (2 * P + 2) + P,
        "CDR-MFLSE": D * (2 * P + 2) + P + pl,
        "DR-MFLSE": P * (D + M + 1) + 2 * D + pl,
    }[spec.variant]


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map of every learnable array."""
    P, D, M = spec.P, spec.D, spec.M
    shapes: dict[str, tuple[int, ...]] = {}
    if spec.projected:
        shapes["W"] = (D, M)
        shapes["b"] = (D,)
    if spec.additive:
        if spec.sculpted:
            shapes.update(c1=(D,), sigma_l1=(D,), sigma_r=(D, P))
        else:
            shapes.update(c=(D, P), sigma=(D, P))
        shapes.update(a=(D, P), a0=(D, P))
    else:
        da, dc = spec.antecedent_dim, spec.consequent_dim
        if spec.sculpted:
            shapes.update(c1=(da,), sigma_l1=(da,), sigma_r=(da, P))
        else:
            shapes.update(c=(P, da), sigma=(P, da))
        shapes.update(A=(P, dc), a0=(P,))
    return shapes


SIGMA_FIELDS = ("sigma", "sigma_l1", "sigma_r")


def realize_sigma(raw):
    return np.maximum(np.abs(raw), SIGMA_MIN)


@dataclass(frozen=True)
class ProjectionParams:
    W: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class SflsFamParams:
    c: np.ndarray
    sigma: np.ndarray
    a: np.ndarray
    a0: np.ndarray


@dataclass(frozen=True)
class SflsFameParams:
    partition: SculptedPartition
    a: np.ndarray
    a0: np.ndarray


@dataclass(frozen=True)
class MflsRuleBase:
    """Rule p fires on MF p of every antecedent dimension (arrays are P x d)."""

    centers: np.ndarray
    sigma_l: np.ndarray
    sigma_r: np.ndarray
    A: np.ndarray
    a0: np.ndarray
    kind: str  # "gauss" or "sculpted"


@dataclass
class ModelParams:
    """A model: its spec and the raw (unconstrained) learnable arrays."""

    spec: ModelSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.spec)
        if set(shapes) != set(self.params):
            raise DimensionError(f"parameter names {sorted(self.params)} do not match {sorted(shapes)}")
        ordered = {}
        for name, shape in shapes.items():
            arr = np.asarray(self.params[name])
            if arr.shape != shape:
                raise DimensionError(f"{name}: shape {arr.shape}, expected {shape}")
            ordered[name] = arr
        self.params = ordered

    # --- flat-vector view ------------------------------------------------
    def layout(self) -> list[tuple[str, tuple[int, ...], int]]:
        out, offset = [], 0
        for name, arr in self.params.items():
            out.append((name, arr.shape, offset))
            offset += arr.size
        return out

    @property
    def n_params(self) -> int:
        return sum(arr.size for arr in self.params.values())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for arr in self.params.values()])

    def with_vector(self, vec: np.ndarray) -> "ModelParams":
        vec = np.asarray(vec)
        if vec.shape != (self.n_params,):
            raise DimensionError(f"vector length {vec.shape}, expected {self.n_params}")
        params = {}
        for name, shape, offset in self.layout():
            size = int(np.prod(shape))
            params[name] = vec[offset : offset + size].reshape(shape).copy()
        return ModelParams(self.spec, params)

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.spec, {k: v.astype(dtype) for k, v in self.params.items()})

    # --- structured views ------------------------------------------------
    def projection(self) -> ProjectionParams:
        if not self.spec.projected:
            raise ValueError(f"{self.spec.variant} has no projection layer")
        return ProjectionParams(self.params["W"], self.params["b"])

    def mf_arrays(self):
        """Realised (centers, sigma_l, sigma_r) of the antecedents.

        Additive models: shape (D, P). MFLS rule bases: shape (P, d).
        """
        p = self.params
        if self.spec.sculpted:
            centers, sl = sculpt_arrays(p["c1"], realize_sigma(p["sigma_l1"]), realize_sigma(p["sigma_r"]))
            sr = realize_sigma(p["sigma_r"])
            if not self.spec.additive:
                centers, sl, sr = centers.T, sl.T, sr.T
            return centers, sl, sr
        s = realize_sigma(p["sigma"])
        return p["c"], s, s

    def partition(self, i: int) -> SculptedPartition:
        """Sculpted partition of subnetwork / antecedent dimension ``i``."""
        if not self.spec.sculpted:
            raise ValueError(f"{self.spec.variant} does not use sculpted partitions")
        p = self.params
        return sculpt(
            float(p["c1"][i]),
            float(realize_sigma(p["sigma_l1"][i])),
            realize_sigma(p["sigma_r"][i]),
        )

    def sfls(self, i: int) -> SflsFamParams | SflsFameParams:
        if not self.spec.additive:
            raise ValueError(f"{self.spec.variant} is not an additive model")
        a, a0 = self.params["a"][i], self.params["a0"][i]
        if self.spec.sculpted:
            return SflsFameParams(self.partition(i), a, a0)
        return SflsFamParams(self.params["c"][i], realize_sigma(self.params["sigma"][i]), a, a0)

    def rule_base(self) -> MflsRuleBase:
        if self.spec.additive:
            raise ValueError(f"{self.spec.variant} has no multi-input rule base")
        c, sl, sr = self.mf_arrays()
        kind = "sculpted" if self.spec.sculpted else "gauss"
        return MflsRuleBase(c, sl, sr, self.params["A"], self.params["a0"], kind)


# --- single-input subnetworks (scalar reference) --------------------------

def _sfls_grades(z: float, params) -> tuple[list[float], list[float]]:
    if isinstance(params, SflsFameParams):
        part = params.partition
        mus = part.grades(z)
    else:
        mus = [gauss(z, GaussMF(float(c), float(s))) for c, s in zip(params.c, params.sigma)]
    ys = [float(a) * z + float(a0) for a, a0 in zip(params.a, params.a0)]
    return mus, ys


def sfls_forward(z: float, params: SflsFamParams | SflsFameParams) -> float:
    """Weighted average of the rule consequents over all rules."""
    mus, ys = _sfls_grades(z, params)
    num = den = 0.0
    for mu, y in zip(mus, ys):
        num += mu * y
        den += mu
    return num / (den + EPS_DEN)


def sfls_forward_fast(z: float, params: SflsFameParams) -> float:
    """Two-rule evaluation of a sculpted subnetwork."""
    part = params.partition
    num = den = 0.0
    for p in active_pair(part, z):
        mu = gauss2(z, part.mf(p))
        num += mu * (float(params.a[p]) * z + float(params.a0[p]))
        den += mu
    return num / (den + EPS_DEN)


# --- projection and multi-input firing ---------------------------------------

def project(x, pp: ProjectionParams) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != pp.W.shape[1]:
        raise DimensionError(f"input has {x.shape[-1]} features, projection expects {pp.W.shape[1]}")
    return x @ pp.W.T + pp.b


def mfls_firing(x, rules: MflsRuleBase) -> np.ndarray:
    """Unnormalised product-t-norm firing strength of each rule at ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (rules.centers.shape[1],):
        raise DimensionError(f"input has shape {x.shape}, rule base expects {rules.centers.shape[1]} dims")
    d = x[None, :] - rules.centers
    s = np.where(d <= 0, rules.sigma_l, rules.sigma_r)
    return np.prod(np.exp(-(d * d) / (2 * s * s)), axis=1)


# --- batch forward ---------------------------------------------------------

def _c(a):
    return np.ascontiguousarray(a)


def forward_batch(model: ModelParams, X, backend=None) -> tuple[np.ndarray, np.ndarray]:
    """Predictions (N,) and contributions (N, D) or (N, 1) for rows of ``X``."""
    k = backend or kernels.default
    spec = model.spec
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != spec.M:
        raise DimensionError(f"expected inputs of shape (N, {spec.M}), got {X.shape}")
    dtype = np.result_type(X, *model.params.values())
    X = _c(X.astype(dtype, copy=False))
    p = model.params
    u = _c(X @ p["W"].T + p["b"]) if spec.projected else X
    c, sl, sr = model.mf_arrays()
    if spec.additive:
        contrib = k.sfls_forward(u, _c(c), _c(sl), _c(sr), _c(p["a"]), _c(p["a0"]), EPS_DEN)
        return contrib.sum(axis=1), contrib
    v = u if spec.variant.startswith("CDR-") else X
    out = k.mfls_forward(u, v, _c(c), _c(sl), _c(sr), _c(p["A"]), _c(p["a0"]), EPS_DEN)
    return out, out[:, None]


def predict(model: ModelParams, X, backend=None) -> np.ndarray:
    return forward_batch(model, X, backend)[0]


def forward(x, model: ModelParams, backend=None) -> tuple[float, np.ndarray]:
    """Prediction and per-dimension contributions for one input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.spec.M,):
        raise DimensionError(f"expected an input of length {model.spec.M}, got shape {x.shape}")
    y, contrib = forward_batch(model, x[None, :], backend)
    return float(y[0]), contrib[0]


# --- serialization -----------------------------------------------------------

def model_to_dict(model: ModelParams) -> dict:
    spec = model.spec
    return {
        "format": FORMAT,
        "spec": {"variant": spec.variant, "P": spec.P, "D": spec.D, "M": spec.M},
        "params": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in np.asarray(arr, float).ravel()]}
            for name, arr in model.params.items()
        },
    }


def model_from_dict(doc: dict) -> ModelParams:
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    s = doc["spec"]
    spec = ModelSpec(variant=s["variant"], P=int(s["P"]), D=s.get("D"), M=int(s["M"]))
    params = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    return ModelParams(spec, params)


def save_model(path, model: ModelParams, extra: dict | None = None) -> None:
    """Write ``model`` as JSON. Floats use Python's shortest round-trip repr,
    so reloading is bit-exact."""
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    text = json.dumps(doc, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> tuple[ModelParams, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    extra = {k: v for k, v in doc.items() if k not in ("format", "spec", "params")}
    return model_from_dict(doc), extra


def finite(model: ModelParams) -> bool:
    return all(np.isfinite(a).all() for a in model.params.values())


__all__ = [
    "VARIANTS",
    "EPS_DEN",
    "SIGMA_MIN",
    "ModelSpec",
    "ModelParams",
    "ProjectionParams",
    "SflsFamParams",
    "SflsFameParams",
    "MflsRuleBase",
    "count_params",
    "param_shapes",
    "project",
    "sfls_forward",
    "sfls_forward_fast",
    "mfls_firing",
    "forward",
    "forward_batch",
    "predict",
    "save_model",
    "load_model",
]

"""Interpretability exports: feature importance, prediction traces and
membership-function curves over the effective universe of each input."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .membership import TAIL_GRADE, active_pair, gauss2
from .model import EPS_DEN, ModelParams, ProjectionParams, forward, sfls_forward_fast

# Grades within this relative margin of the threshold count as inactive. Two
# neighbours of a sculpted MF sit exactly on e^-8 at its center, and rounding
# must not tip them over.
TIE_RTOL = 1e-9


# --- importance ----------------------------------------------------------------

@dataclass(frozen=True)
class ImportanceReport:
    features: tuple[str, ...]
    scores: np.ndarray  # (M,)
    W: np.ndarray  # (D, M)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("feature,score\n")
            for name, s in zip(self.features, self.scores):
                fh.write(f"{name},{float(s)!r}\n")


def importance(source: ModelParams | ProjectionParams, features=None) -> ImportanceReport:
    """Column-wise L1 norm of the projection matrix."""
    pp = source.projection() if isinstance(source, ModelParams) else source
    W = np.asarray(pp.W, dtype=float)
    if features is None:
        features = [f"x{m}" for m in range(W.shape[1])]
    if len(features) != W.shape[1]:
        raise ValueError(f"{len(features)} feature names for {W.shape[1]} columns")
    return ImportanceReport(tuple(features), np.abs(W).sum(axis=0), W.copy())


# --- traces --------------------------------------------------------------------

@dataclass(frozen=True)
class RuleTrace:
    index: int  # 0-based MF/rule index within the subnetwork
    grade: float
    consequent: float  # a_p * z + a0_p
    active: bool  # grade above the activation threshold


@dataclass(frozen=True)
class DimensionTrace:
    dim: int
    z: float
    contribution: float
    rules: tuple[RuleTrace, ...]


@dataclass(frozen=True)
class PredictionTrace:
    variant: str
    x: tuple[float, ...]
    z: tuple[float, ...]
    contributions: tuple[float, ...]
    dims: tuple[DimensionTrace, ...]
    prediction: float
    threshold: float = TAIL_GRADE

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "x": list(self.x),
            "z": list(self.z),
            "contributions": list(self.contributions),
            "prediction": self.prediction,
            "threshold": self.threshold,
            "dims": [
                {
                    "dim": d.dim,
                    "z": d.z,
                    "contribution": d.contribution,
                    "rules": [
                        {"index": r.index, "grade": r.grade, "consequent": r.consequent, "active": r.active}
                        for r in d.rules
                    ],
                }
                for d in self.dims
            ],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return text


def _above(grade: float, threshold: float) -> bool:
    return grade > threshold * (1 + TIE_RTOL)


def trace(x, model: ModelParams, threshold: float = TAIL_GRADE) -> PredictionTrace:
    """Per-dimension contributions and the rules behind them for one input.

    Sculpted subnetworks report the two-rule fast-path pair; plain Gaussian
    subnetworks report every rule above ``threshold``. Rules are sorted by
    decreasing grade.
    """
    spec = model.spec
    if not spec.additive:
        raise ValueError(f"{spec.variant} is not an additive model; traces need FAM/FAME variants")
    x = np.asarray(x, dtype=float)
    yhat, contrib = forward(x, model)
    z = antecedent_inputs(model, x[None, :])[0]
    dims = []
    for i in range(spec.D):
        zi = float(z[i])
        sub = model.sfls(i)
        a, a0 = sub.a, sub.a0
        if spec.sculpted:
            part = sub.partition
            pairs = [(p, gauss2(zi, part.mf(p))) for p in active_pair(part, zi)]
        else:
            grades = np.exp(-((zi - sub.c) ** 2) / (2 * sub.sigma**2))
            pairs = [(p, float(g)) for p, g in enumerate(grades) if _above(g, threshold)]
        pairs.sort(key=lambda t: (-t[1], t[0]))
        rules = tuple(
            RuleTrace(int(p), float(g), float(a[p] * zi + a0[p]), _above(g, threshold)) for p, g in pairs
        )
        dims.append(DimensionTrace(i, zi, float(contrib[i]), rules))
    return PredictionTrace(
        variant=spec.variant,
        x=tuple(map(float, x)),
        z=tuple(map(float, z)),
        contributions=tuple(map(float, contrib)),
        dims=tuple(dims),
        prediction=yhat,
        threshold=float(threshold),
    )


def recombine(dim: DimensionTrace, eps: float | None = None) -> float:
    """Weighted average of the listed rules' consequents."""
    eps = EPS_DEN if eps is None else eps
    num = sum(r.grade * r.consequent for r in dim.rules)
    den = sum(r.grade for r in dim.rules)
    return num / (den + eps)


# --- MF curves -------------------------------------------------------------------

@dataclass(frozen=True)
class MfCurveExport:
    bounds: np.ndarray  # (D, 2) observed min/max of each antecedent input
    grid: np.ndarray  # (D, R)
    grades: np.ndarray  # (D, P, R)

    @property
    def resolution(self) -> int:
        return self.grid.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("dim,z,mf_index,grade\n")
            D, P, R = self.grades.shape
            for i in range(D):
                for r in range(R):
                    z = float(self.grid[i, r])
                    for p in range(P):
                        fh.write(f"{i},{z!r},{p},{float(self.grades[i, p, r])!r}\n")


def antecedent_inputs(model: ModelParams, X) -> np.ndarray:
    """The values each antecedent dimension sees: ``Wx + b`` or ``x`` itself."""
    X = np.asarray(X, dtype=float)
    return X @ model.params["W"].T + model.params["b"] if model.spec.projected else X


def export_mf_curves(model: ModelParams, X_train, resolution: int = 512) -> MfCurveExport:
    """Sample every antecedent MF on an even grid spanning the training range
    of its input."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    X_train = np.asarray(X_train, dtype=float)
    if X_train.ndim != 2 or X_train.shape[0] == 0:
        raise ValueError("training data is empty")
    u = antecedent_inputs(model, X_train)
    bounds = np.stack([u.min(axis=0), u.max(axis=0)], axis=1)
    grid = np.stack([np.linspace(lo, hi, resolution) for lo, hi in bounds])
    c, sl, sr = model.mf_arrays()
    if not model.spec.additive:
        c, sl, sr = c.T, sl.T, sr.T  # per dimension
    d = grid[:, None, :] - c[:, :, None]
    s = np.where(d <= 0, sl[:, :, None], sr[:, :, None])
    grades = np.exp(-(d * d) / (2 * s * s))
    return MfCurveExport(bounds, grid, grades)


def count_active_rules(export: MfCurveExport, threshold: float = TAIL_GRADE) -> np.ndarray:
    """Per dimension, the largest number of MFs simultaneously above
    ``threshold`` at any grid point."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    active = export.grades > threshold * (1 + TIE_RTOL)
    return active.sum(axis=1).max(axis=1)


def fast_path_contributions(model: ModelParams, x) -> np.ndarray:
    """Two-rule contributions of a sculpted additive model at ``x``."""
    spec = model.spec
    if not (spec.additive and spec.sculpted):
        raise ValueError(f"{spec.variant} has no two-rule fast path")
    x = np.asarray(x, dtype=float)
    z = antecedent_inputs(model, x[None, :])[0]
    return np.array([sfls_forward_fast(float(z[i]), model.sfls(i)) for i in range(spec.D)])

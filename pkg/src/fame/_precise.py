"""Arbitrary-precision loss used to refine finite differences.

Written from the model definition with scalar mpmath loops, independently of
the vectorised kernels. Each raw parameter touches a single additive
subnetwork, a single antecedent dimension of a rule base, or the rule
consequents, so a perturbed loss only recomputes that piece. The gradient
oracle calls this only for coordinates whose extended-precision estimate is
too small to trust.
"""

from __future__ import annotations

import mpmath
import numpy as np

from .membership import CENTER_SPACING
from .model import EPS_DEN, SIGMA_MIN, ModelParams

DPS = 40


def _sigma(s):
    return max(abs(s), SIGMA_MIN)


def _mf_row(p, spec, k):
    """Centers, left and right deviations of the P fuzzy sets on input ``k``."""
    if spec.sculpted:
        sr = [_sigma(s) for s in p["sigma_r"][k]]
        centers, left = [p["c1"][k]], [_sigma(p["sigma_l1"][k])]
        for q in range(len(sr) - 1):
            centers.append(centers[-1] + CENTER_SPACING * sr[q])
            left.append(sr[q])
        return centers, left, sr
    if spec.additive:
        c, s = p["c"][k], [_sigma(v) for v in p["sigma"][k]]
    else:  # rule-major (P, d) storage
        c = [row[k] for row in p["c"]]
        s = [_sigma(row[k]) for row in p["sigma"]]
    return c, s, s


def _log_grade(z, c, sl, sr):
    d = z - c
    s = sl if d <= 0 else sr
    return -(d * d) / (2 * s * s)


class _Loss:
    def __init__(self, model: ModelParams, X, y, kind: str, lam: float):
        self.spec = model.spec
        self.kind, self.lam = kind, mpmath.mpf(lam)
        self.eps = mpmath.mpf(EPS_DEN)
        self.X = [[mpmath.mpf(float(v)) for v in row] for row in X]
        self.y = [mpmath.mpf(float(v)) for v in y]
        self.base = [mpmath.mpf(float(v)) for v in model.to_vector()]
        self.slots = []  # coordinate -> (name, leading index)
        self.layout = []
        for name, shape, offset in model.layout():
            self.layout.append((name, shape, offset))
            for r in range(int(np.prod(shape))):
                self.slots.append((name, r // shape[1] if len(shape) == 2 else r))
        p = self._unflatten(self.base)
        if self.spec.additive:
            self.parts = [self._subnet(p, i) for i in range(self.spec.D)]
        else:
            d = self.spec.antecedent_dim
            self.u = [self._input(p, k) for k in range(d)]
            self.grades = [self._dim_grades(p, k, self.u[k]) for k in range(d)]
            self.cons = self._consequents(p, self.u)

    def _unflatten(self, vec):
        out = {}
        for name, shape, offset in self.layout:
            flat = vec[offset:offset + int(np.prod(shape))]
            out[name] = list(flat) if len(shape) == 1 else [
                list(flat[r * shape[1]:(r + 1) * shape[1]]) for r in range(shape[0])]
        return out

    def _input(self, p, k):
        """Column ``k`` of the antecedent inputs over the batch."""
        if not self.spec.projected:
            return [x[k] for x in self.X]
        w, b = p["W"][k], p["b"][k]
        return [mpmath.fsum(wi * xi for wi, xi in zip(w, x)) + b for x in self.X]

    def _subnet(self, p, i):
        c, sl, sr = _mf_row(p, self.spec, i)
        a, a0 = p["a"][i], p["a0"][i]
        out = []
        for z in self._input(p, i):
            mu = [mpmath.exp(_log_grade(z, c[q], sl[q], sr[q])) for q in range(len(c))]
            num = mpmath.fsum(m * (a[q] * z + a0[q]) for q, m in enumerate(mu))
            out.append(num / (mpmath.fsum(mu) + self.eps))
        return out

    def _dim_grades(self, p, k, u):
        c, sl, sr = _mf_row(p, self.spec, k)
        return [[_log_grade(z, c[q], sl[q], sr[q]) for q in range(len(c))] for z in u]

    def _consequents(self, p, u):
        cdr = self.spec.variant.startswith("CDR-")
        out = []
        for n, x in enumerate(self.X):
            v = [col[n] for col in u] if cdr else x
            out.append([mpmath.fsum(a * vi for a, vi in zip(row, v)) + a0 for row, a0 in zip(p["A"], p["a0"])])
        return out

    def _rule_outputs(self, grades, cons):
        out = []
        for n, y in enumerate(cons):
            logf = [mpmath.fsum(g[n][q] for g in grades) for q in range(len(y))]
            top = max(logf)  # same rescaling as the kernels
            f = [mpmath.exp(v - top) for v in logf]
            out.append(mpmath.fsum(fi * yi for fi, yi in zip(f, y)) / (mpmath.fsum(f) + self.eps))
        return out

    def at(self, j, delta):
        vec = list(self.base)
        vec[j] += delta
        p = self._unflatten(vec)
        name, k = self.slots[j]
        if self.spec.additive:
            parts = list(self.parts)
            parts[k] = self._subnet(p, k)
            preds = [mpmath.fsum(col) for col in zip(*parts)]
        else:
            u, grades, cons = self.u, self.grades, self.cons
            if name in ("A", "a0"):
                cons = self._consequents(p, u)
            else:
                if not self.spec.sculpted and name in ("c", "sigma"):
                    k = j - dict((n, o) for n, _, o in self.layout)[name]
                    k %= self.spec.antecedent_dim
                u, grades = list(u), list(grades)
                if name in ("W", "b"):
                    u[k] = self._input(p, k)
                    if self.spec.variant.startswith("CDR-"):
                        cons = self._consequents(p, u)
                grades[k] = self._dim_grades(p, k, u[k])
            preds = self._rule_outputs(grades, cons)
        value = mpmath.fsum((e - t) ** 2 for e, t in zip(preds, self.y)) / len(self.y)
        if self.kind == "LF" and "W" in p:
            value += self.lam / 2 * mpmath.fsum(w * w for row in p["W"] for w in row)
        return value


def central_difference(model: ModelParams, X, y, kind: str, lam: float, coords, step: float) -> dict[int, float]:
    """Central differences of the loss at the given flat coordinates."""
    with mpmath.workdps(DPS):
        f = _Loss(model, X, y, kind, lam)
        h = mpmath.mpf(step)
        return {int(j): float((f.at(j, h) - f.at(j, -h)) / (2 * h)) for j in coords}

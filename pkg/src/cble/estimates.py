"""Monte Carlo summaries shared by every estimator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

Z95 = 1.959963984540054


@dataclass(frozen=True)
class McEstimate:
    mean: float
    se: float
    ci95: tuple[float, float]
    n: int
    seed: int | None = None

    @classmethod
    def from_samples(cls, samples, seed: int | None = None) -> "McEstimate":
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n < 2:
            raise ValueError("need at least two samples")
        if np.all(x == x[0]):
            return cls(float(x[0]), 0.0, (float(x[0]), float(x[0])), n, seed)
        mean = math.fsum(x) / n
        var = math.fsum((x - mean) ** 2) / (n - 1)
        se = math.sqrt(var / n)
        return cls(mean, se, (mean - Z95 * se, mean + Z95 * se), n, seed)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "ci95": list(self.ci95), "n": self.n, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def combined_se(a: McEstimate, b: McEstimate) -> float:
    return math.hypot(a.se, b.se)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "slope_se": self.slope_se}


def fit_rate(t, p, se=None) -> RateFit:
    """Weighted least squares of ``log p`` on ``log t``.

    Weights are inverse delta-method variances ``(p/se)^2``; without usable
    standard errors the fit is unweighted.
    """
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(t <= 0):
        raise ValueError("fit_rate needs t > 0 and p > 0")
    if t.size < 2:
        raise ValueError("need at least two points")
    x, y = np.log(t), np.log(p)
    if se is None or np.any(np.asarray(se, dtype=float) <= 0):
        w = np.ones_like(x)
    else:
        w = (p / np.asarray(se, dtype=float)) ** 2
    w = w / w.sum()
    xm, ym = np.dot(w, x), np.dot(w, y)
    sxx = np.dot(w, (x - xm) ** 2)
    slope = float(np.dot(w, (x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    ss_tot = float(np.dot(w, (y - ym) ** 2))
    r2 = 1.0 - float(np.dot(w, resid**2)) / ss_tot if ss_tot > 0 else 1.0
    if se is None or np.any(np.asarray(se, dtype=float) <= 0):
        dof = max(1, t.size - 2)
        slope_se = math.sqrt(float(np.dot(w, resid**2)) / dof / sxx) if t.size > 2 else 0.0
    else:
        raw = (p / np.asarray(se, dtype=float)) ** 2
        slope_se = math.sqrt(1.0 / float(np.dot(raw, (x - xm) ** 2)))
    return RateFit(slope, intercept, r2, slope_se)

"""Subordinator-type branching mechanisms and the integral conditions on them.

A mechanism is ``psi(l) = -delta*l - int (1 - e^{-l x}) mu(dx)``.  Everything
downstream only needs the pure part ``psi0(l) = psi(l) + delta*l``, written
through the tail ``mu_bar(x) = mu(x, inf)`` as

    |psi0(l)| = l * int_0^inf e^{-l x} mu_bar(x) dx.

``mu`` is a sum of components.  Each component knows its tail, the Laplace
transform of its tail (``laplace``), the log-derivative of that transform
(``slope``) and how to sample its jumps above a level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import special

from . import _integrals
from ._integrals import QuadratureError, quad
from .levy_env import LevyTriplet

DEFAULT_CUTOFFS = tuple(10.0 ** -k for k in range(2, 13))


class Verdict(str, Enum):
    HOLDS = "holds"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"
    CONSERVATIVE = "conservative"
    EXPLOSIVE = "explosive"


@dataclass
class ConditionReport:
    condition: str
    verdict: Verdict
    evidence: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "verdict": self.verdict.value,
            "evidence": _jsonable(self.evidence),
            "params": _jsonable(self.params),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Enum):
        return obj.value
    return obj


def _one_minus_exp_1px(q):
    """``1 - e^{-q}(1 + q)`` without cancellation for small ``q``."""
    q = np.asarray(q, dtype=float)
    out = np.empty_like(q)
    small = q < 0.5
    qs = q[small]
    acc = np.zeros_like(qs)
    term = np.ones_like(qs)
    for n in range(1, 16):
        term = term * qs / n
        if n >= 2:
            acc += (-1) ** n * (n - 1) * term
    out[small] = acc
    qb = q[~small]
    out[~small] = 1.0 - np.exp(-qb) * (1.0 + qb)
    return out


# --------------------------------------------------------------------------
# Components of mu
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Stable:
    """``psi0(l) = C l^{1+beta}``; tail ``(|C|/Gamma(-beta)) x^{-(1+beta)}``."""

    beta: float
    C: float

    def __post_init__(self):
        if not -1 < self.beta < 0:
            raise ValueError(f"stable index beta must lie in (-1, 0), got {self.beta}")
        if not self.C < 0:
            raise ValueError(f"stable constant C must be < 0, got {self.C}")

    finite_mean = False

    @property
    def scale(self) -> float:
        return -self.C / special.gamma(-self.beta)

    def tail(self, y):
        return self.scale * np.asarray(y, dtype=float) ** (-(1 + self.beta))

    def laplace(self, p):
        return -self.C * np.asarray(p, dtype=float) ** self.beta

    def slope(self, p):
        return -self.C * (-self.beta) * np.asarray(p, dtype=float) ** self.beta

    def small_moment(self, L):
        return self.scale * (1 + self.beta) / (-self.beta) * np.asarray(L, dtype=float) ** (-self.beta)

    def sample_above(self, L, gen, n):
        return L * gen.random(n) ** (-1.0 / (1 + self.beta))

    def to_dict(self):
        return {"type": "stable", "beta": self.beta, "C": self.C}


@dataclass(frozen=True)
class Atoms:
    """``mu = sum mass_i * delta_{size_i}``."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(m), float(a)) for m, a in self.atoms)
        if not atoms:
            raise ValueError("need at least one atom")
        for m, a in atoms:
            if not (m >= 0 and a > 0 and math.isfinite(m) and math.isfinite(a)):
                raise ValueError(f"atoms need mass >= 0 and size > 0, got ({m}, {a})")
        object.__setattr__(self, "atoms", atoms)

    finite_mean = True

    @property
    def masses(self):
        return np.array([m for m, _ in self.atoms])

    @property
    def sizes(self):
        return np.array([a for _, a in self.atoms])

    def tail(self, y):
        y = np.asarray(y, dtype=float)
        return np.sum(self.masses * (y[..., None] < self.sizes), axis=-1)

    def laplace(self, p):
        p = np.asarray(p, dtype=float)[..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            val = np.where(p > 0, -np.expm1(-p * self.sizes) / p, self.sizes)
        return np.sum(self.masses * val, axis=-1)

    def slope(self, p):
        p = np.asarray(p, dtype=float)[..., None]
        q = p * self.sizes
        with np.errstate(invalid="ignore", divide="ignore"):
            val = np.where(p > 0, _one_minus_exp_1px(q) / p, 0.0)
        return np.sum(self.masses * val, axis=-1)

    def small_moment(self, L):
        L = np.asarray(L, dtype=float)[..., None]
        return np.sum(self.masses * self.sizes * (self.sizes <= L), axis=-1)

    def sample_above(self, L, gen, n):
        keep = self.sizes > L
        w = self.masses * keep
        return self.sizes[gen.choice(len(w), size=n, p=w / w.sum())]

    def to_dict(self):
        return {"type": "atoms", "atoms": [list(a) for a in self.atoms]}


@dataclass(frozen=True)
class Exponential:
    """``mu(dx) = mass * rate * e^{-rate x} dx``."""

    mass: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if not (self.mass >= 0 and self.rate > 0):
            raise ValueError("exponential component needs mass >= 0 and rate > 0")

    finite_mean = True

    def tail(self, y):
        return self.mass * np.exp(-self.rate * np.asarray(y, dtype=float))

    def laplace(self, p):
        return self.mass / (np.asarray(p, dtype=float) + self.rate)

    def slope(self, p):
        p = np.asarray(p, dtype=float)
        return self.mass * (p / (p + self.rate)) / (p + self.rate)

    def small_moment(self, L):
        L = np.asarray(L, dtype=float)
        r = self.rate
        with np.errstate(invalid="ignore"):
            rest = np.where(np.isinf(L), 0.0, np.exp(-r * L) * (L + 1.0 / r))
        return self.mass * (1.0 / r - rest)

    def sample_above(self, L, gen, n):
        return L + gen.standard_exponential(n) / self.rate

    def to_dict(self):
        return {"type": "exponential", "mass": self.mass, "rate": self.rate}


@dataclass(frozen=True)
class Pareto:
    """``mu(dx) = mass * x^{-2} dx`` on ``(1, inf)``: infinite mean, log-type ``psi0``."""

    mass: float = 1.0

    def __post_init__(self):
        if not self.mass >= 0:
            raise ValueError("mass must be >= 0")

    finite_mean = False

    def tail(self, y):
        y = np.asarray(y, dtype=float)
        return self.mass * np.minimum(1.0, 1.0 / np.maximum(y, 1e-300))

    def laplace(self, p):
        p = np.asarray(p, dtype=float)
        return self.mass * (-np.expm1(-p) / p + special.exp1(p))

    def slope(self, p):
        p = np.asarray(p, dtype=float)
        return self.mass * (_one_minus_exp_1px(p) / p + np.exp(-p))

    def small_moment(self, L):
        L = np.asarray(L, dtype=float)
        return self.mass * np.log(np.maximum(L, 1.0))

    def sample_above(self, L, gen, n):
        return np.maximum(L, 1.0) / gen.random(n)

    def to_dict(self):
        return {"type": "pareto", "mass": self.mass}


@dataclass(frozen=True, eq=False)
class CustomTail:
    """A user-supplied tail ``mu_bar``; everything is done by quadrature.

    ``head(x)`` may supply ``int_0^x mu_bar`` in closed form; without it the
    mass below ``1e-300`` is ignored.  ``density`` is only used by the
    small-jump moment condition.  Construction certifies
    ``int_0^1 mu_bar < inf`` (equivalently ``int (1 ^ x) mu(dx) < inf``).
    """

    tail_fn: Callable[[float], float]
    label: str = "custom"
    upper: float = math.inf
    density: Optional[Callable[[float], float]] = None
    head: Optional[Callable[[float], float]] = None
    finite_mean: Optional[bool] = None

    def __post_init__(self):
        grid = np.geomspace(1e-12, min(self.upper, 1e6) * (1 - 1e-12), 60)
        vals = np.array([self.tail_fn(float(y)) for y in grid])
        if np.any(vals < 0) or np.any(np.diff(vals) > 1e-12 * np.abs(vals[:-1]) + 1e-300):
            raise ValueError(f"{self.label}: tail must be non-negative and non-increasing")
        cert = _integrals.integral_at_zero(lambda y: self.tail_fn(y), min(1.0, self.upper))
        if cert.verdict != "converges":
            raise ValueError(
                f"{self.label}: int_0^1 mu_bar(y) dy is not finite "
                f"(integrability certificate {cert.verdict}, exponent {cert.exponent:.3g})"
            )

    def tail(self, y):
        y = np.asarray(y, dtype=float)
        return np.vectorize(lambda v: self.tail_fn(v) if v < self.upper else 0.0, otypes=[float])(y)

    def _moment(self, p: float, power: int) -> float:
        """``int r^power e^{-r} mu_bar(r/p) dr / p`` over ``x = r/p`` in ``(TINY, upper)``."""
        # integrate in v = log r; both ends and huge p stay representable
        log_p = math.log(p)
        hi = math.log(750.0)
        if math.isfinite(self.upper):
            hi = min(hi, log_p + math.log(self.upper))
        lo = log_p + math.log(_integrals.TINY)

        def g(v):
            r = math.exp(v)
            return r ** (1 + power) * math.exp(-r) * self.tail_fn(math.exp(v - log_p)) / p

        pts = [q for q in (0.0, log_p) if lo < q < hi]
        val, _ = quad(g, lo, hi, points=pts or None, limit=1000)
        if power == 0 and self.head is not None:
            val += self.head(_integrals.TINY)
        return val

    def laplace(self, p):
        return np.vectorize(lambda q: self._moment(q, 0), otypes=[float])(np.asarray(p, dtype=float))

    def slope(self, p):
        return np.vectorize(lambda q: self._moment(q, 1), otypes=[float])(np.asarray(p, dtype=float))

    def small_moment(self, L):
        raise NotImplementedError("custom tails cannot be simulated directly")

    def sample_above(self, L, gen, n):
        raise NotImplementedError("custom tails cannot be simulated directly")

    def to_dict(self):
        raise TypeError("custom tails are not serializable")


_KINDS = {"stable": Stable, "atoms": Atoms, "exponential": Exponential, "pareto": Pareto}


def component_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type", None)
    if kind == "atoms":
        return Atoms(tuple(tuple(a) for a in d["atoms"]))
    if kind in _KINDS:
        return _KINDS[kind](**d)
    raise ValueError(f"unknown mechanism component {kind!r}")


# --------------------------------------------------------------------------
# Mechanism
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Mechanism:
    """Branching mechanism ``psi`` with linear part ``delta`` and jump measure ``mu``."""

    components: tuple
    delta: float = 0.0

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("delta must be >= 0")
        object.__setattr__(self, "components", tuple(self.components))

    @classmethod
    def stable(cls, beta: float, C: float, delta: float = 0.0) -> "Mechanism":
        return cls((Stable(beta, C),), delta)

    @classmethod
    def atoms(cls, atoms, delta: float = 0.0) -> "Mechanism":
        return cls((Atoms(tuple(atoms)),), delta)

    @classmethod
    def from_tail(cls, tail_fn, **kw) -> "Mechanism":
        delta = kw.pop("delta", 0.0)
        return cls((CustomTail(tail_fn, **kw),), delta)

    @property
    def stable_part(self) -> Stable | None:
        """The stable component when it is the only one (closed-form case)."""
        if len(self.components) == 1 and isinstance(self.components[0], Stable):
            return self.components[0]
        return None

    @property
    def finite_mean(self) -> bool | None:
        flags = [c.finite_mean for c in self.components]
        if all(f is True for f in flags):
            return True
        if any(f is False for f in flags):
            return False
        return None

    def tail(self, y):
        return sum(c.tail(y) for c in self.components)

    def laplace(self, p):
        """``int_0^inf e^{-p x} mu_bar(x) dx`` (this is ``|psi0(p)|/p``)."""
        return sum(c.laplace(p) for c in self.components)

    def slope(self, p):
        """``p * int x e^{-p x} mu_bar(x) dx``, i.e. ``-d/du`` of ``laplace(e^u)`` at ``p = e^u``."""
        return sum(c.slope(p) for c in self.components)

    def small_moment(self, L):
        return sum(c.small_moment(L) for c in self.components)

    def mean(self) -> float:
        return float(self.small_moment(math.inf)) if self.finite_mean else math.inf

    def to_dict(self) -> dict:
        return {"delta": self.delta, "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "Mechanism":
        if "components" in d:
            comps = tuple(component_from_dict(c) for c in d["components"])
        else:
            comps = (component_from_dict({k: v for k, v in d.items() if k != "delta"}),)
        return cls(comps, float(d.get("delta", 0.0)))


def psi0(mech: Mechanism, lam):
    """Pure branching mechanism ``psi0(lam) = -lam * int e^{-lam x} mu_bar(x) dx``."""
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr < 0):
        raise ValueError("lambda must be >= 0")
    st = mech.stable_part
    if st is not None:
        out = st.C * lam_arr ** (1 + st.beta)
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            safe = np.where(lam_arr > 0, lam_arr, 1.0)
            out = np.where(lam_arr > 0, -safe * mech.laplace(safe), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def psi(mech: Mechanism, lam):
    return psi0(mech, lam) - mech.delta * np.asarray(lam, dtype=float)


def phi_lambda(mech: Mechanism, lam: float, u):
    """``Phi_lam(u) = int_0^inf exp(-lam e^u y) mu_bar(y) dy``."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    p = lam * np.exp(np.asarray(u, dtype=float))
    val = mech.laplace(p)
    if np.any(~np.isfinite(val)):
        raise ValueError("mu_bar is not integrable against the exponential")
    return float(val) if np.ndim(val) == 0 else val


def phi_lambda_slope(mech: Mechanism, lam: float, u):
    """``|d Phi_lam / du| = p * int x e^{-p x} mu_bar(x) dx`` with ``p = lam e^u``."""
    p = lam * np.exp(np.asarray(u, dtype=float))
    val = mech.slope(p)
    return float(val) if np.ndim(val) == 0 else val


def exp_integral_E1(w):
    """``E1(w) = int_1^inf e^{-w y}/y dy`` for ``w > 0``."""
    w_arr = np.asarray(w, dtype=float)
    if np.any(w_arr <= 0):
        raise ValueError("E1 needs w > 0")
    out = special.exp1(w_arr)
    return float(out) if np.ndim(out) == 0 else out


def a_xi(triplet: LevyTriplet, x: float) -> float:
    """``-drift + pi(-inf,-1) + int_{-x}^{-1} pi(-inf, y) dy`` for ``x > 0``."""
    if not x > 0:
        raise ValueError("x must be > 0")
    if x >= 1:
        integral = triplet.neg_tail_integral(-x, -1.0)
    else:
        integral = -triplet.neg_tail_integral(-1.0, -x)
    return -triplet.drift + triplet.neg_tail(-1.0) + integral


# --------------------------------------------------------------------------
# Classifiers
# --------------------------------------------------------------------------


def grey_classify(mech: Mechanism, cutoffs=DEFAULT_CUTOFFS) -> ConditionReport:
    """Decide conservativeness through ``int_{0+} dl / |psi0(l)|``.

    Stable components give an analytic "explosive" verdict and finite-mean
    mechanisms an analytic "conservative" one; other mechanisms are decided by
    the block-exponent test on ``[eps, 1]`` as ``eps -> 0``.
    """
    cutoffs = tuple(sorted(cutoffs, reverse=True))
    params = {"cutoffs": list(cutoffs), "upper": 1.0}
    stables = [c for c in mech.components if isinstance(c, Stable)]
    if stables:
        st = stables[0]
        # |psi0| >= |C| l^{1+beta}, so the integral is at most 1/(|C| * -beta)
        bound = 1.0 / (-st.C * -st.beta)
        evidence = {"method": "analytic-stable", "integral_bound": bound}
        if mech.stable_part is not None:
            evidence["integral"] = bound
        return ConditionReport("grey", Verdict.EXPLOSIVE, evidence, params)
    if mech.finite_mean:
        return ConditionReport(
            "grey",
            Verdict.CONSERVATIVE,
            {"method": "analytic-finite-mean", "psi0_slope_at_0": mech.mean()},
            params,
        )

    def inv(lam):
        return 1.0 / (lam * float(mech.laplace(lam)))

    res = _integrals.integral_at_zero(inv, 1.0, checkpoints=cutoffs)
    verdict = {
        "converges": Verdict.EXPLOSIVE,
        "diverges": Verdict.CONSERVATIVE,
        "inconclusive": Verdict.INCONCLUSIVE,
    }[res.verdict]
    evidence = {"method": "numeric", "partial_integrals": res.checkpoints,
                "tail_exponent": res.exponent, "integral": res.value}
    return ConditionReport("grey", verdict, evidence, params)


def _verdict(res) -> Verdict:
    return {"converges": Verdict.HOLDS, "diverges": Verdict.FAILS,
            "inconclusive": Verdict.INCONCLUSIVE}[res.verdict]


def check_condition_E1(mech: Mechanism, lam: float) -> ConditionReport:
    """Finiteness of ``int_0^inf E1(lam y) mu_bar(y) dy``."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")

    def f(y):
        return float(special.exp1(lam * y)) * float(mech.tail(y))

    near = _integrals.integral_at_zero(f, 1.0, checkpoints=DEFAULT_CUTOFFS)
    far, err = quad(f, 1.0, math.inf, check=False)
    verdict = _verdict(near)
    value = near.value + far if verdict == Verdict.HOLDS else math.inf
    return ConditionReport(
        "E1",
        verdict,
        {"value": value, "near_zero": near.to_dict(), "far": far, "far_error": err},
        {"lambda": lam},
    )


def check_condition_Axi(mech: Mechanism, triplet: LevyTriplet, lam: float, a: float) -> ConditionReport:
    """Finiteness of ``int_(a,inf) y / A_xi(y) |dPhi_lam(y)|``.

    The integral is explored on ``[a, ~700]`` (beyond that ``lam e^y``
    overflows) and decided by the block-exponent test.
    """
    if not (lam > 0 and a > 0):
        raise ValueError("lambda and a must be > 0")
    if a_xi(triplet, a) <= 0:
        raise ValueError(f"A_xi vanishes or is negative at a={a}: condition ill-posed")

    def f(y):
        return y / a_xi(triplet, y) * phi_lambda_slope(mech, lam, y)

    ymax = 700.0 - max(0.0, math.log(lam))
    res = _integrals.integral_at_infinity(f, a, ymax)
    partial = np.cumsum(res.blocks)
    evidence = {"value": res.value, "tail_exponent": res.exponent,
                "partial_integrals": {f"{e:.4g}": float(v) for e, v in zip(res.edges[1:], partial)},
                "A_xi_at_a": a_xi(triplet, a), "ymax": ymax,
                "note": "holding for lam implies holding for every larger lam"}
    return ConditionReport("Axi", _verdict(res), evidence, {"lambda": lam, "a": a})


def check_condition_B(mech: Mechanism) -> ConditionReport:
    """Sufficient form ``int_{0+} z ln^2(z) mu(dz) < inf`` of condition (B)."""
    upper = math.exp(-2.0)
    parts = {}
    verdict = Verdict.HOLDS
    for comp in mech.components:
        if isinstance(comp, Stable):
            # z^{-1-beta} ln^2 z is integrable at 0 for beta < 0
            parts["stable"] = "holds (analytic)"
            continue
        if not isinstance(comp, CustomTail):
            parts[type(comp).__name__.lower()] = "holds (no mass accumulates at 0)"
            continue
        if comp.density is not None:
            g = lambda z: z * math.log(z) ** 2 * comp.density(z)
        else:
            # integrate by parts against the tail
            g = lambda z: (math.log(z) ** 2 + 2 * math.log(z)) * float(comp.tail(z))
        res = _integrals.integral_at_zero(g, min(upper, comp.upper), checkpoints=DEFAULT_CUTOFFS)
        parts[comp.label] = res.to_dict()
        v = _verdict(res)
        if v == Verdict.FAILS or (v == Verdict.INCONCLUSIVE and verdict == Verdict.HOLDS):
            verdict = v
    return ConditionReport("B", verdict, {"components": parts}, {"upper": upper})


def check_condition_C(mech: Mechanism, beta: float, Cc: float, grid=None) -> ConditionReport:
    """Check ``psi0(l) >= Cc * l^{1+beta}`` on a log grid of ``l``.

    A ``holds`` verdict means "verified on the grid, and the ratio is not
    drifting towards 1 at either end", nothing more.
    """
    if not -1 < beta < 0 or not Cc < 0:
        raise ValueError("need beta in (-1, 0) and Cc < 0")
    grid = np.geomspace(1e-12, 1e12, 241) if grid is None else np.asarray(grid, dtype=float)
    ratio = np.abs(psi0(mech, grid)) / (-Cc * grid ** (1 + beta))
    worst = float(ratio.max())
    tol = 1e-10
    lg = np.log(grid)
    lr = np.log(ratio)
    slope_lo = float((lr[1] - lr[0]) / (lg[1] - lg[0]))
    slope_hi = float((lr[-1] - lr[-2]) / (lg[-1] - lg[-2]))
    # extrapolate ten more decades past each end of the grid
    ext = 10 * math.log(10)
    lo_proj = float(lr[0] - slope_lo * ext)
    hi_proj = float(lr[-1] + slope_hi * ext)
    evidence = {"max_ratio": worst, "argmax": float(grid[int(ratio.argmax())]),
                "slope_low_end": slope_lo, "slope_high_end": slope_hi,
                "projected_log_ratio_low": lo_proj, "projected_log_ratio_high": hi_proj}
    if worst > 1 + tol:
        verdict = Verdict.FAILS
    elif lo_proj > tol or hi_proj > tol:
        verdict = Verdict.INCONCLUSIVE
    else:
        verdict = Verdict.HOLDS
    return ConditionReport("C", verdict, evidence, {"beta": beta, "Cc": Cc, "grid_size": len(grid)})

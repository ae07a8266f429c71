"""Numerical finiteness tests for improper integrals.

An integral with a singular endpoint is cut into blocks that grow
geometrically towards the singularity.  The block densities are fitted to a
power law; the fitted exponent ``q`` decides the verdict the same way the
p-series test does (``q > 1`` converges, ``q <= 1`` diverges).  For an
endpoint at zero the blocks live in ``l = log(a/y)``, so logarithmic
borderline cases such as ``1/(y log^2 y)`` are separated correctly.

A numerical verdict is evidence, never a proof: the band ``(Q_DIVERGE,
Q_CONVERGE)`` is reported as inconclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

Q_CONVERGE = 1.3
Q_DIVERGE = 1.1
TINY = 1e-300
_N_BLOCKS = 40
_TAIL_FRACTION = 1.0 / 3.0


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


def quad(f, a, b, *, epsabs=1e-13, epsrel=1e-11, limit=400, points=None, check=True):
    """``scipy.integrate.quad`` that raises instead of warning on failure."""
    import warnings

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        kw = {"points": points} if points is not None and np.isfinite(b) else {}
        val, err = integrate.quad(f, a, b, epsabs=epsabs, epsrel=epsrel, limit=limit, **kw)
    if check and caught and err > max(epsabs, epsrel * abs(val)) * 1e3:
        raise QuadratureError(f"quadrature on [{a}, {b}] did not converge", err)
    return val, err


@dataclass
class SingularIntegral:
    verdict: str  # "converges" | "diverges" | "inconclusive"
    value: float  # integral over the explored range (+ tail estimate if converging)
    exponent: float  # fitted decay exponent of the block densities
    edges: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "value": self.value,
            "exponent": self.exponent,
            "checkpoints": self.checkpoints,
        }


def _fit_exponent(mids, dens):
    mids, dens = np.asarray(mids), np.asarray(dens)
    good = dens > TINY
    if good.sum() < 3:
        return math.inf
    x, y = np.log(mids[good]), np.log(dens[good])
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope)


def _classify(edges, blocks, *, zero_tail: bool) -> tuple[str, float]:
    edges = np.asarray(edges)
    blocks = np.asarray(blocks)
    widths = np.diff(edges)
    mids = np.sqrt(np.maximum(edges[:-1], 1e-300) * edges[1:])
    dens = blocks / widths
    n_tail = max(4, int(len(blocks) * _TAIL_FRACTION))
    tail_d, tail_m = dens[-n_tail:], mids[-n_tail:]
    total = blocks.sum()
    if not np.all(np.isfinite(blocks)):
        return "diverges", -math.inf
    if tail_d.max() <= TINY or (total > 0 and blocks[-n_tail:].sum() <= 1e-15 * total and zero_tail):
        return "converges", math.inf
    q = _fit_exponent(tail_m, tail_d)
    if q >= Q_CONVERGE:
        return "converges", q
    if q <= Q_DIVERGE:
        return "diverges", q
    return "inconclusive", q


def integral_at_zero(f, a: float, *, checkpoints=(), n_blocks: int = _N_BLOCKS) -> SingularIntegral:
    """Test finiteness of ``int_0^a f(y) dy`` for ``f >= 0`` singular at 0.

    ``checkpoints`` are cutoffs ``eps`` for which the partial integrals
    ``int_eps^a f`` are reported.
    """
    lmax = math.log(a / TINY)
    F = lambda l: f(a * math.exp(-l)) * a * math.exp(-l)
    cps = [math.log(a / e) for e in checkpoints if 0 < e < a]
    edges = np.unique(np.concatenate([[0.0], np.geomspace(1.0, lmax, n_blocks), cps]))
    blocks = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        try:
            blocks.append(quad(F, lo, hi)[0])
        except (OverflowError, ZeroDivisionError):
            blocks.append(math.inf)
        except QuadratureError as exc:
            blocks.append(quad(F, lo, hi, check=False)[0] if exc.residual < 1e300 else math.inf)
    blocks = np.asarray(blocks)
    verdict, q = _classify(edges[np.searchsorted(edges, 1.0):], blocks[np.searchsorted(edges, 1.0):],
                           zero_tail=True)
    cum = np.concatenate([[0.0], np.cumsum(blocks)])
    checkpoint_values = {}
    for e, l in zip([e for e in checkpoints if 0 < e < a], cps):
        checkpoint_values[f"{e:.0e}"] = float(cum[np.searchsorted(edges, l)])
    value = float(cum[-1])
    if verdict == "converges" and math.isfinite(q) and q > 1:
        value += float(blocks[-1] / (edges[-1] - edges[-2]) * edges[-1] / (q - 1))
    return SingularIntegral(verdict, value if verdict != "diverges" else math.inf, q,
                            edges.tolist(), blocks.tolist(), checkpoint_values)


def integral_at_infinity(f, a: float, ymax: float, *, n_blocks: int = 30) -> SingularIntegral:
    """Test finiteness of ``int_a^inf f(y) dy`` with blocks on ``[a, ymax]``."""
    start = max(a, 1e-3)
    edges = np.geomspace(start, ymax, n_blocks + 1)
    if a < start:
        edges = np.concatenate([[a], edges])
    blocks = np.asarray([quad(f, lo, hi, check=False)[0] for lo, hi in zip(edges[:-1], edges[1:])])
    verdict, q = _classify(edges, blocks, zero_tail=True)
    value = float(blocks.sum())
    if verdict == "converges" and math.isfinite(q) and q > 1:
        value += float(blocks[-1] / (edges[-1] - edges[-2]) * edges[-1] / (q - 1))
    return SingularIntegral(verdict, value if verdict != "diverges" else math.inf, q,
                            edges.tolist(), blocks.tolist(), {})

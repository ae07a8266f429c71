"""Quenched backward flow ``v_t(s, lam, xi)`` along a fixed environment path.

On each constant piece of the path (value ``x``) the equation
``dv/ds = e^x psi0(v e^{-x})`` is autonomous.  With ``W = log v`` and
backward time ``tau = t - s`` it becomes

    dW/dtau = h(W - x),   h(y) = int_0^inf exp(-e^y r) mu_bar(r) dr,

where ``h`` is positive and decreasing.  Stable mechanisms are stepped in
closed form; everything else uses an adaptive Dormand-Prince 5(4) pair on
``W``.  The kernel is compiled with numba for the closed-form components and
falls back to plain Python for user-supplied tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .branching_mech import (Atoms, CustomTail, Exponential, Mechanism, Pareto, Stable,
                             Verdict, grey_classify)
from .levy_env import EnvPath

ATOL = 1e-10
LAMBDA_LIMIT_K = 40
LIMIT_RTOL = 1e-8

_STABLE, _ATOM, _EXPO, _PARETO = 0, 1, 2, 3
_EULER_GAMMA = 0.5772156649015329


class StepSizeError(RuntimeError):
    """Adaptive step size underflowed; ``partial`` holds the solution so far."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


class NonStabilizingError(RuntimeError):
    """The ``lam -> 0`` sequence did not settle; ``sequence`` holds the iterates."""

    def __init__(self, message, sequence):
        super().__init__(message)
        self.sequence = sequence


# --------------------------------------------------------------------------
# Compiled kernel
# --------------------------------------------------------------------------


@numba.njit(cache=True)
def _e1(x):
    if x <= 1.0:
        s = 0.0
        term = 1.0
        for k in range(1, 60):
            term *= -x / k
            s -= term / k
            if abs(term) < 1e-17 * abs(s):
                break
        return -_EULER_GAMMA - math.log(x) + s
    b = x + 1.0
    c = 1e300
    d = 1.0 / b
    out = d
    for i in range(1, 500):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        out *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return out * math.exp(-x)


@numba.njit(cache=True)
def _h_packed(y, kinds, p1, p2):
    p = math.exp(y)
    if p < 1e-300:
        p = 1e-300
    total = 0.0
    for i in range(kinds.shape[0]):
        k = kinds[i]
        if k == _STABLE:
            total += p1[i] * p ** p2[i]
        elif k == _ATOM:
            q = p * p2[i]
            total += p1[i] * (-math.expm1(-q)) / p
        elif k == _EXPO:
            total += p1[i] / (p + p2[i])
        else:
            total += p1[i] * ((-math.expm1(-p)) / p + _e1(p))
    return total


def _pack(mech: Mechanism):
    kinds, p1, p2 = [], [], []
    for c in mech.components:
        if isinstance(c, Stable):
            kinds.append(_STABLE), p1.append(-c.C), p2.append(c.beta)
        elif isinstance(c, Atoms):
            for m, a in c.atoms:
                kinds.append(_ATOM), p1.append(m), p2.append(a)
        elif isinstance(c, Exponential):
            kinds.append(_EXPO), p1.append(c.mass), p2.append(c.rate)
        elif isinstance(c, Pareto):
            kinds.append(_PARETO), p1.append(c.mass), p2.append(0.0)
        else:
            return None
    return np.array(kinds, dtype=np.int64), np.array(p1), np.array(p2)


# Dormand-Prince 5(4) tableau
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                                22 / 525, -1 / 40)


def _segments_core(h, xs, widths, w_end, atol, kinds, p1, p2):
    """Integrate backward over segments ``n-1, ..., 0``; returns W at every edge.

    ``stats = [accepted, rejected, max_error, status, failed_segment]``;
    status 0 means success, 1 means step-size underflow.
    """
    n = xs.shape[0]
    out = np.empty(n + 1)
    out[n] = w_end
    stats = np.zeros(5)
    w = w_end
    step = -1.0
    for j in range(n - 1, -1, -1):
        width = widths[j]
        x = xs[j]
        y = w - x
        remaining = width
        k1 = h(y, kinds, p1, p2)
        if step <= 0.0:
            step = 0.1 * max(1.0, abs(y)) / (k1 + 1e-300)
        while remaining > 0.0:
            dt = min(step, remaining)
            k2 = h(y + dt * _A21 * k1, kinds, p1, p2)
            k3 = h(y + dt * (_A31 * k1 + _A32 * k2), kinds, p1, p2)
            k4 = h(y + dt * (_A41 * k1 + _A42 * k2 + _A43 * k3), kinds, p1, p2)
            k5 = h(y + dt * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4), kinds, p1, p2)
            k6 = h(y + dt * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5),
                   kinds, p1, p2)
            y_new = y + dt * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
            k7 = h(y_new, kinds, p1, p2)
            err = abs(dt * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7))
            if err <= atol:
                y = y_new
                k1 = k7
                remaining -= dt
                if remaining < 1e-15 * width:
                    remaining = 0.0
                stats[0] += 1
                if err > stats[2]:
                    stats[2] = err
                fac = 5.0 if err == 0.0 else min(5.0, 0.9 * (atol / err) ** 0.2)
                if dt == step:
                    step = dt * fac
            else:
                stats[1] += 1
                step = dt * max(0.1, 0.9 * (atol / err) ** 0.2)
                if step < 1e-14 * width or step < 1e-300:
                    stats[3] = 1
                    stats[4] = j
                    out[: j + 1] = np.nan
                    return out, stats
        w = y + x
        out[j] = w
    return out, stats


_segments_jit = numba.njit(cache=True)(_segments_core)


def _make_python_h(mech: Mechanism):
    def h(y, kinds, p1, p2):
        return float(mech.laplace(math.exp(y)))

    return h


def _integrate_log_v(mech: Mechanism, xs, widths, w_end):
    packed = _pack(mech)
    if packed is not None:
        return _segments_jit(_h_packed, xs, widths, float(w_end), ATOL, *packed)
    dummy = (np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0))
    return _segments_core(_make_python_h(mech), xs, widths, float(w_end), ATOL, *dummy)


# --------------------------------------------------------------------------
# Public API
# --------------------------------------------------------------------------


@dataclass
class QuenchedSolution:
    s_grid: np.ndarray
    v_values: np.ndarray
    lam: float
    t: float
    method: str
    env_ref: tuple = (None, 0)
    diagnostics: dict = field(default_factory=dict)

    @property
    def v0(self) -> float:
        return float(self.v_values[0])

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.s_grid, self.v_values]), delimiter=",",
                   header="s,v", comments="", fmt="%.17g")


def _stable_closed(st: Stable, xs, widths, lam):
    b = st.beta
    # v(s_i)^{-beta} = lam^{-beta} + beta*C * sum_{j>=i} e^{-beta x_j} w_j
    incr = b * st.C * np.exp(-b * xs) * widths
    tail = np.concatenate([np.cumsum(incr[::-1])[::-1], [0.0]])
    return (lam ** (-b) + tail) ** (-1.0 / b)


def solve_backward(mech: Mechanism, path: EnvPath, t: float, lam: float, *,
                   method: str = "auto") -> QuenchedSolution:
    """Solve the backward equation from ``v(t) = lam`` down to ``s = 0``.

    ``method`` is ``"auto"`` (closed form for a pure stable mechanism, adaptive
    Runge-Kutta otherwise), ``"closed"`` or ``"rk"``.  ``lam = 0`` is read as
    the ``lam -> 0`` limit, which is zero for conservative mechanisms.
    """
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if not t > 0:
        raise ValueError("t must be > 0")
    if method not in ("auto", "closed", "rk"):
        raise ValueError(f"unknown method {method!r}")
    xs, widths = path.segments(t)
    s_grid = np.concatenate([np.cumsum(np.concatenate([[0.0], widths]))[:-1], [t]])
    s_grid[-1] = t
    env_ref = (path.seed, path.index)
    st = mech.stable_part
    if method == "closed" and st is None:
        raise ValueError("closed-form stepping needs a pure stable mechanism")
    use_closed = st is not None and method != "rk"

    if lam == 0 and not use_closed:
        if grey_classify(mech).verdict == Verdict.CONSERVATIVE:
            return QuenchedSolution(s_grid, np.zeros_like(s_grid), 0.0, t, "conservative-zero",
                                    env_ref, {"grey": "conservative"})
        limit = lambda_limit(mech, path, t, full=True)
        return QuenchedSolution(s_grid, limit.values, 0.0, t, "lambda-limit", env_ref,
                                {"lambda_sequence": limit.lambdas, "v0_sequence": limit.sequence})

    if use_closed:
        v = _stable_closed(st, xs, widths, lam)
        v[-1] = lam
        return QuenchedSolution(s_grid, v, float(lam), t, "closed", env_ref, {"segments": len(xs)})

    w, stats = _integrate_log_v(mech, xs, widths, math.log(lam))
    v = np.exp(w)
    v[-1] = lam
    diag = {"segments": len(xs), "accepted_steps": int(stats[0]), "rejected_steps": int(stats[1]),
            "max_local_error": float(stats[2])}
    sol = QuenchedSolution(s_grid, v, float(lam), t, "rk", env_ref, diag)
    if stats[3]:
        raise StepSizeError(f"step size underflow in segment {int(stats[4])}", sol)
    return sol


@dataclass
class LambdaLimit:
    v0: float
    lambdas: list
    sequence: list
    extrapolated: list
    values: np.ndarray | None = None


def _aitken(a, b, c):
    d2 = c - 2 * b + a
    if d2 == 0 or not math.isfinite(d2):
        return c
    return c - (c - b) ** 2 / d2


def lambda_limit(mech: Mechanism, path: EnvPath, t: float, *, k_max: int = LAMBDA_LIMIT_K,
                 full: bool = False) -> LambdaLimit:
    """``lim_{lam -> 0} v_t(0, lam, xi)`` along ``lam_k = 2^-k``.

    Iterates are accelerated with Aitken's delta-squared; the loop stops when
    either the raw or the accelerated sequence moves by less than
    ``1e-8 (1 + v)``.
    """
    lams, seq, acc, sols = [], [], [], []
    for k in range(k_max + 1):
        lam = 2.0 ** -k
        sol = solve_backward(mech, path, t, lam, method="rk")
        lams.append(lam)
        seq.append(sol.v0)
        sols.append(sol.v_values)
        if k >= 1 and abs(seq[-1] - seq[-2]) < LIMIT_RTOL * (1 + abs(seq[-1])):
            return LambdaLimit(seq[-1], lams, seq, acc, sols[-1] if full else None)
        if k >= 2:
            acc.append(_aitken(*seq[-3:]))
            if len(acc) >= 2 and abs(acc[-1] - acc[-2]) < LIMIT_RTOL * (1 + abs(acc[-1])):
                values = None
                if full:
                    values = np.array([_aitken(a, b, c) for a, b, c in zip(*sols[-3:])])
                    values[-1] = 0.0
                return LambdaLimit(acc[-1], lams, seq, acc, values)
    raise NonStabilizingError("lambda -> 0 sequence did not stabilize", seq)


def nonexplosion_prob_given_env(mech: Mechanism, path: EnvPath, z: float, t: float) -> float:
    """Quenched probability ``exp(-z v0)`` that the process is finite at ``t``."""
    if not z > 0:
        raise ValueError("z must be > 0")
    st = mech.stable_part
    if st is not None:
        return math.exp(-z * _stable_closed(st, *path.segments(t), 0.0)[0])
    if grey_classify(mech).verdict == Verdict.CONSERVATIVE:
        return 1.0
    return math.exp(-z * lambda_limit(mech, path, t).v0)


def quenched_laplace(mech: Mechanism, path: EnvPath, z: float, x: float, lam: float, t: float) -> float:
    """``exp(-z v_t(0, lam e^{-x}, xi - x))``."""
    if not z > 0:
        raise ValueError("z must be > 0")
    sol = solve_backward(mech, path.shifted(x), t, lam * math.exp(-x))
    return math.exp(-z * sol.v0)


@dataclass
class BoundReport:
    v: float
    upper: float
    upper_slack: float
    v_zero: float | None = None
    lower: float | None = None
    lower_slack: float | None = None
    tol: float = 1e-8

    @property
    def ok(self) -> bool:
        scale_u = max(1.0, abs(self.upper))
        good = self.upper_slack >= -self.tol * scale_u
        if self.lower is not None:
            good = good and self.lower_slack >= -self.tol * max(1.0, abs(self.lower))
        return bool(good)


def bound_check(mech: Mechanism, path: EnvPath, lam: float, t: float, *,
                stable_params: tuple[float, float] | None = None, tol: float = 1e-8) -> BoundReport:
    """Compare ``v_t(0, lam)`` with its exponential upper bound and, given
    ``(beta, Cc)`` with ``psi0 <= Cc l^{1+beta}``, the stable lower bound for
    ``v_t(0, 0)``.
    """
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    xs, widths = path.segments(t)
    v = solve_backward(mech, path, t, lam).v0
    phi = mech.laplace(lam * np.exp(-xs))
    upper = lam * math.exp(math.fsum(phi * widths))
    rep = BoundReport(v, upper, upper - v, tol=tol)
    if stable_params is not None:
        beta, Cc = stable_params
        I = math.fsum(np.exp(-beta * xs) * widths)
        lower = (beta * Cc * I) ** (-1.0 / beta)
        st = mech.stable_part
        v_zero = _stable_closed(st, xs, widths, 0.0)[0] if st is not None else lambda_limit(mech, path, t).v0
        rep.v_zero, rep.lower, rep.lower_slack = v_zero, lower, v_zero - lower
    return rep

"""Monte Carlo estimators for the fluctuation theory of the environment.

Survival probabilities ``P_x(sup_{s<=t} xi_s < 0)`` are computed with
Brownian-bridge weights: conditional on the stored values, the diffusive
part between two grid points stays below 0 with probability
``1 - exp(-2ab / (sigma^2 dt))``.  This removes the discrete-monitoring
bias exactly for Brownian motion with finite-activity jumps.

Ladder-height renewal functions are estimated on the random-walk skeleton;
they carry the skeleton's normalisation (roughly ``1/sqrt(dt)`` ladder
points per unit height) and count the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .estimates import McEstimate, RateFit, fit_rate
from .exp_functional import grid_points, map_paths
from .levy_env import EnvPath, LevyTriplet, increments, sample_path

PLATEAU_SLOPE = 0.05


# --------------------------------------------------------------------------
# Path-level helpers
# --------------------------------------------------------------------------


def _left_limits(path: EnvPath) -> np.ndarray:
    jump_at = np.zeros(path.times.size)
    if path.jump_times.size:
        np.add.at(jump_at, np.searchsorted(path.times, path.jump_times), path.jump_sizes)
    return path.values - jump_at


def log_survival_weights(path: EnvPath, sigma: float, level: float = 0.0) -> np.ndarray:
    """``log P(sup_{[0, times[i]]} xi < level | stored values)`` for every grid index."""
    vals = path.values
    left = _left_limits(path)
    a = level - vals[:-1]
    b = level - left[1:]
    dt = np.diff(path.times)
    alive = (a > 0) & (b > 0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if sigma > 0:
            seg = np.where(alive, np.log1p(-np.exp(-2.0 * a * b / (sigma**2 * dt))), -np.inf)
        else:
            seg = np.where(alive, 0.0, -np.inf)
    out = np.concatenate([[0.0 if vals[0] < level else -np.inf], seg])
    return np.cumsum(out)


def _grid_index(path: EnvPath, ts) -> np.ndarray:
    idx = np.searchsorted(path.times, np.asarray(ts) - 1e-9 * max(1.0, path.horizon))
    if np.any(np.abs(path.times[idx] - ts) > 1e-9 * max(1.0, path.horizon)):
        raise ValueError("t values must lie on the sampling grid (choose dt dividing every t)")
    return idx


# --------------------------------------------------------------------------
# Spitzer index
# --------------------------------------------------------------------------


def spitzer_rho(triplet: LevyTriplet, time_grid, n_paths: int, seed: int, *,
                threads: int = 1) -> McEstimate:
    """Average over paths of the fraction of ``[0, t]`` spent in ``[0, inf)``.

    ``time_grid`` is the uniform sampling grid; ``t`` is its last point.
    """
    grid = np.asarray(time_grid, dtype=float)
    if grid.size < 2:
        raise ValueError("time_grid needs at least two points")
    t = float(grid[-1])

    def one(i):
        path = sample_path(triplet, 0.0, t, grid.size, seed, i)
        xs, widths = path.segments(t)
        return float(np.dot(widths, xs >= 0)) / t

    return McEstimate.from_samples(map_paths(one, n_paths, threads), seed)


# --------------------------------------------------------------------------
# Survival exponent
# --------------------------------------------------------------------------


@dataclass
class SurvivalFit:
    fit: RateFit
    t: list
    prob: list
    se: list
    dropped: list = field(default_factory=list)
    non_power_law: bool = False
    local_slopes: tuple = ()

    @property
    def slope(self) -> float:
        return self.fit.slope

    def to_dict(self) -> dict:
        return {"fit": self.fit.to_dict(), "t": self.t, "prob": self.prob, "se": self.se,
                "dropped": self.dropped, "non_power_law": self.non_power_law,
                "local_slopes": list(self.local_slopes)}


def _survival_samples(triplet, x, ts, n_paths, seed, dt, threads):
    t_max = float(np.max(ts))
    n = grid_points(t_max, dt)

    def one(i):
        path = sample_path(triplet, x, t_max, n, seed, i)
        logw = log_survival_weights(path, triplet.sigma)
        return path, np.exp(logw[_grid_index(path, ts)])

    return one, n


def survival_exponent(triplet: LevyTriplet, x: float, t_grid, n_paths: int, seed: int, *,
                      dt: float = 0.05, threads: int = 1) -> SurvivalFit:
    """Fit ``log P_x(sup_{s<=t} xi_s < 0)`` against ``log t``."""
    if not x < 0:
        raise ValueError("start x must be < 0")
    ts = np.asarray(t_grid, dtype=float)
    one, _ = _survival_samples(triplet, x, ts, n_paths, seed, dt, threads)
    w = np.array(map_paths(lambda i: one(i)[1], n_paths, threads))
    ests = [McEstimate.from_samples(w[:, j]) for j in range(ts.size)]
    keep = [j for j, e in enumerate(ests) if e.mean > 0]
    dropped = [float(ts[j]) for j in range(ts.size) if j not in keep]
    tk = ts[keep]
    pk = np.array([ests[j].mean for j in keep])
    sk = np.array([ests[j].se for j in keep])
    fit = fit_rate(tk, pk, sk)
    half = len(tk) // 2
    lo = fit_rate(tk[: half + 1], pk[: half + 1]).slope if half >= 1 else fit.slope
    hi = fit_rate(tk[half:], pk[half:]).slope if len(tk) - half >= 2 else fit.slope
    # a slope drifting between halves, or a flat upper half (plateau), is not a decay law
    non_power_law = abs(hi - lo) > 0.15 or abs(hi) < PLATEAU_SLOPE
    return SurvivalFit(fit, ts.tolist(), [e.mean for e in ests], [e.se for e in ests], dropped,
                       bool(non_power_law), (lo, hi))


# --------------------------------------------------------------------------
# Renewal function of ladder heights
# --------------------------------------------------------------------------


@dataclass
class RenewalTable:
    x: list
    U: list
    se: list
    direction: str
    n_chains: int
    dt: float
    censored: int
    excluded: list
    fit: dict

    def __call__(self, y):
        """Piecewise-linear interpolation, linear extrapolation beyond the grid."""
        y = np.asarray(y, dtype=float)
        xs, us = np.asarray(self.x), np.asarray(self.U)
        out = np.interp(y, np.concatenate([[0.0], xs]), np.concatenate([[1.0], us]))
        beyond = y > xs[-1]
        out = np.where(beyond, us[-1] + self.fit["slope"] * (y - xs[-1]), out)
        return np.where(y < 0, 0.0, out)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("x", "U", "se", "direction", "n_chains", "dt", "censored", "excluded", "fit")}


def _ladder_heights(triplet, sign, x_max, dt, gen, block, cap):
    """Strict ladder heights (records of the running max of ``sign * walk``) up to ``x_max``.

    An excursion below the current record that lasts ``cap`` steps is
    abandoned and redrawn from the record level.
    """
    heights = []
    top = 0.0
    pos = 0.0
    since = 0
    censored = 0
    while top <= x_max:
        steps = sign * increments(triplet, dt, block, gen)
        walk = pos + np.cumsum(steps)
        run = np.maximum.accumulate(np.concatenate([[top], walk]))[1:]
        new = np.flatnonzero(run > np.concatenate([[top], run[:-1]]))
        if new.size:
            heights.extend(walk[new].tolist())
            top = float(run[-1])
            since = block - 1 - int(new[-1])
        else:
            since += block
        pos = float(walk[-1])
        if since >= cap:
            censored += 1
            pos, since = top, 0
    return np.array(heights), censored


def empirical_renewal(triplet: LevyTriplet, direction: str, x_grid, n_chains: int, seed: int, *,
                      dt: float = 1e-3, cap: int = 10**6, threads: int = 1) -> RenewalTable:
    """Expected number of ladder points (origin included) with height in ``[0, x]``."""
    if direction not in ("ascending", "descending"):
        raise ValueError("direction must be 'ascending' or 'descending'")
    sign = 1.0 if direction == "ascending" else -1.0
    xg = np.asarray(x_grid, dtype=float)
    floor = 5.0 * math.sqrt(dt) * max(triplet.sigma, 1e-12)
    excluded = xg[xg < floor].tolist()
    xg = xg[xg >= floor]
    if xg.size == 0:
        raise ValueError("every x is below the skeleton resolution 5*sigma*sqrt(dt)")
    x_max = float(xg.max())
    block = max(64, int(4 * (x_max / max(triplet.sigma * math.sqrt(dt), 1e-12)) ** 0.5))

    def one(i):
        gen = _rng.substream(seed, _rng.LADDER, i)
        h, cens = _ladder_heights(triplet, sign, x_max, dt, gen, block, cap)
        counts = 1.0 + np.searchsorted(np.sort(h), xg, side="right")
        return counts, cens

    res = map_paths(one, n_chains, threads)
    counts = np.array([r[0] for r in res])
    censored = int(sum(r[1] for r in res))
    ests = [McEstimate.from_samples(counts[:, j]) for j in range(xg.size)]
    U = np.array([e.mean for e in ests])
    A = np.vstack([xg, np.ones_like(xg)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, U, rcond=None)
    resid = U - (slope * xg + intercept)
    ss_tot = float(np.sum((U - U.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    fit = {"slope": float(slope), "intercept": float(intercept), "r2": r2,
           "linear_bound_C1": float(np.max(U / xg))}
    return RenewalTable(xg.tolist(), U.tolist(), [e.se for e in ests], direction, n_chains, dt,
                        censored, excluded, fit)


# --------------------------------------------------------------------------
# Martingale check
# --------------------------------------------------------------------------


@dataclass
class MartingaleReport:
    t: list
    mean: list
    se: list
    deviation_se: list
    max_deviation_se: float
    u_mode: str

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("t", "mean", "se", "deviation_se", "max_deviation_se", "u_mode")}


def martingale_check(triplet: LevyTriplet, x: float, t_grid, n_paths: int, seed: int, *,
                     dt: float = 0.05, renewal: RenewalTable | None = None,
                     threads: int = 1) -> MartingaleReport:
    """Estimate ``E_x[U(-xi_t); sup_{s<=t} xi_s < 0]`` along ``t_grid``.

    Without ``renewal`` the environment must have no jumps and ``U(y) = y``
    is used together with bridge-corrected survival weights.  With an
    empirical table the survival indicator is read on the skeleton grid,
    which must then use the table's ``dt``.  Deviations are paired
    differences from the first grid time, in standard-error units.
    """
    if not x < 0:
        raise ValueError("start x must be < 0")
    ts = np.asarray(t_grid, dtype=float)
    t_max = float(ts.max())
    if renewal is None:
        if triplet.jumps:
            raise ValueError("the analytic U(y) = y needs a jump-free environment")
        u_mode = "analytic"
    else:
        if abs(renewal.dt - dt) > 1e-15:
            raise ValueError("empirical U must come from the same skeleton step dt")
        u_mode = "empirical"
    n = grid_points(t_max, dt)

    def one(i):
        path = sample_path(triplet, x, t_max, n, seed, i)
        idx = _grid_index(path, ts)
        y = -path.values[idx]
        if renewal is None:
            w = np.exp(log_survival_weights(path, triplet.sigma)[idx])
            return np.where(w > 0, y, 0.0) * w
        alive = np.cumsum(path.values >= 0)[idx] == 0
        return np.where(alive, renewal(np.maximum(y, 0.0)), 0.0)

    X = np.array(map_paths(one, n_paths, threads))
    ests = [McEstimate.from_samples(X[:, j]) for j in range(ts.size)]
    dev = [0.0]
    for j in range(1, ts.size):
        d = McEstimate.from_samples(X[:, j] - X[:, 0])
        dev.append(abs(d.mean) / d.se if d.se > 0 else 0.0)
    return MartingaleReport(ts.tolist(), [e.mean for e in ests], [e.se for e in ests], dev,
                            float(max(dev)), u_mode)

"""Exponential functionals ``I_{0,t}(beta xi) = int_0^t exp(-beta xi_s) ds`` and the
stable-case annealed non-explosion probability built from them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimates import McEstimate
from .levy_env import EnvPath, LevyTriplet, sample_path


@dataclass(frozen=True)
class ExpFunctionalValue:
    value: float
    beta: float
    t: float
    error: float


def exp_functional(path: EnvPath, beta: float, t: float) -> ExpFunctionalValue:
    """Exact integral of the piecewise-constant (left value) path."""
    if not t > 0:
        raise ValueError("t must be > 0")
    xs, widths = path.segments(t)
    terms = np.exp(-beta * xs) * widths
    value = math.fsum(terms)
    return ExpFunctionalValue(value, float(beta), float(t), 4 * np.finfo(float).eps * value)


def exp_functional_at(path: EnvPath, beta: float, ts) -> np.ndarray:
    """``I_{0,t}(beta xi)`` for every ``t`` in ``ts`` from one cumulative sum."""
    ts = np.asarray(ts, dtype=float)
    if np.any(ts > path.horizon * (1 + 1e-12)) or np.any(ts <= 0):
        raise ValueError("every t must lie in (0, horizon]")
    times, values = path.times, path.values
    weights = np.exp(-beta * values[:-1])
    cum = np.concatenate([[0.0], np.cumsum(weights * np.diff(times))])
    k = np.searchsorted(times, ts, side="left")
    k = np.clip(k, 1, len(times) - 1)
    return cum[k - 1] + weights[k - 1] * (ts - times[k - 1])


def stable_v0(beta: float, C: float, I):
    """``lim_{lam -> 0} v`` for a stable mechanism: ``(beta C I)^{-1/beta}``."""
    return (beta * C * np.asarray(I, dtype=float)) ** (-1.0 / beta)


def _check_stable(beta, C):
    if not -1 < beta < 0:
        raise ValueError("beta must lie in (-1, 0)")
    if not C < 0:
        raise ValueError("C must be < 0")


def _chunks(n, k):
    edges = np.linspace(0, n, max(1, k) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_paths(fn, n_paths: int, threads: int = 1):
    """Evaluate ``fn(index)`` for every path index; output is in index order."""
    def run(block):
        return [fn(i) for i in range(*block)]

    blocks = _chunks(n_paths, 8 * threads if threads > 1 else 1)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return [r for part in parts for r in part]


def grid_points(t_max: float, dt: float) -> int:
    return max(2, int(math.ceil(t_max / dt - 1e-9)) + 1)


def stable_annealed_series(z: float, t_grid, beta: float, C: float, triplet: LevyTriplet,
                           n_paths: int, seed: int, *, dt: float = 0.01,
                           threads: int = 1) -> list[McEstimate]:
    """Annealed ``P_z(Z_t < inf)`` for every ``t`` in ``t_grid``.

    All grid times share one ensemble of paths sampled up to ``max(t_grid)``.
    """
    _check_stable(beta, C)
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    if not z > 0:
        raise ValueError("z must be > 0")
    ts = np.asarray(t_grid, dtype=float)
    t_max = float(ts.max())
    n_grid = grid_points(t_max, dt)

    def one(i):
        path = sample_path(triplet, 0.0, t_max, n_grid, seed, i)
        return np.exp(-z * stable_v0(beta, C, exp_functional_at(path, beta, ts)))

    samples = np.array(map_paths(one, n_paths, threads))
    return [McEstimate.from_samples(samples[:, j], seed) for j in range(len(ts))]


def stable_annealed_nonexplosion(z: float, t: float, beta: float, C: float, triplet: LevyTriplet,
                                 n_paths: int, seed: int, *, dt: float = 0.01,
                                 threads: int = 1) -> McEstimate:
    """Monte Carlo mean of ``exp(-z (beta C I_{0,t})^{-1/beta})`` over environments."""
    return stable_annealed_series(z, [t], beta, C, triplet, n_paths, seed, dt=dt, threads=threads)[0]

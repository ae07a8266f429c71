"""Lévy environments: characteristics, path sampling and path utilities.

The environment is the auxiliary Lévy process ``xi`` with Lévy–Itô form

    xi_t = drift*t + sigma*B_t + (compensated jumps in (-1, 1)) + (jumps outside)

All jump measures offered here have finite activity, so paths are sampled
exactly at the jump times: Gaussian increments on the merged grid plus the
compound-Poisson jumps, with the small-jump compensator folded into the drift.

Paths are stored on a grid and are treated as piecewise constant (left value)
between grid points whenever they are integrated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np
from scipy import integrate

from . import rng as _rng


# --------------------------------------------------------------------------
# Jump measures
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AtomJumps:
    """Finite Lévy measure ``pi = sum rate_i * delta_{size_i}``."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(r), float(z)) for r, z in self.atoms)
        for rate, size in atoms:
            if not (rate >= 0 and math.isfinite(rate)):
                raise ValueError(f"atom rate must be finite and >= 0, got {rate}")
            if size == 0 or not math.isfinite(size):
                raise ValueError(f"atom size must be finite and non-zero, got {size}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def rate(self) -> float:
        return sum(r for r, _ in self.atoms)

    def small_jump_mean(self) -> float:
        """``int_{(-1,1)} z pi(dz)``."""
        return sum(r * z for r, z in self.atoms if abs(z) < 1)

    def large_jump_mean(self) -> float:
        return sum(r * z for r, z in self.atoms if abs(z) >= 1)

    def exp_compensator(self) -> float:
        """``int_{(-1,1)} (e^z - 1 - z) pi(dz)``."""
        return sum(r * math.expm1(z) - r * z for r, z in self.atoms if abs(z) < 1)

    def neg_tail(self, y: float) -> float:
        """``pi(-inf, y)`` for ``y < 0``."""
        return sum(r for r, z in self.atoms if z < y)

    def neg_tail_integral(self, a: float, b: float) -> float:
        """``int_a^b pi(-inf, y) dy`` for ``a <= b <= 0`` (piecewise constant)."""
        return sum(r * max(0.0, b - max(a, z)) for r, z in self.atoms if z < 0)

    def sample_sizes(self, gen: np.random.Generator, n: int) -> np.ndarray:
        rates = np.array([r for r, _ in self.atoms])
        sizes = np.array([z for _, z in self.atoms])
        idx = gen.choice(len(sizes), size=n, p=rates / rates.sum())
        return sizes[idx]

    def to_dict(self) -> dict:
        return {"type": "atoms", "atoms": [list(a) for a in self.atoms]}


@dataclass(frozen=True)
class DoubleExponentialJumps:
    """Two-sided exponential jumps.

    ``pi(dz) = rate_up*eta_up*e^{-eta_up z} dz`` on ``z > 0`` and
    ``rate_down*eta_down*e^{eta_down z} dz`` on ``z < 0``.
    """

    rate_up: float = 0.0
    eta_up: float = 1.0
    rate_down: float = 0.0
    eta_down: float = 1.0

    def __post_init__(self):
        if self.rate_up < 0 or self.rate_down < 0:
            raise ValueError("jump rates must be >= 0")
        if self.eta_up <= 0 or self.eta_down <= 0:
            raise ValueError("exponential jump parameters must be > 0")

    @property
    def rate(self) -> float:
        return self.rate_up + self.rate_down

    def _density(self, z):
        if z > 0:
            return self.rate_up * self.eta_up * math.exp(-self.eta_up * z)
        return self.rate_down * self.eta_down * math.exp(self.eta_down * z)

    def small_jump_mean(self) -> float:
        def part(rate, eta):
            return rate * (1.0 - math.exp(-eta) * (1.0 + eta)) / eta

        return part(self.rate_up, self.eta_up) - part(self.rate_down, self.eta_down)

    def large_jump_mean(self) -> float:
        def part(rate, eta):
            return rate * math.exp(-eta) * (1.0 + eta) / eta

        return part(self.rate_up, self.eta_up) - part(self.rate_down, self.eta_down)

    def exp_compensator(self) -> float:
        f = lambda z: (math.expm1(z) - z) * self._density(z)
        up = integrate.quad(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12)[0]
        down = integrate.quad(f, -1.0, 0.0, epsabs=1e-14, epsrel=1e-12)[0]
        return up + down

    def neg_tail(self, y: float) -> float:
        return self.rate_down * math.exp(self.eta_down * y)

    def neg_tail_integral(self, a: float, b: float) -> float:
        e = self.eta_down
        return self.rate_down * (math.exp(e * b) - math.exp(e * a)) / e

    def sample_sizes(self, gen: np.random.Generator, n: int) -> np.ndarray:
        up = gen.random(n) < self.rate_up / self.rate
        mag = gen.standard_exponential(n)
        return np.where(up, mag / self.eta_up, -mag / self.eta_down)

    def to_dict(self) -> dict:
        return {
            "type": "double_exponential",
            "rate_up": self.rate_up,
            "eta_up": self.eta_up,
            "rate_down": self.rate_down,
            "eta_down": self.eta_down,
        }


JumpSpec = Union[AtomJumps, DoubleExponentialJumps]


def jumps_from_dict(d: dict) -> JumpSpec:
    kind = d.get("type")
    if kind == "atoms":
        return AtomJumps(tuple(tuple(a) for a in d["atoms"]))
    if kind == "double_exponential":
        return DoubleExponentialJumps(
            rate_up=float(d.get("rate_up", 0.0)),
            eta_up=float(d.get("eta_up", 1.0)),
            rate_down=float(d.get("rate_down", 0.0)),
            eta_down=float(d.get("eta_down", 1.0)),
        )
    raise ValueError(f"unknown jump spec type {kind!r}")


# --------------------------------------------------------------------------
# Triplet
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LevyTriplet:
    """Characteristics ``(drift, sigma, pi)`` of the environment ``xi``.

    ``drift`` is the Lévy–Itô drift, i.e. small jumps are compensated.
    """

    drift: float = 0.0
    sigma: float = 0.0
    jumps: tuple[JumpSpec, ...] = ()

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not math.isfinite(self.drift):
            raise ValueError("drift must be finite")
        object.__setattr__(self, "drift", float(self.drift))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "jumps", tuple(self.jumps))

    @property
    def jump_rate(self) -> float:
        return sum(j.rate for j in self.jumps)

    @property
    def mean(self) -> float:
        """``E[xi_1]``."""
        return self.drift + sum(j.large_jump_mean() for j in self.jumps)

    @property
    def simulation_drift(self) -> float:
        """Drift of the Gaussian part once all jumps are added uncompensated."""
        return self.drift - sum(j.small_jump_mean() for j in self.jumps)

    def neg_tail(self, y: float) -> float:
        return sum(j.neg_tail(y) for j in self.jumps)

    def neg_tail_integral(self, a: float, b: float) -> float:
        return sum(j.neg_tail_integral(a, b) for j in self.jumps)

    def to_dict(self) -> dict:
        return {
            "drift": self.drift,
            "sigma": self.sigma,
            "jumps": [j.to_dict() for j in self.jumps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LevyTriplet":
        return cls(
            drift=float(d.get("drift", 0.0)),
            sigma=float(d.get("sigma", 0.0)),
            jumps=tuple(jumps_from_dict(j) for j in d.get("jumps", [])),
        )


def env_from_sde_params(alpha: float, delta: float, sigma: float, pi: tuple[JumpSpec, ...] = ()) -> LevyTriplet:
    """Build the environment ``xi`` from the parameters of the driving process ``S``.

    The drift becomes ``alpha + delta - sigma**2/2 - int_{(-1,1)} (e^z-1-z) pi(dz)``
    and jump sizes are kept (they are already the log-jumps of ``S``).
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    pi = tuple(pi)
    comp = sum(j.exp_compensator() for j in pi)
    if not math.isfinite(comp):
        raise ValueError("jump measure has a non-integrable compensator on (-1, 1)")
    return LevyTriplet(drift=alpha + delta - 0.5 * sigma**2 - comp, sigma=sigma, jumps=pi)


# --------------------------------------------------------------------------
# Paths
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnvPath:
    """A sampled environment trajectory.

    ``values[i]`` is ``xi(times[i])`` after any jump at ``times[i]``.  Between
    grid points the path is held at the left value.
    """

    times: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    jump_sizes: np.ndarray = field(default_factory=lambda: np.empty(0))
    seed: int | None = None
    index: int = 0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def start(self) -> float:
        return float(self.values[0])

    @property
    def jump_records(self) -> list[tuple[float, float]]:
        return list(zip(self.jump_times.tolist(), self.jump_sizes.tolist()))

    def segments(self, t: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Left values and widths of the constant pieces covering ``[0, t]``."""
        t = self.horizon if t is None else float(t)
        if t > self.horizon * (1 + 1e-12):
            raise ValueError(f"t={t} exceeds path horizon {self.horizon}")
        k = int(np.searchsorted(self.times, t, side="left"))
        edges = np.append(self.times[:k], t)
        widths = np.diff(edges)
        return self.values[: len(widths)], widths

    def shifted(self, x: float) -> "EnvPath":
        """The path ``xi - x``."""
        return EnvPath(self.times, self.values - x, self.jump_times, self.jump_sizes, self.seed, self.index)

    def value_at(self, s: float) -> float:
        i = int(np.searchsorted(self.times, s, side="right")) - 1
        return float(self.values[max(i, 0)])

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.times, self.values]), delimiter=",",
                   header="t,xi", comments="", fmt="%.17g")


def constant_path(value: float, horizon: float, grid_n: int = 2) -> EnvPath:
    """Deterministic path held at ``value``; handy for degenerate environments."""
    times = np.linspace(0.0, horizon, grid_n)
    return EnvPath(times, np.full(grid_n, float(value)))


def path_from_function(f, horizon: float, grid_n: int) -> EnvPath:
    times = np.linspace(0.0, horizon, grid_n)
    return EnvPath(times, np.asarray(f(times), dtype=float))


def _sample_jumps(triplet: LevyTriplet, horizon: float, gen: np.random.Generator):
    times, sizes = [], []
    for spec in triplet.jumps:
        if spec.rate == 0:
            continue
        n = int(gen.poisson(spec.rate * horizon))
        if n:
            times.append(gen.uniform(0.0, horizon, n))
            sizes.append(spec.sample_sizes(gen, n))
    if not times:
        return np.empty(0), np.empty(0)
    t = np.concatenate(times)
    z = np.concatenate(sizes)
    order = np.argsort(t, kind="stable")
    return t[order], z[order]


def sample_path(triplet: LevyTriplet, start: float, horizon: float, grid_n: int, seed: int,
                index: int = 0, *, antithetic: bool = False) -> EnvPath:
    """Sample ``xi`` on a uniform grid of ``grid_n`` points with jump times inserted.

    Jumps and Gaussian increments come from separate substreams of
    ``(seed, index)``; the jump configuration therefore does not depend on
    ``grid_n``.  ``antithetic`` negates the Gaussian draws and keeps the jumps.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    base = np.linspace(0.0, horizon, grid_n)
    jt, jz = _sample_jumps(triplet, horizon, _rng.substream(seed, _rng.ENV_JUMPS, index))
    if jt.size:
        times = np.union1d(base, jt)
    else:
        times = base
    dt = np.diff(times)
    incr = triplet.simulation_drift * dt
    if triplet.sigma > 0:
        gen = _rng.substream(seed, _rng.ENV_GAUSS, index)
        normals = gen.standard_normal(dt.size)
        incr = incr + triplet.sigma * np.sqrt(dt) * (-normals if antithetic else normals)
    if jt.size:
        pos = np.searchsorted(times, jt)
        jump_incr = np.zeros(times.size)
        np.add.at(jump_incr, pos, jz)
        incr = incr + jump_incr[1:]
    values = np.empty(times.size)
    values[0] = start
    np.cumsum(incr, out=values[1:])
    values[1:] += start
    return EnvPath(times, values, jt, jz, seed, index)


def refine(path: EnvPath, sigma: float, seed: int) -> EnvPath:
    """Insert Brownian-bridge midpoints into every interval of ``path``.

    Jumps stay at their recorded times; the continuous part is bridged with
    variance ``sigma**2 * dt / 4``.  Useful for coupled grid-refinement studies.
    """
    t, x = path.times, path.values
    dt = np.diff(t)
    jump_at = np.zeros(t.size)
    if path.jump_times.size:
        np.add.at(jump_at, np.searchsorted(t, path.jump_times), path.jump_sizes)
    left_limit = x[1:] - jump_at[1:]
    mid = 0.5 * (x[:-1] + left_limit)
    if sigma > 0:
        gen = _rng.substream(int(seed), _rng.REFINE, path.index)
        mid = mid + 0.5 * sigma * np.sqrt(dt) * gen.standard_normal(dt.size)
    times = np.empty(2 * t.size - 1)
    values = np.empty_like(times)
    times[0::2], times[1::2] = t, t[:-1] + 0.5 * dt
    values[0::2], values[1::2] = x, mid
    return EnvPath(times, values, path.jump_times, path.jump_sizes, path.seed, path.index)


def running_extrema(path: EnvPath) -> tuple[np.ndarray, np.ndarray]:
    """Running supremum and infimum over the stored values."""
    return np.maximum.accumulate(path.values), np.minimum.accumulate(path.values)


def first_passage_below(path: EnvPath, level: float) -> float | None:
    """First stored time at which the path is ``<= level``; ``None`` if never."""
    hit = np.flatnonzero(path.values <= level)
    return float(path.times[hit[0]]) if hit.size else None


def first_passage_above(path: EnvPath, level: float) -> float | None:
    hit = np.flatnonzero(path.values >= level)
    return float(path.times[hit[0]]) if hit.size else None


def increments(triplet: LevyTriplet, dt: float, n: int, gen: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. increments of ``xi`` over a step ``dt`` (random-walk skeleton)."""
    out = triplet.simulation_drift * dt + triplet.sigma * math.sqrt(dt) * gen.standard_normal(n)
    for spec in triplet.jumps:
        if spec.rate == 0:
            continue
        counts = gen.poisson(spec.rate * dt, n)
        total = int(counts.sum())
        if total:
            sizes = spec.sample_sizes(gen, total)
            out += np.bincount(np.repeat(np.arange(n), counts), weights=sizes, minlength=n)
    return out


def triplet_summary(triplet: LevyTriplet) -> dict[str, Any]:
    return {**triplet.to_dict(), "mean": triplet.mean}

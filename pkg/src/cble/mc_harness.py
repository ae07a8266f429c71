"""Experiment orchestration: configuration, annealed series, rate fits, output files."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .branching_mech import (ConditionReport, Mechanism, Stable, Verdict, check_condition_Axi,
                             check_condition_B, check_condition_C, check_condition_E1, grey_classify)
from .estimates import McEstimate, RateFit, combined_se, fit_rate
from .exp_functional import grid_points, map_paths, stable_annealed_series
from .fluctuation import empirical_renewal, martingale_check, spitzer_rho, survival_exponent
from .levy_env import LevyTriplet, sample_path
from .quenched_flow import nonexplosion_prob_given_env
from .sde_direct import DEFAULT_CAPS, crosscheck_nonexplosion

__all__ = ["ExperimentConfig", "ExperimentResult", "annealed_series", "fit_rate", "run_critical",
           "run_subcritical", "run_grey", "run_conditions", "run_fluctuation", "run_crosscheck",
           "write_outputs", "KINDS"]

KINDS = ("subcritical", "critical", "grey", "conditions", "crosscheck", "fluctuation", "annealed")
MIN_REGIME_PATHS = 100


@dataclass
class ExperimentConfig:
    kind: str = "critical"
    mechanism: dict = field(default_factory=lambda: {"type": "stable", "beta": -0.5, "C": -1.0})
    triplet: dict = field(default_factory=lambda: {"drift": 0.0, "sigma": 1.0, "jumps": []})
    z: float = 1.0
    t_grid: list = field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0])
    n_paths: int = 10_000
    seed: int = 0
    dt: float = 0.01
    threads: int = 1
    antithetic: bool = False
    lam: float = 1.0
    rho: float = 0.5
    condition_c: list | None = None
    axi_a: float = 1.0
    eps_b: float = 1e-4
    cap: float = 1e12
    caps: list = field(default_factory=lambda: list(DEFAULT_CAPS))
    x: float = -1.0
    x_grid: list = field(default_factory=lambda: [0.2 + 0.2 * k for k in range(15)])
    n_chains: int = 500
    ladder_dt: float = 1e-3
    spitzer_t: float = 100.0
    spitzer_paths: int = 2000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        ts = [float(t) for t in self.t_grid]
        if any(b <= a for a, b in zip(ts, ts[1:])) or not ts or ts[0] <= 0:
            raise ValueError("t_grid must be positive and strictly increasing")
        self.t_grid = ts
        if self.kind in ("subcritical", "critical") and self.n_paths < MIN_REGIME_PATHS:
            raise ValueError(f"regime experiments need n_paths >= {MIN_REGIME_PATHS}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def mech(self) -> Mechanism:
        return Mechanism.from_dict(self.mechanism)

    @property
    def env(self) -> LevyTriplet:
        return LevyTriplet.from_dict(self.triplet)


@dataclass
class ExperimentResult:
    kind: str
    config: ExperimentConfig
    preamble: dict = field(default_factory=dict)
    series: list = field(default_factory=list)  # (t, McEstimate)
    verdict: dict = field(default_factory=dict)
    hypotheses_met: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config.to_dict(),
            "versions": _versions(),
            "preamble": _plain(self.preamble),
            "series": [{"t": t, **e.to_dict()} for t, e in self.series],
            "verdict": _plain(self.verdict),
            "hypotheses_met": self.hypotheses_met,
            "extra": _plain(self.extra),
        }


def _versions() -> dict:
    import numba
    import scipy

    return {"cble": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


def _plain(obj):
    if isinstance(obj, ConditionReport):
        return obj.to_dict()
    if hasattr(obj, "to_dict") and not isinstance(obj, dict):
        return _plain(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, Verdict):
        return obj.value
    return obj


# --------------------------------------------------------------------------
# Annealed series
# --------------------------------------------------------------------------


def annealed_series(mech: Mechanism, triplet: LevyTriplet, z: float, t_grid, n_paths: int, seed: int,
                    *, dt: float = 0.01, threads: int = 1, antithetic: bool = False) -> list[McEstimate]:
    """Annealed non-explosion probabilities on ``t_grid`` from one nested ensemble.

    With ``antithetic`` the Gaussian increments of paths ``2k`` and ``2k+1``
    are negatives of each other and estimates are built from pair means.
    """
    ts = np.asarray(t_grid, dtype=float)
    st = mech.stable_part
    if st is not None and not antithetic:
        return stable_annealed_series(z, ts, st.beta, st.C, triplet, n_paths, seed, dt=dt,
                                      threads=threads)
    if grey_classify(mech).verdict == Verdict.CONSERVATIVE:
        return [McEstimate(1.0, 0.0, (1.0, 1.0), n_paths, seed) for _ in ts]
    t_max = float(ts.max())
    n = grid_points(t_max, dt)

    def one(i):
        path = sample_path(triplet, 0.0, t_max, n, seed, i // 2 if antithetic else i,
                           antithetic=antithetic and i % 2 == 1)
        return [nonexplosion_prob_given_env(mech, path, z, float(t)) for t in ts]

    samples = np.array(map_paths(one, n_paths, threads))
    if antithetic:
        m = samples.shape[0] // 2 * 2
        samples = 0.5 * (samples[0:m:2] + samples[1:m:2])
    return [McEstimate.from_samples(samples[:, j], seed) for j in range(ts.size)]


def _series(cfg: ExperimentConfig):
    ests = annealed_series(cfg.mech, cfg.env, cfg.z, cfg.t_grid, cfg.n_paths, cfg.seed, dt=cfg.dt,
                           threads=cfg.threads, antithetic=cfg.antithetic)
    return list(zip(cfg.t_grid, ests))


# --------------------------------------------------------------------------
# Regime experiments
# --------------------------------------------------------------------------


def run_subcritical(cfg: ExperimentConfig) -> ExperimentResult:
    """Annealed series in an environment drifting to ``-inf`` plus a plateau verdict."""
    mech, env = cfg.mech, cfg.env
    pre = {"environment_mean": env.mean, "negative_mean": env.mean < 0,
           "condition_E1": check_condition_E1(mech, cfg.lam)}
    met = env.mean < 0 and pre["condition_E1"].verdict == Verdict.HOLDS
    series = _series(cfg)
    (t1, a), (t2, b) = series[-2], series[-1]
    cse = combined_se(a, b)
    verdict = {"last_two_t": [t1, t2], "difference": b.mean - a.mean, "combined_se": cse,
               "plateau": bool(abs(b.mean - a.mean) < 2 * cse + 1e-15 and b.mean > 0),
               "limit_estimate": b.mean}
    if not met:
        verdict["annotation"] = "hypothesis unmet"
    return ExperimentResult("subcritical", cfg, pre, series, verdict, met)


def compensated_spread(series, rho: float) -> tuple[float, list]:
    """``max/min`` of ``P(t) t^rho`` over the upper half of the grid."""
    ts = np.array([t for t, _ in series])
    ps = np.array([e.mean for _, e in series])
    comp = ps * ts**rho
    upper = comp[len(comp) // 2:]
    ratio = float(upper.max() / upper.min()) if upper.min() > 0 else math.inf
    return ratio, comp.tolist()


def run_critical(cfg: ExperimentConfig) -> ExperimentResult:
    """Annealed series in an oscillating environment, with a power-law fit."""
    mech, env = cfg.mech, cfg.env
    spitzer_dt = max(cfg.dt, 0.05)
    rho_hat = spitzer_rho(env, np.linspace(0.0, cfg.spitzer_t, grid_points(cfg.spitzer_t, spitzer_dt)),
                          cfg.spitzer_paths, cfg.seed + 1, threads=cfg.threads)
    pre = {"environment_mean": env.mean, "zero_mean": abs(env.mean) < 1e-12,
           "spitzer_rho_hat": rho_hat, "rho_target": cfg.rho,
           "spitzer_near_target": abs(rho_hat.mean - cfg.rho) < max(0.05, 3 * rho_hat.se),
           "condition_B": check_condition_B(mech)}
    c_params = cfg.condition_c
    if c_params is None:
        st = [c for c in mech.components if isinstance(c, Stable)]
        c_params = [st[0].beta, st[0].C] if st else None
    if c_params is not None:
        pre["condition_C"] = check_condition_C(mech, *c_params)
    met = (pre["zero_mean"] and pre["spitzer_near_target"]
           and pre["condition_B"].verdict == Verdict.HOLDS
           and "condition_C" in pre and pre["condition_C"].verdict == Verdict.HOLDS)
    series = _series(cfg)
    ts = [t for t, _ in series]
    ps = [e.mean for _, e in series]
    ses = [e.se for _, e in series]
    verdict: dict = {}
    if min(ps) > 0:
        fit = fit_rate(ts, ps, ses)
        half = len(ts) // 2
        upper_fit = fit_rate(ts[half:], ps[half:], ses[half:]) if len(ts) - half >= 2 else None
        spread, comp = compensated_spread(series, cfg.rho)
        verdict = {"fit": fit.to_dict(), "upper_half_fit": upper_fit,
                   "slope_ok": bool(abs(fit.slope + cfg.rho) <= 0.1),
                   "compensated": comp, "compensated_spread_upper_half": spread,
                   "flat": bool(spread < 1.3)}
    else:
        verdict = {"fit": None, "note": "zero estimate on the grid; no fit"}
    if not met:
        verdict["annotation"] = "hypothesis unmet"
    return ExperimentResult("critical", cfg, pre, series, verdict, met)


def run_annealed(cfg: ExperimentConfig) -> ExperimentResult:
    return ExperimentResult("annealed", cfg, {}, _series(cfg), {}, True)


def run_grey(cfg: ExperimentConfig) -> ExperimentResult:
    rep = grey_classify(cfg.mech)
    return ExperimentResult("grey", cfg, {}, [], {"grey": rep},
                            rep.verdict != Verdict.INCONCLUSIVE)


def run_conditions(cfg: ExperimentConfig) -> ExperimentResult:
    mech, env = cfg.mech, cfg.env
    reps = {"grey": grey_classify(mech), "E1": check_condition_E1(mech, cfg.lam),
            "B": check_condition_B(mech)}
    try:
        reps["Axi"] = check_condition_Axi(mech, env, cfg.lam, cfg.axi_a)
    except ValueError as exc:
        reps["Axi"] = {"condition": "Axi", "verdict": "ill-posed", "reason": str(exc)}
    c_params = cfg.condition_c
    if c_params is None:
        st = [c for c in mech.components if isinstance(c, Stable)]
        c_params = [st[0].beta, st[0].C] if st else None
    if c_params is not None:
        reps["C"] = check_condition_C(mech, *c_params)
    return ExperimentResult("conditions", cfg, {}, [], reps, True)


def run_fluctuation(cfg: ExperimentConfig) -> ExperimentResult:
    env = cfg.env
    t_end = cfg.spitzer_t
    rho = spitzer_rho(env, np.linspace(0.0, t_end, grid_points(t_end, cfg.dt)), cfg.n_paths, cfg.seed,
                      threads=cfg.threads)
    surv = survival_exponent(env, cfg.x, cfg.t_grid, cfg.n_paths, cfg.seed + 1, dt=cfg.dt,
                             threads=cfg.threads)
    ren = empirical_renewal(env, "ascending", cfg.x_grid, cfg.n_chains, cfg.seed + 2,
                            dt=cfg.ladder_dt, threads=cfg.threads)
    mart = None
    if not env.jumps:
        mart = martingale_check(env, cfg.x, cfg.t_grid, cfg.n_paths, cfg.seed + 3, dt=cfg.dt,
                                threads=cfg.threads)
    verdict = {"rho_hat": rho, "survival": surv, "renewal": ren, "martingale": mart}
    series = [(t, McEstimate(p, s, (p - 1.96 * s, p + 1.96 * s), cfg.n_paths, cfg.seed + 1))
              for t, p, s in zip(surv.t, surv.prob, surv.se)]
    return ExperimentResult("fluctuation", cfg, {}, series, verdict, True)


def run_crosscheck(cfg: ExperimentConfig) -> ExperimentResult:
    t = cfg.t_grid[-1]
    rep = crosscheck_nonexplosion(cfg.mech, cfg.env, cfg.z, t, cfg.n_paths, cfg.eps_b, cfg.cap,
                                  cfg.seed, caps=cfg.caps, threads=cfg.threads)
    series = [(t, rep.direct[cfg.cap]), (t, rep.quenched)]
    return ExperimentResult("crosscheck", cfg, {}, series, {"crosscheck": rep}, True)


RUNNERS = {"subcritical": run_subcritical, "critical": run_critical, "grey": run_grey,
           "conditions": run_conditions, "fluctuation": run_fluctuation,
           "crosscheck": run_crosscheck, "annealed": run_annealed}


def run(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.kind](cfg)


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------


def series_csv(series) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "estimate", "se", "n_effective"])
    for t, e in series:
        w.writerow([repr(float(t)), repr(float(e.mean)), repr(float(e.se)), e.n])
    return buf.getvalue()


def write_outputs(result: ExperimentResult, out_dir) -> tuple[Path, Path]:
    """Write ``<kind>.csv`` and the ``<kind>.json`` sidecar; both are byte-stable."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{result.kind}.csv"
    json_path = out / f"{result.kind}.json"
    csv_path.write_text(series_csv(result.series))
    json_path.write_text(json.dumps(result.to_dict(), sort_keys=True, indent=2) + "\n")
    return csv_path, json_path

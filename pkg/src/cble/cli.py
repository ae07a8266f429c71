"""Command-line interface.

Exit codes: 0 success, 2 ran but a hypothesis check failed, 3 numerical failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from ._integrals import QuadratureError
from .exp_functional import grid_points
from .levy_env import LevyTriplet, sample_path
from .mc_harness import ExperimentConfig, run, write_outputs
from .quenched_flow import NonStabilizingError, StepSizeError, solve_backward

EXIT_OK, EXIT_HYPOTHESIS, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (QuadratureError, StepSizeError, NonStabilizingError, FloatingPointError)


def _load(config, kind, seed, threads) -> ExperimentConfig:
    data = json.loads(Path(config).read_text()) if config else {}
    if kind is not None:
        data["kind"] = kind
    if seed is not None:
        data["seed"] = seed
    if threads is not None:
        data["threads"] = threads
    return ExperimentConfig.from_dict(data)


def common(f):
    f = click.option("--threads", type=int, default=None, help="Worker threads.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True)(f)
    f = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None)(f)
    f = click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="JSON experiment config.")(f)
    return f


def _experiment(kind, config, seed, out, threads):
    try:
        cfg = _load(config, kind, seed, threads)
        result = run(cfg)
    except NUMERIC_ERRORS as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    csv_path, json_path = write_outputs(result, out)
    click.echo(f"wrote {csv_path} and {json_path}")
    for t, e in result.series:
        click.echo(f"t={t:g}  estimate={e.mean:.6g}  se={e.se:.3g}")
    sys.exit(EXIT_OK if result.hypotheses_met else EXIT_HYPOTHESIS)


@click.group()
def main():
    """Branching processes in Lévy environments: simulation and numerics."""


def _register(name, kind, doc):
    @common
    def cmd(config, seed, out, threads):
        _experiment(kind, config, seed, out, threads)

    cmd.__doc__ = doc
    main.command(name)(cmd)


_register("mc-nonexplosion", "annealed", "Annealed non-explosion probabilities on the t-grid.")
_register("run-subcritical", "subcritical", "Subcritical regime: series and plateau verdict.")
_register("run-critical", "critical", "Critical regime: series, power-law fit, flatness check.")
_register("grey-check", "grey", "Conservative/explosive classification of the mechanism.")
_register("conditions-check", "conditions", "All integral-condition reports for the mechanism.")
_register("fluctuation", "fluctuation", "Spitzer index, survival exponent, renewal, martingale.")
_register("crosscheck", "crosscheck", "Direct SDE simulation against the quenched route.")


@main.command("sample-env")
@common
@click.option("--start", type=float, default=0.0, show_default=True)
@click.option("--horizon", type=float, default=1.0, show_default=True)
@click.option("--grid-n", type=int, default=1001, show_default=True)
@click.option("--index", type=int, default=0, show_default=True, help="Path index (substream).")
def sample_env(config, seed, out, threads, start, horizon, grid_n, index):
    """Sample one environment path and write it as CSV."""
    cfg = _load(config, None, seed, threads)
    path = sample_path(LevyTriplet.from_dict(cfg.triplet), start, horizon, grid_n, cfg.seed, index)
    Path(out).mkdir(parents=True, exist_ok=True)
    target = Path(out) / "env_path.csv"
    path.to_csv(target)
    meta = {"triplet": cfg.triplet, "seed": cfg.seed, "index": index, "start": start,
            "horizon": horizon, "grid_n": grid_n, "jumps": path.jump_records}
    (Path(out) / "env_path.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    click.echo(f"wrote {target}")


@main.command("solve-quenched")
@common
@click.option("--t", "t", type=float, default=1.0, show_default=True)
@click.option("--lam", type=float, default=1.0, show_default=True)
@click.option("--index", type=int, default=0, show_default=True)
@click.option("--method", type=click.Choice(["auto", "closed", "rk"]), default="auto")
def solve_quenched(config, seed, out, threads, t, lam, index, method):
    """Solve the backward equation along one sampled path and write (s, v)."""
    cfg = _load(config, None, seed, threads)
    path = sample_path(cfg.env, 0.0, t, grid_points(t, cfg.dt), cfg.seed, index)
    try:
        sol = solve_backward(cfg.mech, path, t, lam, method=method)
    except NUMERIC_ERRORS as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    Path(out).mkdir(parents=True, exist_ok=True)
    sol.to_csv(Path(out) / "quenched.csv")
    meta = {"lambda": lam, "t": t, "method": sol.method, "v0": sol.v0, "seed": cfg.seed,
            "index": index, "diagnostics": {k: v for k, v in sol.diagnostics.items()
                                            if not isinstance(v, np.ndarray)}}
    (Path(out) / "quenched.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    click.echo(f"v_t(0) = {sol.v0:.12g}")


if __name__ == "__main__":
    main()

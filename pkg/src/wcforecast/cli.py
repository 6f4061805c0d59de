"""Command line entry point: ``wcforecast <stage> ...``.

Exit codes: 0 success, 2 invalid input, 3 convergence failure, 4 internal
invariant violation.  Errors are printed as ``error [stage]: message``.
"""

from __future__ import annotations

import datetime as dt
import functools
import logging
import shutil
import sys
from pathlib import Path

import click

from . import pipeline, synthetic
from .errors import ForecastError


def _fail(exc: ForecastError) -> None:
    stage = getattr(exc, "stage", None)
    message = str(getattr(exc, "cause", exc))
    click.echo(f"error [{stage}]: {message}" if stage else f"error: {message}", err=True)
    sys.exit(exc.exit_code)


def handled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ForecastError as exc:
            _fail(exc)

    return wrapper


def _date(ctx, param, value):
    if value is None:
        return None
    try:
        return dt.date.fromisoformat(value)
    except ValueError:
        raise click.BadParameter(f"expected YYYY-MM-DD, got {value!r}") from None


def _half_period(ctx, param, value):
    if value == "auto":
        return None
    try:
        hp = float(value)
    except ValueError:
        raise click.BadParameter("a positive number of days or 'auto'") from None
    if hp <= 0:
        raise click.BadParameter("must be positive")
    return hp


PathArg = click.Path(dir_okay=False, path_type=Path)
seed_option = click.option("--seed", type=int, required=True, help="Seed for every random draw.")


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress (-vv for debug output).")
def main(verbose: int) -> None:
    """Hybrid World Cup forecasting pipeline."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--matches", type=PathArg, required=True)
@click.option("--date", "date", required=True, callback=_date, help="Reference date (exclusive), YYYY-MM-DD.")
@click.option("--half-period", default="500", callback=_half_period, show_default=True,
              help="Days after which a match weighs half; 'auto' picks it by rolling RPS.")
@click.option("--window-years", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--independent", is_flag=True, help="Fix the covariance at zero (independent Poisson).")
@click.option("--seed", type=int, default=None, help="Recorded for provenance; the fit itself is deterministic.")
@click.option("--out", type=PathArg, default="ratings.json", show_default=True)
@handled
def rate(matches, date, half_period, window_years, independent, seed, out):
    """Fit time-decayed Poisson team ratings."""
    model = pipeline.rate_stage(matches, date, out, half_period, window_years, seed, bivariate=not independent)
    click.echo(f"rated {len(model.strengths)} teams on {model.n_matches} matches -> {out}")


@main.command()
@click.option("--odds", type=PathArg, required=True)
@click.option("--tournament", type=PathArg, required=True)
@click.option("--year", type=int, default=None, help="Edition to use (default: latest in the file).")
@click.option("--runs", type=click.IntRange(min=1), default=100_000, show_default=True)
@click.option("--tol", type=float, default=5e-4, show_default=True)
@click.option("--max-iters", type=click.IntRange(min=0), default=50, show_default=True)
@seed_option
@click.option("--out", type=PathArg, default="consensus.json", show_default=True)
@handled
def consensus(odds, tournament, year, runs, tol, max_iters, seed, out):
    """Bookmaker consensus and inverse-simulated log-abilities."""
    res = pipeline.consensus_stage(odds, tournament, out, runs, seed, year, tol, max_iters)
    click.echo(f"consensus fit in {res.iterations} passes (deviation {res.fit_error:.2e}) -> {out}")


@main.command()
@click.option("--matches", type=PathArg, required=True)
@click.option("--covariates", type=PathArg, required=True)
@click.option("--ratings", type=PathArg, multiple=True, required=True, help="One per training year.")
@click.option("--consensus", type=PathArg, multiple=True, required=True, help="One per training year.")
@click.option("--seed", type=int, default=None, help="Recorded for provenance.")
@click.option("--out", type=PathArg, default="design.csv", show_default=True)
@handled
def design(matches, covariates, ratings, consensus, seed, out):
    """Two-rows-per-match training design."""
    rows = pipeline.design_stage(matches, covariates, ratings, consensus, out, seed)
    click.echo(f"{len(rows)} design rows -> {out}")


@main.command()
@click.option("--design", type=PathArg, required=True)
@click.option("--trees", type=click.IntRange(min=1), default=5000, show_default=True)
@click.option("--mtry", type=click.IntRange(min=1), default=None, help="Features per split (default ceil(p/3)).")
@click.option("--min-node", type=click.IntRange(min=1), default=5, show_default=True)
@seed_option
@click.option("--out", type=PathArg, default="forest.bin", show_default=True)
@handled
def train(design, trees, mtry, min_node, seed, out):
    """Grow the goal forest."""
    forest = pipeline.train_stage(design, out, trees, seed, mtry, min_node)
    click.echo(f"{forest.n_trees} trees on {forest.n_train} rows -> {out}")


@main.command()
@click.option("--model", type=PathArg, required=True)
@click.option("--design", type=PathArg, required=True)
@seed_option
@click.option("--out", type=PathArg, default=None, help="Also write the table to this file.")
@handled
def importance(model, design, seed, out):
    """Out-of-bag permutation importance of each feature."""
    click.echo(pipeline.importance_stage(model, design, seed, out), nl=False)


@main.command()
@click.option("--model", type=PathArg, required=True)
@click.option("--ratings", type=PathArg, required=True)
@click.option("--consensus", type=PathArg, required=True)
@click.option("--covariates", type=PathArg, required=True)
@click.option("--tournament", type=PathArg, required=True)
@click.option("--year", type=int, default=None)
@click.option("--runs", type=click.IntRange(min=1), default=100_000, show_default=True)
@seed_option
@click.option("--out", type=PathArg, default="report.csv", show_default=True)
@handled
def simulate(model, ratings, consensus, covariates, tournament, year, runs, seed, out):
    """Monte Carlo tournament simulation."""
    report = pipeline.simulate_stage(model, ratings, consensus, covariates, tournament, out, runs, seed, year)
    click.echo(f"{report.n_runs} runs -> {out}")


@main.command("pipeline")
@click.option("--matches", type=PathArg, default=None)
@click.option("--covariates", type=PathArg, default=None)
@click.option("--odds", type=PathArg, default=None)
@click.option("--tournament", type=PathArg, default=None)
@click.option("--fixtures", is_flag=True, help="Use the bundled synthetic inputs for missing paths.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@seed_option
@click.option("--half-period", default="500", callback=_half_period, show_default=True)
@click.option("--window-years", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--consensus-runs", type=click.IntRange(min=1), default=100_000, show_default=True)
@click.option("--trees", type=click.IntRange(min=1), default=5000, show_default=True)
@click.option("--runs", type=click.IntRange(min=1), default=100_000, show_default=True)
@click.option("--year", type=int, default=None, help="Target edition (default: latest).")
@handled
def pipeline_cmd(matches, covariates, odds, tournament, fixtures, out_dir, seed, half_period, window_years,
                 consensus_runs, trees, runs, year):
    """Run rate, consensus, design, train, importance and simulate in order."""
    given = {"matches": matches, "covariates": covariates, "odds": odds, "tournament": tournament}
    if fixtures:
        bundled = synthetic.bundled_fixture_dir()
        for role, name in zip(given, synthetic.FIXTURE_FILES):
            given[role] = given[role] or bundled / name
    absent = [f"--{role}" for role, p in given.items() if p is None]
    if absent:
        raise click.UsageError(f"missing {', '.join(absent)} (or pass --fixtures)")
    cfg = pipeline.PipelineConfig(out_dir=out_dir, seed=seed, half_period=half_period,
                                  window_years=window_years, consensus_runs=consensus_runs, trees=trees,
                                  n_runs=runs, year=year, **given)
    artifacts = pipeline.run_pipeline(cfg)
    for name in sorted(artifacts):
        click.echo(f"wrote {artifacts[name]}")


@main.command()
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--seed", type=int, default=None,
              help="Regenerate with this seed instead of copying the bundled set.")
@handled
def fixtures(out_dir, seed):
    """Write the synthetic input files."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if seed is None:
        for name in synthetic.FIXTURE_FILES:
            shutil.copyfile(synthetic.bundled_fixture_dir() / name, out_dir / name)
    else:
        synthetic.generate_fixtures(out_dir, seed)
    click.echo(f"fixtures -> {out_dir}")


if __name__ == "__main__":
    main()

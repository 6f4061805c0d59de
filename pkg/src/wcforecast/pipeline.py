"""Pipeline stages as plain functions, shared by the CLI and :func:`run_pipeline`.

Every stage reads its inputs from files, writes exactly one artifact and
records provenance in it: the seed and the SHA-256 of every input, keyed by
the input's role rather than its path so that artifacts do not depend on
where files live.
"""

from __future__ import annotations

import contextlib
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import platform
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .consensus import InverseConfig, bookmaker_consensus, load_consensus, require_converged, save_consensus
from .design import build_design, design_matrix, design_response, read_design, write_design
from .errors import DataError, ForecastError
from .forest import ForestConfig, fit_forest, load_forest, oob_permutation_deltas, save_forest
from .ingest import (
    covariates_by_key, load_covariates, load_matches, load_odds, load_tournament, load_tournaments,
    subtract_years,
)
from .rating import (
    DEFAULT_HALF_PERIOD_GRID, DecayConfig, OptimizerSettings, fit_ratings, load_model, save_model,
    tune_half_period, with_metadata,
)
from .tournament import HybridModel, monte_carlo

logger = logging.getLogger(__name__)

STAGE_ORDER = ("rate", "consensus", "design", "train", "importance", "simulate")


class StageError(ForecastError):
    """A pipeline stage failed; carries the stage name and the exit code of the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except ForecastError as exc:
        raise StageError(name, exc) from exc
    except OSError as exc:
        raise StageError(name, DataError(f"{exc.strerror or exc}: {exc.filename}")) from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _require(path, role: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{role} file not found: {path}")
    return path


def provenance(seed: int | None, inputs: dict) -> dict:
    return {
        "seed": seed,
        "inputs": {role: sha256_file(p) for role, p in sorted(inputs.items())},
        "wcforecast_version": __version__,
    }


def provenance_lines(prov: dict) -> list[str]:
    lines = [f"wcforecast {prov['wcforecast_version']}", f"seed: {prov['seed']}"]
    lines += [f"sha256 {role}: {digest}" for role, digest in prov["inputs"].items()]
    return lines


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# stages


def rate_stage(matches, date: dt.date, out, half_period: float | None = 500.0, window_years: int = 8,
               seed: int | None = None, bivariate: bool = True, tune_years: int = 2):
    """Fit ratings on the ``window_years`` before ``date``; ``half_period=None`` tunes it first."""
    with stage("rate"):
        matches = _require(matches, "matches")
        if half_period is None:
            history = load_matches(matches, date, window_years + tune_years)
            search = tune_half_period(history, DEFAULT_HALF_PERIOD_GRID,
                                      eval_window=(subtract_years(date, tune_years), date),
                                      window_years=window_years)
            half_period = search.best
            logger.info("tuned half period: %g days", half_period)
        records = load_matches(matches, date, window_years)
        model = fit_ratings(records, DecayConfig(date, half_period), OptimizerSettings(bivariate=bivariate))
        model = with_metadata(model, tournament_year=date.year, window_years=window_years,
                              bivariate=bivariate, provenance=provenance(seed, {"matches": matches}))
        save_model(model, out)
        return model


def consensus_stage(odds, tournament, out, runs: int = 100_000, seed: int = 0, year: int | None = None,
                    tol: float = 5e-4, max_iters: int = 50):
    with stage("consensus"):
        odds = _require(odds, "odds")
        tournament = _require(tournament, "tournament")
        spec = load_tournament(tournament, year)
        sheets = load_odds(odds, year=spec.year)
        if not sheets:
            raise DataError(f"no odds for {spec.year}")
        cfg = InverseConfig(runs_per_iter=runs, tol=tol, max_iters=max_iters, seed=seed)
        books, result = bookmaker_consensus(sheets, spec, cfg)
        require_converged(result)
        meta = {
            "year": spec.year,
            "runs": runs,
            "bookmakers": {b.bookmaker: {"delta": b.delta, "overround": b.overround} for b in books},
            "provenance": provenance(seed, {"odds": odds, "tournament": tournament}),
        }
        result = replace(result, metadata={**result.metadata, **meta})
        save_consensus(result, out)
        return result


def _artifact_year(obj, what: str) -> int:
    year = obj.metadata.get("tournament_year", obj.metadata.get("year"))
    if year is None:
        raise DataError(f"{what} artifact does not record its tournament year")
    return int(year)


def design_stage(matches, covariates, ratings: Sequence, consensus: Sequence, out, seed: int | None = None):
    """Training rows from every stage-tagged match of the years covered by ``ratings``."""
    with stage("design"):
        matches = _require(matches, "matches")
        covariates = _require(covariates, "covariates")
        inputs = {"matches": matches, "covariates": covariates}
        pois, odds = {}, {}
        for p in ratings:
            model = load_model(_require(p, "ratings"))
            y = _artifact_year(model, "ratings")
            inputs[f"ratings_{y}"] = p
            pois.update({(y, t): r for t, r in model.strengths.items()})
        for p in consensus:
            res = load_consensus(_require(p, "consensus"))
            y = _artifact_year(res, "consensus")
            inputs[f"consensus_{y}"] = p
            odds.update({(y, t): a for t, a in res.log_abilities.items()})
        years = {y for y, _ in pois} & {y for y, _ in odds}
        train = [m for m in load_matches(matches) if m.stage is not None and m.date.year in years]
        if not train:
            raise DataError(f"no stage-tagged tournament matches for {sorted(years) or 'any year'}")
        rows = build_design(train, covariates_by_key(load_covariates(covariates)), pois, odds)
        write_design(rows, out, provenance_lines(provenance(seed, inputs)))
        return rows


def train_stage(design, out, trees: int = 5000, seed: int = 0, mtry: int | None = None, min_node: int = 5):
    with stage("train"):
        design = _require(design, "design")
        forest = fit_forest(read_design(design), ForestConfig(n_trees=trees, mtry=mtry, min_node=min_node, seed=seed))
        forest.metadata["provenance"] = provenance(seed, {"design": design})
        save_forest(forest, out)
        return forest


def importance_stage(model, design, seed: int, out=None):
    """OOB permutation importance; returns the CSV text and writes it when ``out`` is given."""
    with stage("importance"):
        model, design = _require(model, "model"), _require(design, "design")
        forest = load_forest(model)
        rows = read_design(design)
        result = oob_permutation_deltas(forest, design_matrix(rows), design_response(rows), seed)
        mean, se = result.mean, result.stderr
        order = sorted(range(len(mean)), key=lambda i: (-mean[i], result.features[i]))
        buf = io.StringIO()
        for line in provenance_lines(provenance(seed, {"model": model, "design": design})):
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("feature", "importance", "stderr"))
        for i in order:
            w.writerow((result.features[i], f"{mean[i]:.6g}", f"{se[i]:.6g}"))
        text = buf.getvalue()
        if out is not None:
            Path(out).write_text(text, encoding="utf-8")
        return text


def simulate_stage(model, ratings, consensus, covariates, tournament, out, runs: int = 100_000,
                   seed: int = 0, year: int | None = None):
    with stage("simulate"):
        paths = {"model": model, "ratings": ratings, "consensus": consensus,
                 "covariates": covariates, "tournament": tournament}
        paths = {role: _require(p, role) for role, p in paths.items()}
        spec = load_tournament(paths["tournament"], year)
        rating_model = load_model(paths["ratings"])
        cons = load_consensus(paths["consensus"])
        for what, obj in (("ratings", rating_model), ("consensus", cons)):
            y = obj.metadata.get("tournament_year", obj.metadata.get("year"))
            if y is not None and int(y) != spec.year:
                raise DataError(f"{what} artifact is for {y}, tournament is {spec.year}")
        cov = {t: c for (y, t), c in covariates_by_key(load_covariates(paths["covariates"])).items()
               if y == spec.year}
        missing = [t for t in spec.teams if t not in cov]
        if missing:
            raise DataError(f"no {spec.year} covariates for {', '.join(missing)}")
        hybrid = HybridModel(load_forest(paths["model"]), {t: cov[t] for t in spec.teams},
                             rating_model.strengths, cons.log_abilities)
        report = monte_carlo(hybrid, spec, runs, seed)
        prov = provenance(seed, paths)
        text = report.to_csv(provenance_lines(prov) + [f"runs: {runs}", f"tournament: {spec.year}"])
        Path(out).write_text(text, encoding="utf-8")
        return report


# ---------------------------------------------------------------------------
# whole pipeline


@dataclass
class PipelineConfig:
    matches: Path
    covariates: Path
    odds: Path
    tournament: Path
    out_dir: Path
    seed: int
    half_period: float | None = 500.0
    window_years: int = 8
    consensus_runs: int = 100_000
    consensus_tol: float = 5e-4
    consensus_max_iters: int = 50
    trees: int = 5000
    mtry: int | None = None
    min_node: int = 5
    n_runs: int = 100_000
    year: int | None = None
    extra: dict = field(default_factory=dict)

    def check_inputs(self) -> None:
        # each missing file is reported against the first stage reading it
        for role, first_stage in (("matches", "rate"), ("odds", "consensus"), ("tournament", "consensus"),
                                  ("covariates", "design")):
            with stage(first_stage):
                _require(getattr(self, role), role)


def component_versions() -> dict:
    from importlib.metadata import version

    deps = ("numpy", "scipy", "numba", "click")
    return {"wcforecast": __version__, "python": platform.python_version(), **{d: version(d) for d in deps}}


def run_pipeline(cfg: PipelineConfig) -> dict[str, Path]:
    """Run every stage in order; returns the written artifacts by name."""
    cfg.check_inputs()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with stage("consensus"):
        editions = load_tournaments(cfg.tournament)
        target = cfg.year if cfg.year is not None else max(editions)
        if target not in editions:
            raise DataError(f"tournament file has no {target} edition")
    for y, spec in editions.items():
        if spec.start_date is None:
            with stage("rate"):
                raise DataError(f"tournament {y} has no start_date to anchor its ratings")
    training = sorted(y for y in editions if y < target)
    if not training:
        with stage("design"):
            raise DataError(f"no earlier edition than {target} to train on")

    artifacts = {}

    def name(kind: str, y: int) -> str:
        return f"{kind}.json" if y == target else f"{kind}_{y}.json"

    for y in training + [target]:
        spec = editions[y]
        p = out / name("ratings", y)
        rate_stage(cfg.matches, spec.start_date, p, cfg.half_period, cfg.window_years, cfg.seed)
        artifacts[p.name] = p
        p = out / name("consensus", y)
        consensus_stage(cfg.odds, cfg.tournament, p, cfg.consensus_runs, cfg.seed, y,
                        cfg.consensus_tol, cfg.consensus_max_iters)
        artifacts[p.name] = p

    design = out / "design.csv"
    design_stage(cfg.matches, cfg.covariates, [out / name("ratings", y) for y in training],
                 [out / name("consensus", y) for y in training], design, cfg.seed)
    forest = out / "forest.bin"
    train_stage(design, forest, cfg.trees, cfg.seed, cfg.mtry, cfg.min_node)
    importance = out / "importance.csv"
    importance_stage(forest, design, cfg.seed, importance)
    report = out / "report.csv"
    simulate_stage(forest, out / "ratings.json", out / "consensus.json", cfg.covariates, cfg.tournament,
                   report, cfg.n_runs, cfg.seed, target)
    artifacts.update({p.name: p for p in (design, forest, importance, report)})

    settings = {k: (str(v) if isinstance(v, Path) else v) for k, v in asdict(cfg).items()
                if k not in ("matches", "covariates", "odds", "tournament", "out_dir", "extra")}
    manifest = {
        "seed": cfg.seed,
        "target_year": target,
        "training_years": training,
        "inputs": {role: sha256_file(getattr(cfg, role)) for role in ("matches", "covariates", "odds", "tournament")},
        "config": settings,
        "versions": component_versions(),
        "artifacts": {k: sha256_file(p) for k, p in sorted(artifacts.items())},
    }
    _write_json(manifest, out / "manifest.json")
    artifacts["manifest.json"] = out / "manifest.json"
    return artifacts

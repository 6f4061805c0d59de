"""Synthetic input files that exercise the whole pipeline.

A pool of 32 national teams receives latent strengths.  Match results are
drawn from the bivariate Poisson model with those strengths, the 2011 and
2015 World Cups are played out with the tournament rules, covariates are
noisy functions of strength and bookmakers quote odds around champion
probabilities from a Bradley-Terry simulation.  The 2019 edition uses the
real group draw; everything else is invented.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from importlib.resources import files
from itertools import combinations
from pathlib import Path

import numpy as np

from .consensus import simulate_bt_tournament
from .ingest import (
    GROUP_LABELS, MatchRecord, OddsSheet, TeamCovariates, load_tournament, parse_tournament,
    tournament_to_dict, write_covariates, write_matches, write_odds,
)
from .tournament import EXTRA_TIME_FACTOR, qualify_knockout, rank_group

DEFAULT_SEED = 2019
FIXTURE_FILES = ("matches.csv", "covariates.csv", "odds.csv", "tournament.json")

CONFEDERATION_OF = {
    "France": "UEFA", "South Korea": "AFC", "Norway": "UEFA", "Nigeria": "CAF",
    "Germany": "UEFA", "China PR": "AFC", "Spain": "UEFA", "South Africa": "CAF",
    "Australia": "AFC", "Italy": "UEFA", "Brazil": "CONMEBOL", "Jamaica": "CONCACAF",
    "England": "UEFA", "Scotland": "UEFA", "Argentina": "CONMEBOL", "Japan": "AFC",
    "Canada": "CONCACAF", "Cameroon": "CAF", "New Zealand": "OFC", "Netherlands": "UEFA",
    "United States": "CONCACAF", "Thailand": "AFC", "Chile": "CONMEBOL", "Sweden": "UEFA",
    "Colombia": "CONMEBOL", "Costa Rica": "CONCACAF", "Ecuador": "CONMEBOL", "Mexico": "CONCACAF",
    "Switzerland": "UEFA", "Ivory Coast": "CAF", "Equatorial Guinea": "CAF", "North Korea": "AFC",
}
HOSTS = {2011: "Germany", 2015: "Canada", 2019: "France"}
START_DATES = {2011: dt.date(2011, 6, 26), 2015: dt.date(2015, 6, 6), 2019: dt.date(2019, 6, 7)}
BOOKMAKERS = {"Northbet": 0.85, "Quotewise": 0.80, "Longshot": 0.75}


@dataclass(frozen=True)
class TruthParameters:
    intercept: float = 0.1
    home_effect: float = 0.3
    lambda_c: float = 0.1
    strength_sd: float = 0.6
    matches_per_year: int = 180
    first_year: int = 2003


def _bundled_2019():
    return load_tournament(files("wcforecast") / "data" / "wwc2019.json")


# rough prior order of strength; latent strengths scatter around it
PRIOR_ORDER = (
    "United States", "Germany", "France", "England", "Netherlands", "Sweden", "Canada", "Australia",
    "Japan", "Brazil", "North Korea", "Norway", "Spain", "China PR", "Italy", "South Korea",
    "Switzerland", "Scotland", "Colombia", "Mexico", "New Zealand", "Nigeria", "Chile", "Cameroon",
    "Costa Rica", "Argentina", "Thailand", "South Africa", "Ivory Coast", "Ecuador", "Jamaica",
    "Equatorial Guinea",
)


def _strengths(teams, rng, sd):
    prior = np.linspace(1.5 * sd, -1.5 * sd, len(PRIOR_ORDER))
    s = np.array([prior[PRIOR_ORDER.index(t)] for t in teams]) + rng.normal(0.0, 0.4 * sd, len(teams))
    s -= s.mean()
    slope = rng.normal(0.0, 0.03, len(teams))
    return dict(zip(teams, s)), dict(zip(teams, slope))


def _strength_at(base, slope, team, when: dt.date) -> float:
    return base[team] + slope[team] * (when.year - 2011)


def _bivariate_score(lam1, lam2, lam_c, rng) -> tuple[int, int]:
    c = rng.poisson(lam_c)
    return int(rng.poisson(lam1) + c), int(rng.poisson(lam2) + c)


def _draw_editions(teams, base, rng, spec2019):
    """Synthetic 2011 and 2015 draws; the host heads group A."""
    specs = {2019: spec2019}
    for year in (2011, 2015):
        host = HOSTS[year]
        others = [t for t in teams if t != host]
        score = np.array([base[t] for t in others]) + rng.normal(0, 0.4, len(others))
        entrants = [others[i] for i in np.argsort(-score)[:23]]
        order = [entrants[i] for i in rng.permutation(23)]
        pots = [host] + order
        groups = {g: pots[4 * k:4 * k + 4] for k, g in enumerate(GROUP_LABELS)}
        obj = tournament_to_dict(spec2019)
        obj.update(year=year, start_date=START_DATES[year].isoformat(), groups=groups)
        specs[year] = parse_tournament(obj)
    return specs


def _play_world_cup(spec, base, slope, truth, rng) -> list[MatchRecord]:
    host = HOSTS[spec.year]
    start = spec.start_date
    records = []

    def fixture(a, b, day, stage):
        if b == host:
            a, b = b, a
        s_a = _strength_at(base, slope, a, day)
        s_b = _strength_at(base, slope, b, day)
        home = truth.home_effect if a == host else 0.0
        lam_a = np.exp(truth.intercept + s_a - s_b + home)
        lam_b = np.exp(truth.intercept + s_b - s_a)
        ga, gb = _bivariate_score(lam_a, lam_b, truth.lambda_c, rng)
        if stage == "knockout" and ga == gb:
            ga += int(rng.poisson(EXTRA_TIME_FACTOR * lam_a))
            gb += int(rng.poisson(EXTRA_TIME_FACTOR * lam_b))
        records.append(MatchRecord(day, a, b, ga, gb, host, neutral=host not in (a, b), stage=stage))
        if ga != gb:
            return a if ga > gb else b
        return (a, b)[int(rng.random() < 0.5)]

    group_results = {}
    for k, (g, members) in enumerate(spec.groups.items()):
        results = []
        for m, (a, b) in enumerate(combinations(members, 2)):
            day = start + dt.timedelta(days=(k + 2 * m) % 12)
            fixture(a, b, day, "group")
            r = records[-1]
            results.append((r.home_team, r.away_team, r.home_goals, r.away_goals))
        group_results[g] = rank_group(members, results, rng, group=g)
    r16 = qualify_knockout(group_results, spec, rng)
    winners = [fixture(a, b, start + dt.timedelta(days=14), "knockout") for a, b in r16.pairings]
    for offset, rnd in ((19, spec.bracket.quarter_finals), (24, spec.bracket.semi_finals),
                        (28, spec.bracket.final)):
        winners = [fixture(winners[i], winners[j], start + dt.timedelta(days=offset), "knockout")
                   for i, j in rnd]
    return records


def _friendlies(teams, base, slope, truth, rng, end: dt.date) -> list[MatchRecord]:
    first = dt.date(truth.first_year, 1, 1)
    span = (end - first).days
    n = truth.matches_per_year * (end.year - truth.first_year + 1)
    confed = np.array([CONFEDERATION_OF[t] for t in teams])
    out = []
    for _ in range(n):
        day = first + dt.timedelta(days=int(rng.integers(0, span)))
        i = int(rng.integers(len(teams)))
        same = np.flatnonzero((confed == confed[i]) & (np.arange(len(teams)) != i))
        if rng.random() < 0.6 and len(same):
            j = int(rng.choice(same))
        else:
            j = int(rng.choice([k for k in range(len(teams)) if k != i]))
        a, b = teams[i], teams[j]
        neutral = rng.random() < 0.2
        country = teams[int(rng.integers(len(teams)))] if neutral else a
        if neutral and country in (a, b):
            neutral = False
            country = a
        s_a = _strength_at(base, slope, a, day)
        s_b = _strength_at(base, slope, b, day)
        lam_a = np.exp(truth.intercept + s_a - s_b + (0.0 if neutral else truth.home_effect))
        lam_b = np.exp(truth.intercept + s_b - s_a)
        ga, gb = _bivariate_score(lam_a, lam_b, truth.lambda_c, rng)
        out.append(MatchRecord(day, a, b, ga, gb, country, neutral))
    return out


def _covariates(spec, base, slope, rng) -> list[TeamCovariates]:
    host = HOSTS[spec.year]
    when = spec.start_date
    s = {t: _strength_at(base, slope, t, when) for t in CONFEDERATION_OF}
    noisy = {t: v + rng.normal(0, 0.3) for t, v in s.items()}
    rank = {t: r + 1 for r, t in enumerate(sorted(noisy, key=noisy.get, reverse=True))}
    out = []
    for t in spec.teams:
        conf = CONFEDERATION_OF[t]

        def share(mean):
            return round(float(np.clip(mean + rng.normal(0, 0.05), 0.0, 1.0)), 3)

        top = share(0.2 + 0.1 * s[t])
        out.append(TeamCovariates(
            tournament_year=spec.year, team=t,
            gdp_ratio=round(float(np.exp(rng.normal(0.3 * s[t], 0.6))), 4),
            population_ratio=round(float(np.exp(rng.normal(0.0, 1.0))), 4),
            fifa_rank=rank[t], host=t == host, same_continent=conf == CONFEDERATION_OF[host],
            confederation=conf, max_teammates=top, second_max_teammates=min(top, share(0.12 + 0.05 * s[t])),
            avg_age=round(float(25.5 + 0.5 * s[t] + rng.normal(0, 1.0)), 2),
            cl_players=share(0.1 + 0.1 * s[t]) if conf == "UEFA" else share(0.01),
            mls_players=share(0.25) if conf == "CONCACAF" else share(0.02),
            legionnaires=share(0.35 - 0.1 * s[t]),
        ))
    return out


def _odds(spec, base, slope, rng, seed) -> list[OddsSheet]:
    s = np.array([_strength_at(base, slope, t, spec.start_date) for t in spec.teams])
    champ = simulate_bt_tournament(dict(zip(spec.teams, np.exp(1.5 * s))), spec, runs=20_000, seed=seed)
    p = np.maximum(np.array([champ[t] for t in spec.teams]), 2e-4)
    p /= p.sum()
    sheets = []
    for name, delta in BOOKMAKERS.items():
        noisy = np.exp(np.log(p) + rng.normal(0, 0.15, len(p)))
        noisy /= noisy.sum()
        quotes = np.round(1.0 + delta * (1.0 / noisy - 1.0), 2)
        sheets.append(OddsSheet(name, dict(zip(spec.teams, quotes.tolist())), year=spec.year))
    return sheets


def generate_fixtures(out_dir, seed: int = DEFAULT_SEED, truth: TruthParameters | None = None) -> dict:
    """Write ``matches.csv``, ``covariates.csv``, ``odds.csv`` and ``tournament.json``.

    Returns the written paths keyed by file role plus the true strengths.
    """
    truth = truth or TruthParameters()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    teams = sorted(CONFEDERATION_OF)
    base, slope = _strengths(teams, rng, truth.strength_sd)
    specs = _draw_editions(teams, base, rng, _bundled_2019())

    matches = _friendlies(teams, base, slope, truth, rng, end=START_DATES[2019] - dt.timedelta(days=1))
    for year in (2011, 2015):
        matches += _play_world_cup(specs[year], base, slope, truth, rng)
    matches.sort(key=lambda m: (m.date, m.home_team, m.away_team))

    covariates, sheets = [], []
    for k, year in enumerate(sorted(specs)):
        covariates += _covariates(specs[year], base, slope, rng)
        sheets += _odds(specs[year], base, slope, rng, seed=seed + k)

    paths = {role: out / name for role, name in zip(("matches", "covariates", "odds", "tournament"), FIXTURE_FILES)}
    write_matches(matches, paths["matches"])
    write_covariates(covariates, paths["covariates"])
    write_odds(sheets, paths["odds"])
    editions = {"editions": [tournament_to_dict(specs[y]) for y in sorted(specs)]}
    paths["tournament"].write_text(json.dumps(editions, indent=2) + "\n", encoding="utf-8")
    return {"paths": paths, "strengths": {t: float(v) for t, v in base.items()}}


def bundled_fixture_dir() -> Path:
    """Directory of the fixture set shipped with the package."""
    return Path(str(files("wcforecast") / "data" / "fixtures"))

"""Training design for the goal forest: two rows per match.

Each match yields one row per team, with the team's goals as the response.
Metric covariates enter as differences seen from the named team, so the two
rows of a match carry exactly negated difference vectors.  Host, continent
and confederation stay per-team variables and appear once for the team and
once for its opponent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .ingest import CONFEDERATIONS, MatchRecord, TeamCovariates

# names of the signed differences, in column order
DIFF_FEATURES = (
    "pois_abil", "odds_abil", "fifa_rank", "age", "gdp", "population", "max_teammates",
    "second_max_teammates", "cl_players", "mls_players", "legionnaires",
)
FEATURE_NAMES = (
    ("groupstage",) + DIFF_FEATURES
    + ("host", "host_oppo", "continent", "continent_oppo", "confed", "confed_oppo")
)
CATEGORICAL = frozenset({"confed", "confed_oppo"})

_COVARIATE_ATTR = {
    "fifa_rank": "fifa_rank", "age": "avg_age", "gdp": "gdp_ratio", "population": "population_ratio",
    "max_teammates": "max_teammates", "second_max_teammates": "second_max_teammates",
    "cl_players": "cl_players", "mls_players": "mls_players", "legionnaires": "legionnaires",
}


@dataclass(frozen=True)
class FeatureRow:
    team: str
    opponent: str
    groupstage: int
    numeric_diffs: tuple
    host: int
    host_oppo: int
    continent: int
    continent_oppo: int
    confed: str
    confed_oppo: str
    goals: int | None = None
    year: int | None = None

    def vector(self) -> list[float]:
        """Feature values in :data:`FEATURE_NAMES` order, categories as codes."""
        return ([float(self.groupstage)] + [float(v) for v in self.numeric_diffs]
                + [float(self.host), float(self.host_oppo), float(self.continent),
                   float(self.continent_oppo), float(CONFEDERATIONS.index(self.confed)),
                   float(CONFEDERATIONS.index(self.confed_oppo))])


def team_features(cov: TeamCovariates, pois_abil: float, odds_abil: float) -> dict:
    values = {"pois_abil": pois_abil, "odds_abil": odds_abil}
    for name, attr in _COVARIATE_ATTR.items():
        values[name] = getattr(cov, attr)
    return values


def pair_rows(team: str, opponent: str, team_values: Mapping, opp_values: Mapping,
              team_cov: TeamCovariates, opp_cov: TeamCovariates, groupstage: int,
              goals: tuple | None = None, year: int | None = None) -> tuple[FeatureRow, FeatureRow]:
    """Both rows of one fixture; the second row is the mirror image of the first."""
    if team == opponent:
        raise DataError(f"{team} cannot play itself")
    diffs = tuple(float(team_values[f]) - float(opp_values[f]) for f in DIFF_FEATURES)
    mirrored = tuple(float(opp_values[f]) - float(team_values[f]) for f in DIFF_FEATURES)
    g_team, g_opp = goals if goals is not None else (None, None)
    a = FeatureRow(team, opponent, groupstage, diffs, int(team_cov.host), int(opp_cov.host),
                   int(team_cov.same_continent), int(opp_cov.same_continent),
                   team_cov.confederation, opp_cov.confederation, g_team, year)
    b = FeatureRow(opponent, team, groupstage, mirrored, int(opp_cov.host), int(team_cov.host),
                   int(opp_cov.same_continent), int(team_cov.same_continent),
                   opp_cov.confederation, team_cov.confederation, g_opp, year)
    return a, b


def build_design(matches: Iterable[MatchRecord], covariates: Mapping[tuple[int, str], TeamCovariates],
                 pois_abil: Mapping[tuple[int, str], float],
                 odds_abil: Mapping[tuple[int, str], float]) -> list[FeatureRow]:
    """Two rows per tournament match (``stage`` must be ``group`` or ``knockout``).

    ``covariates``, ``pois_abil`` and ``odds_abil`` are keyed by
    ``(tournament year, team)``; the year of a match is its calendar year.
    """
    rows = []
    for m in matches:
        if m.stage is None:
            raise DataError(f"match {m.home_team}-{m.away_team} on {m.date} has no tournament stage")
        year = m.date.year
        per_team = []
        for t in (m.home_team, m.away_team):
            key = (year, t)
            if key not in covariates:
                raise DataError(f"no covariates for {t} in {year}")
            if key not in pois_abil:
                raise DataError(f"no Poisson ability for {t} in {year}")
            if key not in odds_abil:
                raise DataError(f"no bookmaker ability for {t} in {year}")
            per_team.append(team_features(covariates[key], pois_abil[key], odds_abil[key]))
        rows.extend(pair_rows(
            m.home_team, m.away_team, per_team[0], per_team[1],
            covariates[(year, m.home_team)], covariates[(year, m.away_team)],
            groupstage=int(m.stage == "group"), goals=(m.home_goals, m.away_goals), year=year,
        ))
    return rows


def design_matrix(rows: Sequence[FeatureRow]) -> np.ndarray:
    return np.array([r.vector() for r in rows], dtype=float).reshape(len(rows), len(FEATURE_NAMES))


def design_response(rows: Sequence[FeatureRow]) -> np.ndarray:
    if any(r.goals is None for r in rows):
        raise DataError("training rows need a goals response")
    return np.array([r.goals for r in rows], dtype=float)


DESIGN_COLUMNS = ("goals", "team", "opponent", "year") + FEATURE_NAMES


def write_design(rows: Iterable[FeatureRow], path, header_comments: Sequence[str] = ()) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DESIGN_COLUMNS)
        for r in rows:
            w.writerow([r.goals, r.team, r.opponent, r.year, r.groupstage,
                        *(repr(v) for v in r.numeric_diffs),
                        r.host, r.host_oppo, r.continent, r.continent_oppo, r.confed, r.confed_oppo])


def read_design(path) -> list[FeatureRow]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = [c for c in DESIGN_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path.name}: missing column(s) {', '.join(missing)}")
        for i, rec in enumerate(reader):
            try:
                rows.append(FeatureRow(
                    team=rec["team"], opponent=rec["opponent"], groupstage=int(rec["groupstage"]),
                    numeric_diffs=tuple(float(rec[f]) for f in DIFF_FEATURES),
                    host=int(rec["host"]), host_oppo=int(rec["host_oppo"]),
                    continent=int(rec["continent"]), continent_oppo=int(rec["continent_oppo"]),
                    confed=rec["confed"], confed_oppo=rec["confed_oppo"],
                    goals=int(rec["goals"]) if rec["goals"] != "" else None,
                    year=int(rec["year"]) if rec["year"] not in ("", "None") else None,
                ))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path.name} row {i + 1}: {exc}") from None
            if rows[-1].confed not in CONFEDERATIONS or rows[-1].confed_oppo not in CONFEDERATIONS:
                raise DataError(f"{path.name} row {i + 1}: unknown confederation")
    return rows

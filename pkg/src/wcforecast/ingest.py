"""Loading and validation of the raw inputs.

Four sources feed the pipeline:

* ``matches.csv`` with every international result (optionally tagged with a
  World Cup ``stage`` so the same file provides the forest training matches),
* ``covariates.csv`` with one row per team and tournament year,
* ``odds.csv`` with bookmakers' outright winner odds (long or wide layout),
* ``tournament.json`` with group draws and the knockout bracket.

All loaders return immutable records and raise :class:`DataError` with the
offending line number when a row cannot be accepted.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DataError

CONFEDERATIONS = ("CAF", "AFC", "UEFA", "CONCACAF", "OFC", "CONMEBOL")
STAGES = ("group", "knockout")

DEFAULT_ALIASES = {
    "USA": "United States",
    "US": "United States",
    "China": "China PR",
    "Korea Republic": "South Korea",
    "Korea DPR": "North Korea",
    "Côte d'Ivoire": "Ivory Coast",
    "Cote d'Ivoire": "Ivory Coast",
    "Holland": "Netherlands",
}

MATCH_COLUMNS = ("date", "home_team", "away_team", "home_goals", "away_goals", "country", "neutral")
COVARIATE_COLUMNS = (
    "year", "team", "gdp_ratio", "population_ratio", "fifa_rank", "host", "continent",
    "confederation", "max_teammates", "second_max_teammates", "avg_age", "cl_players",
    "mls_players", "legionnaires",
)
# counts divided by squad size upstream, so they must lie in [0, 1]
NORMALIZED_COUNTS = ("max_teammates", "second_max_teammates", "cl_players", "mls_players", "legionnaires")

_TRUE = {"yes", "true", "1", "y", "t"}
_FALSE = {"no", "false", "0", "n", "f"}


def canonical_team(name: str, aliases: Mapping[str, str] | None = None) -> str:
    name = name.strip()
    table = DEFAULT_ALIASES if aliases is None else aliases
    return table.get(name, name)


@dataclass(frozen=True)
class MatchRecord:
    date: dt.date
    home_team: str
    away_team: str
    home_goals: int
    away_goals: int
    venue_country: str
    neutral: bool
    stage: str | None = None

    @property
    def year(self) -> int:
        return self.date.year


@dataclass(frozen=True)
class TeamCovariates:
    tournament_year: int
    team: str
    gdp_ratio: float
    population_ratio: float
    fifa_rank: int
    host: bool
    same_continent: bool
    confederation: str
    max_teammates: float
    second_max_teammates: float
    avg_age: float
    cl_players: float
    mls_players: float
    legionnaires: float


@dataclass(frozen=True)
class OddsSheet:
    bookmaker: str
    quotes: Mapping[str, float]
    year: int | None = None

    @property
    def teams(self) -> frozenset:
        return frozenset(self.quotes)


@dataclass(frozen=True)
class Bracket:
    """Knockout structure of the 24-team format.

    ``round_of_16`` holds eight slot pairs.  Slots are ``"1A"`` (winner of
    group A), ``"2C"`` (runner-up of C) or ``"3:1B"`` (the qualified third-placed
    team drawn against the winner of group B).  ``third_place`` maps the sorted
    letters of the four qualifying third-placed groups to the assignment of
    those ``3:`` slots, e.g. ``{"ABCE": {"1A": "3C", "1B": "3A", ...}}``.
    Later rounds pair winner indices of the previous round.
    """

    round_of_16: tuple
    third_place: Mapping[str, Mapping[str, str]]
    quarter_finals: tuple
    semi_finals: tuple
    final: tuple


@dataclass(frozen=True)
class TournamentSpec:
    year: int
    groups: Mapping[str, tuple]
    bracket: Bracket
    start_date: dt.date | None = None

    @property
    def teams(self) -> list[str]:
        return [t for members in self.groups.values() for t in members]

    @property
    def group_of(self) -> dict[str, str]:
        return {t: g for g, members in self.groups.items() for t in members}


# ---------------------------------------------------------------------------
# small parsers


def _parse_bool(value: str, what: str, line: int) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise DataError(f"line {line}: cannot parse {what} flag {value!r} (expected yes/no)")


def _parse_date(value: str, line: int) -> dt.date:
    try:
        return dt.date.fromisoformat(value.strip())
    except ValueError:
        raise DataError(f"line {line}: unparseable date {value!r}") from None


def _parse_int(value: str, what: str, line: int) -> int:
    try:
        return int(value.strip())
    except ValueError:
        raise DataError(f"line {line}: {what} is not an integer: {value!r}") from None


def _parse_float(value: str, what: str, line: int) -> float:
    try:
        x = float(value.strip())
    except ValueError:
        raise DataError(f"line {line}: {what} is not a number: {value!r}") from None
    if not math.isfinite(x):
        raise DataError(f"line {line}: {what} must be finite, got {value!r}")
    return x


def _read_rows(path, required: Iterable[str]):
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        missing = [c for c in required if c not in header]
        if header and missing:
            raise DataError(f"{path.name}: missing column(s) {', '.join(missing)}")
        # +2: header is line 1 and enumerate starts at 0
        for i, row in enumerate(reader):
            if None in row or any(row.get(c) is None for c in header):
                raise DataError(f"{path.name} line {i + 2}: wrong number of fields")
            yield i + 2, header, row


def subtract_years(day: dt.date, years: int) -> dt.date:
    try:
        return day.replace(year=day.year - years)
    except ValueError:  # 29 February
        return day.replace(year=day.year - years, day=28)


# ---------------------------------------------------------------------------
# matches


def parse_match_row(row: Mapping[str, str], line: int, aliases=None) -> MatchRecord:
    home = canonical_team(row["home_team"], aliases)
    away = canonical_team(row["away_team"], aliases)
    if not home or not away:
        raise DataError(f"line {line}: empty team name")
    if home == away:
        raise DataError(f"line {line}: {home} cannot play itself")
    hg = _parse_int(row["home_goals"], "home_goals", line)
    ag = _parse_int(row["away_goals"], "away_goals", line)
    if hg < 0 or ag < 0:
        raise DataError(f"line {line}: negative goals ({hg}:{ag})")
    stage = (row.get("stage") or "").strip().lower() or None
    if stage is not None and stage not in STAGES:
        raise DataError(f"line {line}: unknown stage {stage!r}")
    return MatchRecord(
        date=_parse_date(row["date"], line),
        home_team=home,
        away_team=away,
        home_goals=hg,
        away_goals=ag,
        venue_country=canonical_team(row["country"], aliases),
        neutral=_parse_bool(row["neutral"], "neutral", line),
        stage=stage,
    )


def load_matches(path, reference_date: dt.date | None = None, window_years: int | None = None,
                 aliases=None) -> list[MatchRecord]:
    """Read ``matches.csv`` and keep the matches inside the look-back window.

    With ``reference_date`` given only matches with
    ``reference_date - window_years <= date < reference_date`` are returned.
    The result is sorted by date (stable with respect to file order).
    """
    if window_years is not None and window_years <= 0:
        raise DataError(f"window_years must be positive, got {window_years}")
    start = None
    if reference_date is not None and window_years is not None:
        start = subtract_years(reference_date, window_years)
    out = []
    for line, _, row in _read_rows(path, MATCH_COLUMNS):
        m = parse_match_row(row, line, aliases)
        if reference_date is not None and m.date >= reference_date:
            continue
        if start is not None and m.date < start:
            continue
        out.append(m)
    out.sort(key=lambda m: m.date)
    return out


def write_matches(records: Iterable[MatchRecord], path) -> None:
    records = list(records)
    with_stage = any(r.stage for r in records)
    cols = list(MATCH_COLUMNS) + (["stage"] if with_stage else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            row = [r.date.isoformat(), r.home_team, r.away_team, r.home_goals, r.away_goals,
                   r.venue_country, "yes" if r.neutral else "no"]
            if with_stage:
                row.append(r.stage or "")
            w.writerow(row)


# ---------------------------------------------------------------------------
# covariates


def load_covariates(path, aliases=None) -> list[TeamCovariates]:
    out = []
    seen = set()
    for line, _, row in _read_rows(path, COVARIATE_COLUMNS):
        for c in COVARIATE_COLUMNS:
            if not row[c].strip():
                raise DataError(f"line {line}: empty value in column {c!r}")
        confed = row["confederation"].strip().upper()
        if confed not in CONFEDERATIONS:
            raise DataError(f"line {line}: unknown confederation {row['confederation']!r}")
        values = {c: _parse_float(row[c], c, line) for c in
                  ("gdp_ratio", "population_ratio", "avg_age") + NORMALIZED_COUNTS}
        for c in NORMALIZED_COUNTS:
            if not 0.0 <= values[c] <= 1.0:
                raise DataError(f"line {line}: {c}={row[c]} outside [0, 1] "
                                "(counts must be divided by squad size)")
        if values["gdp_ratio"] < 0 or values["population_ratio"] < 0:
            raise DataError(f"line {line}: negative economic ratio")
        rank = _parse_int(row["fifa_rank"], "fifa_rank", line)
        if rank < 1:
            raise DataError(f"line {line}: fifa_rank must be >= 1, got {rank}")
        rec = TeamCovariates(
            tournament_year=_parse_int(row["year"], "year", line),
            team=canonical_team(row["team"], aliases),
            fifa_rank=rank,
            host=_parse_bool(row["host"], "host", line),
            same_continent=_parse_bool(row["continent"], "continent", line),
            confederation=confed,
            **values,
        )
        key = (rec.tournament_year, rec.team)
        if key in seen:
            raise DataError(f"line {line}: duplicate covariates for {rec.team} {rec.tournament_year}")
        seen.add(key)
        out.append(rec)
    return out


def write_covariates(records: Iterable[TeamCovariates], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COVARIATE_COLUMNS)
        for r in records:
            w.writerow([
                r.tournament_year, r.team, repr(r.gdp_ratio), repr(r.population_ratio), r.fifa_rank,
                "yes" if r.host else "no", "yes" if r.same_continent else "no", r.confederation,
                repr(r.max_teammates), repr(r.second_max_teammates), repr(r.avg_age),
                repr(r.cl_players), repr(r.mls_players), repr(r.legionnaires),
            ])


def covariates_by_key(records: Iterable[TeamCovariates]) -> dict[tuple[int, str], TeamCovariates]:
    return {(r.tournament_year, r.team): r for r in records}


# ---------------------------------------------------------------------------
# odds


def load_odds(path, year: int | None = None, aliases=None) -> list[OddsSheet]:
    """Read outright-winner odds.

    Two layouts are accepted: long (``bookmaker,team,quoted_odds`` with an
    optional ``year`` column) and wide (``team`` followed by one column per
    bookmaker).  Quotes are decimal and stake-inclusive, hence must exceed 1.
    When ``year`` is given and the file carries a year column, other years
    are dropped.
    """
    quotes: dict[str, dict[str, float]] = {}
    years: dict[str, int | None] = {}
    rows = _read_rows(path, ())
    for line, header, row in rows:
        if "quoted_odds" in header:
            missing = [c for c in ("bookmaker", "team") if c not in header]
            if missing:
                raise DataError(f"odds file: missing column(s) {', '.join(missing)}")
            row_year = _parse_int(row["year"], "year", line) if "year" in header else None
            if year is not None and row_year is not None and row_year != year:
                continue
            if year is None and row_year is not None and any(y not in (None, row_year) for y in years.values()):
                raise DataError(f"line {line}: odds file covers several years; select one")
            entries = [(row["bookmaker"].strip(), row["quoted_odds"])]
            team = canonical_team(row["team"], aliases)
        else:
            if header[0] != "team" and header[0] != "":
                raise DataError("odds file: expected long format with 'quoted_odds' "
                                "or wide format starting with a 'team' column")
            row_year = None
            entries = [(b, row[b]) for b in header[1:]]
            team = canonical_team(row[header[0]], aliases)
        for book, raw in entries:
            q = _parse_float(raw, "quoted odds", line)
            if q <= 1.0:
                raise DataError(f"line {line}: {book} quotes {team} at {raw.strip()}; "
                                "stake-inclusive odds must exceed 1")
            sheet = quotes.setdefault(book, {})
            if team in sheet:
                raise DataError(f"line {line}: duplicate quote for {team} from {book}")
            sheet[team] = q
            years[book] = row_year if year is None else year
    sheets = [OddsSheet(book, dict(q), years[book]) for book, q in quotes.items()]
    if sheets:
        union = frozenset().union(*(s.teams for s in sheets))
        for s in sheets:
            missing = sorted(union - s.teams)
            if missing:
                raise DataError(f"bookmaker {s.bookmaker} has no quote for {', '.join(missing)}")
    return sheets


def write_odds(sheets: Iterable[OddsSheet], path) -> None:
    sheets = list(sheets)
    with_year = any(s.year is not None for s in sheets)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bookmaker", "team", "quoted_odds"] + (["year"] if with_year else []))
        for s in sheets:
            for team, q in s.quotes.items():
                w.writerow([s.bookmaker, team, repr(q)] + ([s.year] if with_year else []))


# ---------------------------------------------------------------------------
# tournament structure

GROUP_LABELS = "ABCDEF"


def _validate_bracket(bracket: Bracket, labels: str) -> None:
    r16 = bracket.round_of_16
    if len(r16) != 8:
        raise DataError(f"round_of_16 must list 8 matches, got {len(r16)}")
    slots = [s for pair in r16 for s in pair]
    direct = sorted(s for s in slots if not s.startswith("3:"))
    expected = sorted([f"1{g}" for g in labels] + [f"2{g}" for g in labels])
    if direct != expected:
        raise DataError(f"round_of_16 must use every group winner and runner-up exactly once")
    anchors = [s[2:] for s in slots if s.startswith("3:")]
    if len(anchors) != 4 or len(set(anchors)) != 4:
        raise DataError("round_of_16 must contain four distinct third-place slots '3:<slot>'")
    for key, assignment in bracket.third_place.items():
        if len(key) != 4 or "".join(sorted(set(key))) != key or not set(key) <= set(labels):
            raise DataError(f"third_place key {key!r} must be four sorted group letters")
        if sorted(assignment) != sorted(anchors):
            raise DataError(f"third_place[{key}] must assign exactly the slots {sorted(anchors)}")
        groups = sorted(v[1:] for v in assignment.values())
        if any(not v.startswith("3") for v in assignment.values()) or "".join(groups) != key:
            raise DataError(f"third_place[{key}] must use each of the thirds 3{'/3'.join(key)} once")
    for name, rnd, size in (("quarter_finals", bracket.quarter_finals, 8),
                            ("semi_finals", bracket.semi_finals, 4), ("final", bracket.final, 2)):
        flat = sorted(i for pair in rnd for i in pair)
        if flat != list(range(size)) or any(len(p) != 2 for p in rnd):
            raise DataError(f"{name} must pair the {size} previous winners exactly once")


def parse_tournament(obj: Mapping, aliases=None) -> TournamentSpec:
    try:
        raw_groups = obj["groups"]
        raw_bracket = obj["bracket"]
        year = int(obj["year"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"tournament: missing or invalid field {exc}") from None
    if isinstance(raw_groups, list):
        raw_groups = dict(zip(GROUP_LABELS, raw_groups))
    groups = {str(g): tuple(canonical_team(t, aliases) for t in members)
              for g, members in raw_groups.items()}
    if "".join(groups) != GROUP_LABELS:
        raise DataError(f"tournament {year}: expected groups {', '.join(GROUP_LABELS)}, got {', '.join(groups)}")
    for g, members in groups.items():
        if len(members) != 4:
            raise DataError(f"tournament {year}: group {g} has {len(members)} teams, expected 4")
    teams = [t for m in groups.values() for t in m]
    if len(set(teams)) != 24:
        raise DataError(f"tournament {year}: expected 24 distinct teams, got {len(set(teams))}")
    try:
        bracket = Bracket(
            round_of_16=tuple(tuple(p) for p in raw_bracket["round_of_16"]),
            third_place={k: dict(v) for k, v in raw_bracket["third_place"].items()},
            quarter_finals=tuple(tuple(p) for p in raw_bracket["quarter_finals"]),
            semi_finals=tuple(tuple(p) for p in raw_bracket["semi_finals"]),
            final=tuple(tuple(p) for p in raw_bracket["final"]),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"tournament {year}: malformed bracket ({exc})") from None
    _validate_bracket(bracket, GROUP_LABELS)
    start = obj.get("start_date")
    return TournamentSpec(
        year=year,
        groups=groups,
        bracket=bracket,
        start_date=dt.date.fromisoformat(start) if start else None,
    )


def tournament_to_dict(spec: TournamentSpec) -> dict:
    b = spec.bracket
    out = {"year": spec.year}
    if spec.start_date is not None:
        out["start_date"] = spec.start_date.isoformat()
    out["groups"] = {g: list(m) for g, m in spec.groups.items()}
    out["bracket"] = {
        "round_of_16": [list(p) for p in b.round_of_16],
        "third_place": {k: dict(v) for k, v in sorted(b.third_place.items())},
        "quarter_finals": [list(p) for p in b.quarter_finals],
        "semi_finals": [list(p) for p in b.semi_finals],
        "final": [list(p) for p in b.final],
    }
    return out


def load_tournaments(path, aliases=None) -> dict[int, TournamentSpec]:
    """Read a tournament file holding one edition or ``{"editions": [...]}``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path.name}: invalid JSON ({exc})") from None
    editions = obj["editions"] if isinstance(obj, dict) and "editions" in obj else [obj]
    out = {}
    for e in editions:
        spec = parse_tournament(e, aliases)
        out[spec.year] = spec
    return out


def load_tournament(path, year: int | None = None, aliases=None) -> TournamentSpec:
    specs = load_tournaments(path, aliases)
    if year is None:
        return specs[max(specs)]
    if year not in specs:
        raise DataError(f"{Path(path).name}: no tournament for {year}")
    return specs[year]

"""Monte Carlo simulation of the 24-team World Cup with Poisson scores.

Group tables follow the FIFA cascade (points, goal difference, goals scored,
then the same three criteria on the matches among the tied teams, then lot).
The four best third-placed teams enter the round of 16 through the
third-place combination table of the tournament file.  Drawn knockout matches
get extra time at 0.33 of the regulation intensities and, if still level, a
coin-flip shootout.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from itertools import combinations, groupby
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .design import FEATURE_NAMES, pair_rows, team_features
from .errors import DataError, InvariantError
from .ingest import TeamCovariates, TournamentSpec

logger = logging.getLogger(__name__)

EXTRA_TIME_FACTOR = 0.33
STAGE_NAMES = ("group", "round_of_16", "quarter_final", "semi_final", "final", "champion")
REPORT_COLUMNS = ("p_r16", "p_qf", "p_sf", "p_final", "p_champion")
# teams reaching stage k or later in every run
STAGE_SIZES = (24, 16, 8, 4, 2, 1)


class IntensityModel(Protocol):
    def intensity(self, team: str, opponent: str, groupstage: bool) -> float:
        ...


def sample_score(lam_a: float, lam_b: float, rng: np.random.Generator) -> tuple[int, int]:
    """Two independent Poisson draws."""
    if not (lam_a > 0 and lam_b > 0):
        raise DataError(f"intensities must be positive, got {lam_a}, {lam_b}")
    return int(rng.poisson(lam_a)), int(rng.poisson(lam_b))


def knockout_outcome(lam_a: float, lam_b: float, rng: np.random.Generator) -> tuple[int, str]:
    """Winner (0 for side a, 1 for side b) and how the tie was settled.

    The second element is ``"regulation"``, ``"extra_time"`` or
    ``"shootout"``.  Extra-time goals are added to the regulation score; a
    level aggregate goes to a fair coin.
    """
    ga, gb = sample_score(lam_a, lam_b, rng)
    if ga != gb:
        return (0 if ga > gb else 1), "regulation"
    ea, eb = sample_score(EXTRA_TIME_FACTOR * lam_a, EXTRA_TIME_FACTOR * lam_b, rng)
    if ea != eb:
        return (0 if ea > eb else 1), "extra_time"
    return (0 if rng.random() < 0.5 else 1), "shootout"


def play_knockout_match(lam_a: float, lam_b: float, rng: np.random.Generator) -> int:
    """Winner of a knockout tie: 0 for side a, 1 for side b."""
    return knockout_outcome(lam_a, lam_b, rng)[0]


# ---------------------------------------------------------------------------
# group stage


@dataclass(frozen=True)
class GroupResult:
    standings: tuple  # (team, points, goal_difference, goals_for), best first
    tie_break_log: tuple = ()
    group: str | None = None

    @property
    def order(self) -> list[str]:
        return [s[0] for s in self.standings]

    def place(self, k: int) -> tuple:
        return self.standings[k - 1]


def _table(teams: Sequence[str], results: Iterable[tuple]) -> dict[str, tuple[int, int, int]]:
    pts = dict.fromkeys(teams, 0)
    gd = dict.fromkeys(teams, 0)
    gf = dict.fromkeys(teams, 0)
    for a, b, ga, gb in results:
        gf[a] += ga
        gf[b] += gb
        gd[a] += ga - gb
        gd[b] += gb - ga
        if ga > gb:
            pts[a] += 3
        elif gb > ga:
            pts[b] += 3
        else:
            pts[a] += 1
            pts[b] += 1
    return {t: (pts[t], gd[t], gf[t]) for t in teams}


def _check_round_robin(teams: Sequence[str], results: Sequence[tuple]) -> None:
    if len(set(teams)) != len(teams):
        raise DataError(f"duplicate team in group {teams}")
    expected = {frozenset(p) for p in combinations(teams, 2)}
    seen = set()
    for r in results:
        pair = frozenset(r[:2])
        if pair not in expected:
            raise DataError(f"fixture {r[0]}-{r[1]} does not belong to group {list(teams)}")
        if pair in seen:
            raise DataError(f"duplicate fixture {r[0]}-{r[1]}")
        seen.add(pair)
    if seen != expected:
        missing = [" - ".join(sorted(p)) for p in expected - seen]
        raise DataError(f"missing fixture(s): {', '.join(sorted(missing))}")


def _lot(block: list[str], rng: np.random.Generator) -> list[str]:
    return [block[i] for i in rng.permutation(len(block))]


def rank_group(teams: Sequence[str], match_results: Sequence[tuple], rng: np.random.Generator,
               group: str | None = None) -> GroupResult:
    """Final standings of a four-team group.

    ``match_results`` are ``(team_a, team_b, goals_a, goals_b)`` tuples, one
    per round-robin fixture.  Teams level on points, goal difference and
    goals scored are separated by the same criteria on their mutual matches;
    what remains level is decided by lot.
    """
    teams = list(teams)
    results = [tuple(r) for r in match_results]
    _check_round_robin(teams, results)
    table = _table(teams, results)
    ordered = sorted(teams, key=lambda t: table[t], reverse=True)
    log = []
    final = []
    for _, blk in groupby(ordered, key=lambda t: table[t]):
        block = list(blk)
        if len(block) == 1:
            final.extend(block)
            continue
        log.append(f"{', '.join(block)} level on points, goal difference and goals scored: "
                   "head-to-head table")
        mutual = [r for r in results if r[0] in block and r[1] in block]
        sub = _table(block, mutual)
        for _, sblk in groupby(sorted(block, key=lambda t: sub[t], reverse=True), key=lambda t: sub[t]):
            sub_block = list(sblk)
            if len(sub_block) > 1:
                sub_block = _lot(sub_block, rng)
                log.append(f"{', '.join(sorted(sub_block))} still level: drawn by lot ({', '.join(sub_block)})")
            final.extend(sub_block)
    standings = tuple((t, *table[t]) for t in final)
    return GroupResult(standings=standings, tie_break_log=tuple(log), group=group)


# ---------------------------------------------------------------------------
# knockout draw


@dataclass(frozen=True)
class RoundOf16:
    pairings: tuple  # eight (team_a, team_b) in bracket order
    third_groups: str  # sorted letters of the qualifying third-placed groups
    tie_break_log: tuple = ()


def rank_third_placed(group_results: Mapping[str, GroupResult], rng: np.random.Generator):
    thirds = {g: r.place(3) for g, r in group_results.items()}
    ordered = sorted(thirds, key=lambda g: thirds[g][1:], reverse=True)
    out, log = [], []
    for _, blk in groupby(ordered, key=lambda g: thirds[g][1:]):
        block = list(blk)
        if len(block) > 1:
            block = _lot(block, rng)
            log.append(f"third-placed teams of groups {''.join(sorted(block))} level: "
                       f"drawn by lot ({''.join(block)})")
        out.extend(block)
    return out, log


def qualify_knockout(group_results: Mapping[str, GroupResult], spec: TournamentSpec,
                     rng: np.random.Generator) -> RoundOf16:
    """Round-of-16 pairings from the six final group tables."""
    if sorted(group_results) != sorted(spec.groups):
        raise DataError("need a ranked table for every group")
    ranking, log = rank_third_placed(group_results, rng)
    key = "".join(sorted(ranking[:4]))
    assignment = spec.bracket.third_place.get(key)
    if assignment is None:
        raise DataError(f"third-place combination table has no entry for groups {key}")

    def team(slot: str) -> str:
        if slot.startswith("3:"):
            return group_results[assignment[slot[2:]][1]].place(3)[0]
        return group_results[slot[1]].place(int(slot[0]))[0]

    pairings = tuple((team(a), team(b)) for a, b in spec.bracket.round_of_16)
    return RoundOf16(pairings=pairings, third_groups=key, tie_break_log=tuple(log))


# ---------------------------------------------------------------------------
# models producing intensities


class HybridModel:
    """Goal intensities from the forest, given frozen pre-tournament features.

    Predictions are cached per ``(team, opponent, groupstage)``; both
    orientations of a fixture are computed together.
    """

    def __init__(self, forest, covariates: Mapping[str, TeamCovariates],
                 pois_abil: Mapping[str, float], odds_abil: Mapping[str, float]):
        if tuple(forest.feature_schema) != FEATURE_NAMES:
            raise DataError("forest was not trained on the match design schema")
        self.forest = forest
        self.covariates = dict(covariates)
        self._values = {}
        for t, cov in self.covariates.items():
            if t not in pois_abil or t not in odds_abil:
                raise DataError(f"no ability estimates for {t}")
            self._values[t] = team_features(cov, pois_abil[t], odds_abil[t])
        self._cache: dict[tuple, float] = {}

    def prepare(self, teams: Sequence[str]) -> "HybridModel":
        """Predict every ordered pairing of ``teams`` in one batch."""
        missing = [t for t in teams if t not in self._values]
        if missing:
            raise DataError(f"no features for {', '.join(missing)}")
        keys, rows = [], []
        for gs in (1, 0):
            for a, b in combinations(teams, 2):
                ra, rb = pair_rows(a, b, self._values[a], self._values[b],
                                   self.covariates[a], self.covariates[b], groupstage=gs)
                keys += [(a, b, gs), (b, a, gs)]
                rows += [ra.vector(), rb.vector()]
        pred = self.forest.predict(np.array(rows))
        self._cache.update(zip(keys, pred.tolist()))
        return self

    def intensity(self, team: str, opponent: str, groupstage: bool) -> float:
        key = (team, opponent, int(groupstage))
        if key not in self._cache:
            if team not in self._values or opponent not in self._values:
                raise DataError(f"no features for {team} or {opponent}")
            self.prepare_pair(team, opponent, int(groupstage))
        return self._cache[key]

    def prepare_pair(self, a: str, b: str, gs: int) -> None:
        ra, rb = pair_rows(a, b, self._values[a], self._values[b], self.covariates[a], self.covariates[b],
                           groupstage=gs)
        pa, pb = self.forest.predict(np.array([ra.vector(), rb.vector()]))
        self._cache[(a, b, gs)] = float(pa)
        self._cache[(b, a, gs)] = float(pb)


# ---------------------------------------------------------------------------
# single run and Monte Carlo


@dataclass(frozen=True)
class TournamentRun:
    stage: Mapping[str, int]  # index into STAGE_NAMES
    champion: str
    groups: Mapping[str, GroupResult] = field(default_factory=dict)
    round_of_16: RoundOf16 | None = None


def run_tournament(model: IntensityModel, spec: TournamentSpec, rng: np.random.Generator) -> TournamentRun:
    """One simulated tournament."""
    group_results = {}
    for g, teams in spec.groups.items():
        fixtures = list(combinations(teams, 2))
        lam = np.array([[model.intensity(a, b, True), model.intensity(b, a, True)] for a, b in fixtures])
        if not np.all(lam > 0):
            raise DataError(f"non-positive intensity in group {g}")
        goals = rng.poisson(lam)
        results = [(a, b, int(ga), int(gb)) for (a, b), (ga, gb) in zip(fixtures, goals)]
        group_results[g] = rank_group(teams, results, rng, group=g)

    r16 = qualify_knockout(group_results, spec, rng)
    stage = dict.fromkeys(spec.teams, 0)

    def play(a: str, b: str) -> str:
        w = play_knockout_match(model.intensity(a, b, False), model.intensity(b, a, False), rng)
        return (a, b)[w]

    for a, b in r16.pairings:
        stage[a] = stage[b] = 1
    winners = [play(a, b) for a, b in r16.pairings]
    for level, rnd in enumerate((spec.bracket.quarter_finals, spec.bracket.semi_finals, spec.bracket.final), 2):
        for w in winners:
            stage[w] = level
        winners = [play(winners[i], winners[j]) for i, j in rnd]
    champion = winners[0]
    stage[champion] = 5
    _check_run(stage)
    return TournamentRun(stage=stage, champion=champion, groups=group_results, round_of_16=r16)


def _check_run(stage: Mapping[str, int]) -> None:
    levels = np.array(list(stage.values()))
    for k, size in enumerate(STAGE_SIZES):
        if np.sum(levels >= k) != size:
            raise InvariantError(f"{np.sum(levels >= k)} teams reached {STAGE_NAMES[k]}, expected {size}")


@dataclass(frozen=True)
class SimulationReport:
    teams: tuple
    counts: np.ndarray  # teams x 5 : runs reaching R16, QF, SF, final, title
    n_runs: int
    seed: int

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.n_runs

    def as_dict(self) -> dict[str, dict[str, float]]:
        p = self.probabilities
        return {t: dict(zip(REPORT_COLUMNS, p[i].tolist())) for i, t in enumerate(self.teams)}

    def validate(self) -> None:
        c = self.counts
        for k, size in enumerate(STAGE_SIZES[1:]):
            if c[:, k].sum() != size * self.n_runs:
                raise InvariantError(f"{REPORT_COLUMNS[k]} counts sum to {c[:, k].sum()}, "
                                     f"expected {size * self.n_runs}")
        if np.any(np.diff(c, axis=1) > 0):
            raise InvariantError("stage probabilities must not increase towards the final")

    def sorted_rows(self) -> list[tuple[str, np.ndarray]]:
        order = sorted(range(len(self.teams)),
                       key=lambda i: (*(-self.counts[i, ::-1]), self.teams[i]))
        return [(self.teams[i], self.probabilities[i]) for i in order]

    def to_csv(self, header_comments: Sequence[str] = ()) -> str:
        """Percentages with one decimal, favourites first."""
        buf = io.StringIO()
        for line in header_comments:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("team",) + REPORT_COLUMNS)
        for team, p in self.sorted_rows():
            w.writerow([team] + [f"{100 * v:.1f}" for v in p])
        return buf.getvalue()


def _run_counts(model, spec: TournamentSpec, seed: int, runs: range) -> np.ndarray:
    index = {t: i for i, t in enumerate(spec.teams)}
    counts = np.zeros((24, 6), dtype=np.int64)
    for r in runs:
        out = run_tournament(model, spec, np.random.default_rng([seed, r]))
        for t, s in out.stage.items():
            counts[index[t], s] += 1
    return counts


def monte_carlo(model: IntensityModel, spec: TournamentSpec, n_runs: int, seed: int) -> SimulationReport:
    """Aggregate ``n_runs`` tournaments; run ``r`` uses a generator seeded with ``(seed, r)``."""
    if n_runs < 1:
        raise DataError("n_runs must be at least 1")
    if hasattr(model, "prepare"):
        model.prepare(spec.teams)
    exact = _run_counts(model, spec, seed, range(n_runs))
    # reached stage k or later
    reach = np.cumsum(exact[:, ::-1], axis=1)[:, ::-1][:, 1:]
    report = SimulationReport(teams=tuple(spec.teams), counts=reach, n_runs=n_runs, seed=seed)
    report.validate()
    return report

"""Bookmaker consensus probabilities and abilities recovered by inverse simulation.

Each bookmaker's quotes are assumed to satisfy ``quoted = odds * delta + 1``
with a book-wide payout share ``delta``; solving for ``delta`` removes the
overround.  Books are pooled on the logit scale.  Team abilities are then
tuned until a Bradley-Terry simulation of the tournament reproduces the
pooled winning probabilities, which strips out the effect of the draw.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConvergenceError, DataError
from .ingest import GROUP_LABELS, OddsSheet, TournamentSpec

logger = logging.getLogger(__name__)

# runs sharing one generator; run r uses row r % CHUNK of chunk r // CHUNK
CHUNK = 10_000
DELTA_LOWER = 1e-6


class OverroundError(DataError):
    """The quotes admit no payout share in (0, 1]: the book offers an arbitrage."""


@dataclass(frozen=True)
class AdjustedBook:
    bookmaker: str
    delta: float
    probs: Mapping[str, float]

    @property
    def overround(self) -> float:
        return 1.0 - self.delta

    @property
    def zero_overround(self) -> bool:
        return self.delta == 1.0


@dataclass(frozen=True)
class InverseConfig:
    runs_per_iter: int = 100_000
    max_iters: int = 50
    tol: float = 5e-4
    damping: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class ConsensusResult:
    consensus_probs: Mapping[str, float]
    log_abilities: Mapping[str, float]
    fit_error: float
    converged: bool = True
    iterations: int = 0
    simulated_probs: Mapping[str, float] = field(default_factory=dict)
    metadata: Mapping[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "consensus_probs": dict(self.consensus_probs),
            "log_abilities": dict(self.log_abilities),
            "fit_error": self.fit_error,
            "converged": self.converged,
            "iterations": self.iterations,
            "simulated_probs": dict(self.simulated_probs),
        }
        out.update(self.metadata)
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ConsensusResult":
        known = {"consensus_probs", "log_abilities", "fit_error", "converged", "iterations",
                 "simulated_probs"}
        try:
            return cls(
                consensus_probs={k: float(v) for k, v in obj["consensus_probs"].items()},
                log_abilities={k: float(v) for k, v in obj["log_abilities"].items()},
                fit_error=float(obj["fit_error"]),
                converged=bool(obj.get("converged", True)),
                iterations=int(obj.get("iterations", 0)),
                simulated_probs={k: float(v) for k, v in obj.get("simulated_probs", {}).items()},
                metadata={k: v for k, v in obj.items() if k not in known},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid consensus result: {exc}") from None


def save_consensus(result: ConsensusResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_consensus(path) -> ConsensusResult:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    return ConsensusResult.from_dict(json.loads(path.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# odds to probabilities


def overround_residual(delta: float, quotes: Sequence[float]) -> float:
    """``sum_i delta / (q_i - 1 + delta) - 1``; zero at the payout share of the book."""
    q = np.asarray(quotes, dtype=float)
    return float(np.sum(delta / (q - 1.0 + delta)) - 1.0)


def strip_overround(sheet: OddsSheet) -> AdjustedBook:
    """Solve for the payout share ``delta`` of one bookmaker by bisection.

    The residual is strictly increasing in ``delta``, so the root is unique.
    Bisection runs until the bracket cannot shrink in floating point.  A book
    whose quotes are exactly fair yields ``delta = 1``; a book with
    ``sum(1/q) < 1`` has no root and raises :class:`OverroundError`.
    """
    teams = list(sheet.quotes)
    q = np.array([sheet.quotes[t] for t in teams], dtype=float)
    if len(q) < 2:
        raise DataError(f"{sheet.bookmaker}: need quotes for at least two teams")
    if np.any(q <= 1.0):
        raise DataError(f"{sheet.bookmaker}: stake-inclusive odds must exceed 1")
    hi_res = overround_residual(1.0, q)
    if hi_res < 0:
        raise OverroundError(f"{sheet.bookmaker}: quotes imply sum(1/q) = {hi_res + 1:.6f} < 1; "
                             "no payout share in (0, 1] reproduces them")
    if hi_res == 0.0:
        delta = 1.0
    else:
        lo, hi = DELTA_LOWER, 1.0
        if overround_residual(lo, q) > 0:
            raise OverroundError(f"{sheet.bookmaker}: overround exceeds {1 - DELTA_LOWER}")
        while True:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if overround_residual(mid, q) < 0:
                lo = mid
            else:
                hi = mid
        delta = lo if abs(overround_residual(lo, q)) <= abs(overround_residual(hi, q)) else hi
    p = delta / (q - 1.0 + delta)
    return AdjustedBook(sheet.bookmaker, float(delta), dict(zip(teams, p.tolist())))


def _logit(p):
    return np.log(p) - np.log1p(-p)


def consensus_probabilities(books: Sequence[AdjustedBook]) -> dict[str, float]:
    """Average winning probabilities on the logit scale, back-transform, renormalise."""
    if not books:
        raise DataError("need at least one bookmaker")
    teams = sorted(books[0].probs)
    for b in books[1:]:
        missing = sorted(set(teams) ^ set(b.probs))
        if missing:
            raise DataError(f"team(s) {', '.join(missing)} not quoted by every bookmaker")
    logits = np.array([[_logit(b.probs[t]) for t in teams] for b in books])
    p = 1.0 / (1.0 + np.exp(-logits.mean(axis=0)))
    p /= p.sum()
    return dict(zip(teams, p.tolist()))


def bradley_terry(ability_a: float, ability_b: float) -> float:
    """Probability that A beats B: ``a / (a + b)``."""
    if not (ability_a > 0 and ability_b > 0):
        raise DataError(f"abilities must be positive, got {ability_a}, {ability_b}")
    return ability_a / (ability_a + ability_b)


# ---------------------------------------------------------------------------
# vectorised Bradley-Terry tournament


class _Layout:
    """Index arithmetic shared by every simulated run of one tournament."""

    def __init__(self, spec: TournamentSpec):
        self.spec = spec
        self.teams = spec.teams
        self.index = {t: i for i, t in enumerate(self.teams)}
        pairs = [(4 * g + a, 4 * g + b) for g in range(6) for a, b in combinations(range(4), 2)]
        self.home = np.array([p[0] for p in pairs])
        self.away = np.array([p[1] for p in pairs])
        onehot = np.eye(24)
        self.home_onehot = onehot[self.home]
        self.away_onehot = onehot[self.away]

        b = spec.bracket
        self.anchors = [s[2:] for pair in b.round_of_16 for s in pair if s.startswith("3:")]
        # combination bitmask -> group index facing each anchor
        self.third_lookup = np.full((64, 4), -1, dtype=np.intp)
        for key, assignment in b.third_place.items():
            mask = sum(1 << GROUP_LABELS.index(g) for g in key)
            for k, anchor in enumerate(self.anchors):
                self.third_lookup[mask, k] = GROUP_LABELS.index(assignment[anchor][1])
        self.rounds = [b.quarter_finals, b.semi_finals, b.final]

        cols = iter(range(10_000))
        self.col_matches = [next(cols) for _ in range(36)]
        self.col_group_lot = [next(cols) for _ in range(24)]
        self.col_third_lot = [next(cols) for _ in range(6)]
        self.col_knockout = [next(cols) for _ in range(15)]
        self.n_uniforms = next(cols)


def _simulate_bt_chunk(layout: _Layout, ability: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Champion index of each run; ``u`` holds the run uniforms row by row."""
    m = u.shape[0]
    rows = np.arange(m)
    p_home = ability[layout.home] / (ability[layout.home] + ability[layout.away])
    home_wins = (u[:, layout.col_matches] < p_home).astype(float)
    wins = home_wins @ layout.home_onehot + (1.0 - home_wins) @ layout.away_onehot
    # lot only separates equal win counts: the offset stays below one win
    key = wins + 0.5 * u[:, layout.col_group_lot]
    order = np.argsort(-key.reshape(m, 6, 4), axis=2, kind="stable") + 4 * np.arange(6)[None, :, None]
    first, second, third = order[:, :, 0], order[:, :, 1], order[:, :, 2]

    third_key = np.take_along_axis(wins, third, axis=1) + 0.5 * u[:, layout.col_third_lot]
    best = np.argsort(-third_key, axis=1, kind="stable")[:, :4]
    mask = np.sum(1 << best, axis=1)
    assigned = layout.third_lookup[mask]
    if np.any(assigned < 0):
        bad = sorted({"".join(GROUP_LABELS[g] for g in sorted(b)) for b, a in zip(best, assigned) if a[0] < 0})
        raise DataError(f"third-place table has no entry for {', '.join(bad)}")

    def slot(token):
        if token.startswith("3:"):
            g = assigned[:, layout.anchors.index(token[2:])]
            return third[rows, g]
        g = GROUP_LABELS.index(token[1])
        return (first if token[0] == "1" else second)[:, g]

    cols = iter(layout.col_knockout)

    def play(a, b):
        p = ability[a] / (ability[a] + ability[b])
        return np.where(u[:, next(cols)] < p, a, b)

    winners = [play(slot(x), slot(y)) for x, y in layout.spec.bracket.round_of_16]
    for rnd in layout.rounds:
        winners = [play(winners[i], winners[j]) for i, j in rnd]
    return winners[0]


def _champion_frequencies(layout: _Layout, ability: np.ndarray, runs: int, seed: int) -> np.ndarray:
    counts = np.zeros(24, dtype=np.int64)
    for c, start in enumerate(range(0, runs, CHUNK)):
        m = min(CHUNK, runs - start)
        u = np.random.default_rng([seed, c]).random((m, layout.n_uniforms))
        counts += np.bincount(_simulate_bt_chunk(layout, ability, u), minlength=24)
    return counts / runs


def simulate_bt_tournament(abilities: Mapping[str, float], spec: TournamentSpec, runs: int,
                           seed: int) -> dict[str, float]:
    """Champion frequencies when every match is a Bradley-Terry coin.

    Groups are ranked by simulated wins with ties broken by lot, the four
    best third-placed teams (wins, then lot) fill the bracket through the
    third-place table.  Run ``r`` draws its uniforms from row ``r % CHUNK`` of
    the generator seeded with ``(seed, r // CHUNK)``, so results do not
    depend on how many runs are requested after it.
    """
    if runs < 1:
        raise DataError("runs must be at least 1")
    layout = _Layout(spec)
    missing = [t for t in layout.teams if t not in abilities]
    if missing:
        raise DataError(f"no ability for {', '.join(missing)}")
    a = np.array([float(abilities[t]) for t in layout.teams])
    if np.any(~(a > 0)) or np.any(~np.isfinite(a)):
        raise DataError("abilities must be positive and finite")
    freq = _champion_frequencies(layout, a, runs, seed)
    return dict(zip(layout.teams, freq.tolist()))


def fit_abilities_inverse(target_probs: Mapping[str, float], spec: TournamentSpec,
                          cfg: InverseConfig | None = None) -> ConsensusResult:
    """Find abilities whose simulated champion frequencies match ``target_probs``.

    Log-abilities move by ``damping * (log target - log simulated)`` per pass
    and are re-centred so that their mean (the log geometric mean) is zero.
    Every pass reuses the same seed, so successive simulations share their
    random numbers and the iteration is not driven around by Monte Carlo
    noise.  A fit that misses ``tol`` after ``max_iters`` passes is returned
    with ``converged=False``.
    """
    cfg = cfg or InverseConfig()
    layout = _Layout(spec)
    missing = [t for t in layout.teams if t not in target_probs]
    if missing:
        raise DataError(f"no target probability for {', '.join(missing)}")
    target = np.array([float(target_probs[t]) for t in layout.teams])
    if np.any(target <= 0) or abs(target.sum() - 1.0) > 1e-8:
        raise DataError("target probabilities must be positive and sum to 1")

    floor = 0.5 / cfg.runs_per_iter
    log_a = np.log(target)
    log_a -= log_a.mean()
    sim = _champion_frequencies(layout, np.exp(log_a), cfg.runs_per_iter, cfg.seed)
    err = float(np.abs(sim - target).max())
    step = np.full(24, cfg.damping)
    prev = np.zeros(24)
    it = 0
    while err >= cfg.tol and it < cfg.max_iters:
        it += 1
        gap = np.log(target) - np.log(np.maximum(sim, floor))
        # a sign flip means the step overshot: halve that team's damping
        flipped = gap * prev < 0
        step = np.where(flipped, 0.5 * step, np.minimum(step * 1.25, cfg.damping))
        prev = gap
        log_a += step * gap
        log_a -= log_a.mean()
        sim = _champion_frequencies(layout, np.exp(log_a), cfg.runs_per_iter, cfg.seed)
        err = float(np.abs(sim - target).max())
        logger.debug("inverse fit pass %d: max deviation %.2e", it, err)
    converged = err < cfg.tol
    if not converged:
        logger.warning("inverse tournament fit stopped after %d passes with deviation %.2e", it, err)
    return ConsensusResult(
        consensus_probs=dict(zip(layout.teams, target.tolist())),
        log_abilities=dict(zip(layout.teams, log_a.tolist())),
        fit_error=err,
        converged=converged,
        iterations=it,
        simulated_probs=dict(zip(layout.teams, sim.tolist())),
    )


def bookmaker_consensus(sheets: Sequence[OddsSheet], spec: TournamentSpec,
                        cfg: InverseConfig | None = None) -> tuple[list[AdjustedBook], ConsensusResult]:
    books = [strip_overround(s) for s in sheets]
    probs = consensus_probabilities(books)
    extra = sorted(set(probs) - set(spec.teams))
    if extra:
        raise DataError(f"odds quote teams outside the tournament: {', '.join(extra)}")
    return books, fit_abilities_inverse(probs, spec, cfg)


def require_converged(result: ConsensusResult) -> ConsensusResult:
    if not result.converged:
        raise ConvergenceError(f"inverse tournament fit missed tolerance (deviation {result.fit_error:.2e})",
                               iterations=result.iterations)
    return result

"""Time-decayed bivariate Poisson team ratings.

Every match contributes its log-likelihood under a bivariate Poisson model,
weighted by ``0.5 ** (days_back / half_period)``.  The log intensity of team
``i`` against ``j`` is ``beta0 + r_i - r_j + h * [i at home]`` and the shared
component ``lambda_c`` induces positive score correlation.  Strengths are
identified by the sum-to-zero constraint, which is built into the
parameterisation (the last strength is minus the sum of the others).
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, special, stats

from .errors import ConvergenceError, DataError
from .ingest import MatchRecord

logger = logging.getLogger(__name__)

WEIGHT_CUTOFF = 1e-4
STRENGTH_BOUND = 8.0
DEFAULT_HALF_PERIOD_GRID = tuple(float(x) for x in range(100, 1001, 100))
OUTCOMES = ("win", "draw", "loss")


class RatingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DecayConfig:
    reference_date: dt.date
    half_period: float = 500.0

    def __post_init__(self):
        if not self.half_period > 0:
            raise DataError(f"half_period must be positive, got {self.half_period}")


@dataclass(frozen=True)
class OptimizerSettings:
    max_iter: int = 500
    gtol: float = 1e-8
    bivariate: bool = True
    initial_strengths: Mapping[str, float] | None = None


@dataclass(frozen=True)
class RatingModel:
    strengths: Mapping[str, float]
    intercept: float
    home_effect: float
    covariance: float
    config: DecayConfig
    n_matches: int
    iterations: int = 0
    gradient_norm: float = float("nan")
    metadata: Mapping[str, object] = field(default_factory=dict)

    def ranking(self) -> list[tuple[str, float]]:
        return sorted(self.strengths.items(), key=lambda kv: (-kv[1], kv[0]))

    def to_dict(self) -> dict:
        out = {
            "half_period": self.config.half_period,
            "reference_date": self.config.reference_date.isoformat(),
            "beta0": self.intercept,
            "home_effect": self.home_effect,
            "lambda_c": self.covariance,
            "n_matches": self.n_matches,
            "strengths": dict(sorted(self.strengths.items())),
        }
        out.update(self.metadata)
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "RatingModel":
        known = {"half_period", "reference_date", "beta0", "home_effect", "lambda_c",
                 "n_matches", "strengths"}
        try:
            return cls(
                strengths={str(k): float(v) for k, v in obj["strengths"].items()},
                intercept=float(obj["beta0"]),
                home_effect=float(obj["home_effect"]),
                covariance=float(obj["lambda_c"]),
                config=DecayConfig(dt.date.fromisoformat(obj["reference_date"]),
                                   float(obj["half_period"])),
                n_matches=int(obj.get("n_matches", 0)),
                metadata={k: v for k, v in obj.items() if k not in known},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid rating model: {exc}") from None


def save_model(model: RatingModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_model(path) -> RatingModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    return RatingModel.from_dict(json.loads(path.read_text(encoding="utf-8")))


def time_weight(days_back: float, half_period: float) -> float:
    """Weight ``(1/2) ** (days_back / half_period)`` of a match played ``days_back`` days ago."""
    if days_back < 0:
        raise DataError(f"days_back must be non-negative, got {days_back}")
    if not half_period > 0:
        raise DataError(f"half_period must be positive, got {half_period}")
    return 0.5 ** (days_back / half_period)


def bivariate_poisson_log_pmf(z: int, y: int, lam1: float, lam2: float, lam_c: float) -> float:
    """Log of the bivariate Poisson probability of the score ``z:y``.

    The binomial sum over the shared component is evaluated with a
    log-sum-exp so that large intensities or scores do not overflow.
    """
    if not (math.isfinite(lam1) and math.isfinite(lam2) and math.isfinite(lam_c)):
        raise DataError("intensities must be finite")
    if lam1 <= 0 or lam2 <= 0 or lam_c < 0:
        raise DataError(f"invalid intensities ({lam1}, {lam2}, {lam_c})")
    if z < 0 or y < 0:
        raise DataError("scores must be non-negative")
    base = (z * math.log(lam1) - math.lgamma(z + 1) + y * math.log(lam2) - math.lgamma(y + 1)
            - (lam1 + lam2 + lam_c))
    if lam_c == 0.0:
        return base
    log_t = math.log(lam_c) - math.log(lam1) - math.log(lam2)
    ks = np.arange(min(z, y) + 1)
    terms = (_log_binom(z, ks) + _log_binom(y, ks) + special.gammaln(ks + 1) + ks * log_t)
    return base + float(special.logsumexp(terms))


def _log_binom(n, k):
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


def bivariate_poisson_pmf_grid(lam1: float, lam2: float, lam_c: float, max_goals: int) -> np.ndarray:
    """Score probability matrix ``P[z, y]`` for ``z, y <= max_goals``.

    Built from the trivariate reduction ``Z = X1 + X3, Y = X2 + X3`` with
    independent Poisson components, i.e. a convolution rather than the
    closed-form sum used in :func:`bivariate_poisson_log_pmf`.
    """
    n = max_goals + 1
    p1 = stats.poisson.pmf(np.arange(n), lam1)
    p2 = stats.poisson.pmf(np.arange(n), lam2)
    grid = np.outer(p1, p2) * math.exp(-lam_c)
    if lam_c > 0:
        pc = stats.poisson.pmf(np.arange(n), lam_c)
        for k in range(1, n):
            grid[k:, k:] += pc[k] * np.outer(p1[: n - k], p2[: n - k])
    return grid


# ---------------------------------------------------------------------------
# likelihood


class RatingObjective:
    """Weighted log-likelihood over a fixed set of matches.

    The parameter vector is ``[r_1 .. r_{n-1}, beta0, h]`` followed by
    ``xi = log(lambda_c)`` for the bivariate variant; ``r_n`` is implied by
    the sum-to-zero constraint.  Matches with time weight below
    :data:`WEIGHT_CUTOFF` are dropped.
    """

    def __init__(self, matches: Sequence[MatchRecord], config: DecayConfig,
                 bivariate: bool = True, teams: Sequence[str] | None = None):
        if not matches:
            raise DataError("no matches to fit")
        self.config = config
        self.bivariate = bivariate
        if teams is None:
            teams = sorted({m.home_team for m in matches} | {m.away_team for m in matches})
        self.teams = list(teams)
        if len(self.teams) < 2:
            raise DataError("ratings need matches between at least two teams")
        index = {t: i for i, t in enumerate(self.teams)}
        ref = config.reference_date
        rows = []
        for m in matches:
            days = (ref - m.date).days
            if days < 0:
                raise DataError(f"match on {m.date} lies after the reference date {ref}")
            w = time_weight(days, config.half_period)
            if w < WEIGHT_CUTOFF:
                continue
            try:
                rows.append((index[m.home_team], index[m.away_team], m.home_goals, m.away_goals,
                             0.0 if m.neutral else 1.0, w))
            except KeyError as exc:
                raise DataError(f"team {exc.args[0]} has no strength parameter") from None
        if not rows:
            raise DataError("every match has negligible weight; reference date too far ahead?")
        arr = np.array(rows, dtype=float)
        self.i = arr[:, 0].astype(np.intp)
        self.j = arr[:, 1].astype(np.intp)
        self.z = arr[:, 2]
        self.y = arr[:, 3]
        self.home = arr[:, 4]
        self.w = arr[:, 5]
        self.n_matches = len(rows)
        self.n_params = len(self.teams) - 1 + 2 + (1 if bivariate else 0)

        zi, yi = self.z.astype(int), self.y.astype(int)
        self._const = self.w @ (special.gammaln(self.z + 1) + special.gammaln(self.y + 1))
        if bivariate:
            kmax = int(np.minimum(zi, yi).max())
            ks = np.arange(kmax + 1)
            valid = ks[None, :] <= np.minimum(zi, yi)[:, None]
            with np.errstate(invalid="ignore"):
                logc = (_log_binom(self.z[:, None], ks[None, :]) + _log_binom(self.y[:, None], ks[None, :])
                        + special.gammaln(ks + 1)[None, :])
            self._ks = ks.astype(float)
            self._logc = np.where(valid, logc, -np.inf)

    # -- parameter handling -------------------------------------------------

    def strengths_from(self, theta: np.ndarray) -> np.ndarray:
        free = theta[: len(self.teams) - 1]
        return np.append(free, -free.sum())

    def initial_theta(self, initial_strengths: Mapping[str, float] | None = None) -> np.ndarray:
        goals = np.concatenate([self.z, self.y])
        mean_goals = max(float(goals.mean()), 0.05)
        r = np.zeros(len(self.teams))
        if initial_strengths:
            r = np.array([float(initial_strengths.get(t, 0.0)) for t in self.teams])
            r -= r.mean()
        theta = list(r[:-1]) + [math.log(mean_goals), 0.0]
        if self.bivariate:
            theta.append(math.log(0.1))
        return np.array(theta, dtype=float)

    def unpack(self, theta: np.ndarray) -> dict:
        n = len(self.teams)
        r = self.strengths_from(theta)
        return {
            "strengths": dict(zip(self.teams, r.tolist())),
            "intercept": float(theta[n - 1]),
            "home_effect": float(theta[n]),
            "covariance": float(math.exp(theta[n + 1])) if self.bivariate else 0.0,
        }

    def pack(self, strengths: Mapping[str, float], intercept: float, home_effect: float,
             covariance: float) -> np.ndarray:
        try:
            r = np.array([strengths[t] for t in self.teams], dtype=float)
        except KeyError as exc:
            raise DataError(f"team {exc.args[0]} has no strength parameter") from None
        r -= r.mean()
        theta = list(r[:-1]) + [intercept, home_effect]
        if self.bivariate:
            if covariance <= 0:
                raise DataError("bivariate model needs lambda_c > 0")
            theta.append(math.log(covariance))
        return np.array(theta, dtype=float)

    # -- evaluation -------------------------------------------------------

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        n = len(self.teams)
        r = self.strengths_from(theta)
        beta0, h = theta[n - 1], theta[n]
        diff = r[self.i] - r[self.j]
        eta1 = beta0 + diff + h * self.home
        eta2 = beta0 - diff
        lam1, lam2 = np.exp(eta1), np.exp(eta2)
        ll = self.z * eta1 + self.y * eta2 - lam1 - lam2
        if self.bivariate:
            xi = theta[n + 1]
            lam_c = math.exp(xi)
            log_t = xi - eta1 - eta2
            terms = self._logc + self._ks[None, :] * log_t[:, None]
            lse = special.logsumexp(terms, axis=1)
            expected_k = np.exp(terms - lse[:, None]) @ self._ks
            ll = ll - lam_c + lse
        else:
            expected_k = 0.0
        value = float(self.w @ ll - self._const)

        g1 = self.w * (self.z - lam1 - expected_k)
        g2 = self.w * (self.y - lam2 - expected_k)
        per_team = (np.bincount(self.i, g1 - g2, minlength=n) + np.bincount(self.j, g2 - g1, minlength=n))
        grad = np.empty_like(theta)
        grad[: n - 1] = per_team[:-1] - per_team[-1]
        grad[n - 1] = g1.sum() + g2.sum()
        grad[n] = g1 @ self.home
        if self.bivariate:
            grad[n + 1] = float(self.w @ (expected_k - lam_c))
        return value, grad

    def value(self, theta: np.ndarray) -> float:
        return self.value_and_grad(theta)[0]

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.value_and_grad(theta)[1]


def weighted_log_likelihood(model: RatingModel, matches: Sequence[MatchRecord],
                            config: DecayConfig | None = None) -> float:
    """Time-weighted log-likelihood of ``matches`` under the parameters in ``model``."""
    config = config or model.config
    bivariate = model.covariance > 0
    teams = sorted(model.strengths)
    objective = RatingObjective(matches, config, bivariate=bivariate, teams=teams)
    theta = objective.pack(model.strengths, model.intercept, model.home_effect, model.covariance)
    return objective.value(theta)


# ---------------------------------------------------------------------------
# fitting


def _newton_polish(objective: RatingObjective, theta: np.ndarray, gtol: float, steps: int = 20):
    """Finish a quasi-Newton run with damped Newton steps on a finite-difference Hessian."""
    value, grad = objective.value_and_grad(theta)
    for _ in range(steps):
        if np.abs(grad).max() < gtol:
            break
        eps = 1e-6
        hess = np.empty((len(theta), len(theta)))
        for k in range(len(theta)):
            e = np.zeros_like(theta)
            e[k] = eps
            hess[:, k] = (objective.gradient(theta + e) - objective.gradient(theta - e)) / (2 * eps)
        hess = 0.5 * (hess + hess.T)
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-4:
            cand = theta + t * step
            cv, cg = objective.value_and_grad(cand)
            if cv >= value - 1e-12 * abs(value):
                theta, value, grad = cand, cv, cg
                break
            t *= 0.5
        else:
            break
    return theta, value, grad


def fit_ratings(matches: Sequence[MatchRecord], config: DecayConfig,
                opt: OptimizerSettings | None = None) -> RatingModel:
    """Maximise the time-weighted likelihood with BFGS.

    Raises :class:`ConvergenceError` when the gradient infinity-norm is still
    above ``opt.gtol`` after ``opt.max_iter`` iterations.
    """
    opt = opt or OptimizerSettings()
    objective = RatingObjective(matches, config, bivariate=opt.bivariate)
    theta0 = objective.initial_theta(opt.initial_strengths)

    def fun(theta):
        v, g = objective.value_and_grad(theta)
        return -v, -g

    res = optimize.minimize(fun, theta0, jac=True, method="BFGS",
                            options={"gtol": opt.gtol, "maxiter": opt.max_iter})
    theta, grad = res.x, -res.jac
    iterations = int(res.nit)
    if np.abs(grad).max() >= opt.gtol and iterations < opt.max_iter:
        # line search stalled on round-off; finish with Newton steps
        theta, _, grad = _newton_polish(objective, theta, opt.gtol)
    gnorm = float(np.abs(grad).max())
    if gnorm >= opt.gtol:
        if iterations >= opt.max_iter or gnorm > 1e-4 * max(1.0, objective.w.sum()):
            raise ConvergenceError(
                f"rating fit did not converge after {iterations} iterations "
                f"(gradient norm {gnorm:.3e})", iterations=iterations, gradient_norm=gnorm)
        logger.warning("rating fit stopped at gradient norm %.3e (target %.1e)", gnorm, opt.gtol)

    params = objective.unpack(theta)
    extreme = sorted(t for t, r in params["strengths"].items() if abs(r) > STRENGTH_BOUND)
    if extreme:
        warnings.warn(f"strengths beyond +/-{STRENGTH_BOUND} for {', '.join(extreme)}; "
                      "these teams are poorly identified by the data", RatingWarning, stacklevel=2)
    return RatingModel(config=config, n_matches=objective.n_matches, iterations=iterations,
                       gradient_norm=gnorm, **params)


# ---------------------------------------------------------------------------
# prediction and scoring


@dataclass(frozen=True)
class MatchPrediction:
    lambda_i: float
    lambda_j: float
    p_win: float
    p_draw: float
    p_loss: float

    @property
    def probs(self) -> tuple[float, float, float]:
        return self.p_win, self.p_draw, self.p_loss


def outcome_probabilities(lam_i: float, lam_j: float, lam_c: float = 0.0,
                          tail: float = 1e-10) -> tuple[float, float, float]:
    mean_i, mean_j = lam_i + lam_c, lam_j + lam_c
    n = max(10, int(max(mean_i, mean_j)) + 10)
    while stats.poisson.sf(n, mean_i) + stats.poisson.sf(n, mean_j) >= tail:
        n += 5
    grid = bivariate_poisson_pmf_grid(lam_i, lam_j, lam_c, n)
    return float(np.tril(grid, -1).sum()), float(np.trace(grid)), float(np.triu(grid, 1).sum())


def predict_match(model: RatingModel, team_i: str, team_j: str, venue: str = "neutral") -> MatchPrediction:
    """Expected goals and win/draw/loss probabilities for ``team_i`` against ``team_j``.

    ``venue`` is ``"home_i"``, ``"home_j"`` or ``"neutral"``.
    """
    for t in (team_i, team_j):
        if t not in model.strengths:
            raise DataError(f"unknown team {t!r}")
    if venue not in ("home_i", "home_j", "neutral"):
        raise DataError(f"venue must be home_i, home_j or neutral, got {venue!r}")
    diff = model.strengths[team_i] - model.strengths[team_j]
    lam_i = math.exp(model.intercept + diff + (model.home_effect if venue == "home_i" else 0.0))
    lam_j = math.exp(model.intercept - diff + (model.home_effect if venue == "home_j" else 0.0))
    return MatchPrediction(lam_i, lam_j, *outcome_probabilities(lam_i, lam_j, model.covariance))


def rank_probability_score(probs: Sequence[float], outcome) -> float:
    """RPS of a (win, draw, loss) forecast; ``outcome`` is a label or index 0..2."""
    p = np.asarray(probs, dtype=float)
    if p.shape != (3,) or np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-8:
        raise DataError(f"probabilities must be three values summing to 1, got {probs}")
    k = OUTCOMES.index(outcome) if isinstance(outcome, str) else int(outcome)
    observed = np.zeros(3)
    observed[k] = 1.0
    cdf_diff = np.cumsum(p)[:2] - np.cumsum(observed)[:2]
    return float(0.5 * np.sum(cdf_diff**2))


def match_outcome(m: MatchRecord) -> str:
    if m.home_goals > m.away_goals:
        return "win"
    return "draw" if m.home_goals == m.away_goals else "loss"


@dataclass(frozen=True)
class HalfPeriodSearch:
    best: float
    scores: Mapping[float, float]
    n_forecasts: int


def tune_half_period(matches: Sequence[MatchRecord],
                     candidate_grid: Sequence[float] = DEFAULT_HALF_PERIOD_GRID,
                     eval_window: tuple[dt.date, dt.date] | None = None,
                     window_years: int = 8, step_days: int = 182,
                     opt: OptimizerSettings | None = None) -> HalfPeriodSearch:
    """Choose the half period with the lowest average RPS in a rolling-origin evaluation.

    The evaluation window ``[start, end)`` is cut into blocks of ``step_days``.
    For each block the model is refitted on the ``window_years`` before the
    block start and scored on the block's matches.  Matches involving a team
    absent from the training data are skipped.  Ties go to the earlier grid
    entry.
    """
    from .ingest import subtract_years

    grid = list(candidate_grid)
    if not grid:
        raise DataError("empty half-period grid")
    matches = sorted(matches, key=lambda m: m.date)
    if eval_window is None:
        raise DataError("an evaluation window is required")
    start, end = eval_window
    blocks = []
    origin = start
    while origin < end:
        stop = min(origin + dt.timedelta(days=step_days), end)
        test = [m for m in matches if origin <= m.date < stop]
        lo = subtract_years(origin, window_years)
        train = [m for m in matches if lo <= m.date < origin]
        if test and train:
            blocks.append((origin, train, test))
        origin = stop
    if not blocks:
        raise DataError(f"no matches to evaluate between {start} and {end}")

    scores = {}
    n_forecasts = 0
    opt = opt or OptimizerSettings()
    for hp in grid:
        total, count = 0.0, 0
        for origin, train, test in blocks:
            model = fit_ratings(train, DecayConfig(origin, hp), opt)
            for m in test:
                if m.home_team not in model.strengths or m.away_team not in model.strengths:
                    continue
                venue = "neutral" if m.neutral else "home_i"
                pred = predict_match(model, m.home_team, m.away_team, venue)
                total += rank_probability_score(pred.probs, match_outcome(m))
                count += 1
        if count == 0:
            raise DataError("evaluation window contains no predictable matches")
        scores[hp] = total / count
        n_forecasts = count
        logger.info("half period %g: mean RPS %.5f over %d forecasts", hp, scores[hp], count)
    best = min(grid, key=lambda hp: (scores[hp], grid.index(hp)))
    return HalfPeriodSearch(best=best, scores=scores, n_forecasts=n_forecasts)


def with_metadata(model: RatingModel, **meta) -> RatingModel:
    return replace(model, metadata={**model.metadata, **meta})

"""Independent reference computations used as test oracles.

Nothing here calls into the package's numerical code: the pmf is evaluated
term by term in extended precision, series are summed with mpmath and
synthetic data are drawn straight from the generating model.
"""

from __future__ import annotations

import datetime as dt

import mpmath as mp
import numpy as np

from wcforecast.ingest import MatchRecord

mp.mp.dps = 40

# frozen oracle values (mpmath, 40 digits)
P_DRAW_UNIT = 0.30850832255367103953   # sum_k e^-2 / (k!)^2
P_DRAW_ET = 0.57468747527825973120     # same series at intensity 0.33
P_SHOOTOUT_UNIT = 0.17729586899070020460
LOG_PMF_2_1 = -2.3797072967322375680   # log P(2, 1 | 1.3, 0.9, 0.2)
GRID_WDL = (0.76703667394131157402, 0.15155927643449893092, 0.08140404962418949506)  # e^0.9 vs e^-0.4
MYTOP_DELTA = 0.81574420231250426134   # 2015 MyTopSportsbooks column


def mp_bivariate_pmf(z: int, y: int, l1, l2, lc):
    """Bivariate Poisson pmf summed term by term in extended precision."""
    l1, l2, lc = mp.mpf(l1), mp.mpf(l2), mp.mpf(lc)
    s = mp.mpf(0)
    for k in range(min(z, y) + 1):
        s += mp.binomial(z, k) * mp.binomial(y, k) * mp.factorial(k) * (lc / (l1 * l2)) ** k
    return mp.e ** (-(l1 + l2 + lc)) * l1 ** z / mp.factorial(z) * l2 ** y / mp.factorial(y) * s


def poisson_draw_probability(lam) -> float:
    """P(two independent Poisson(lam) counts are equal) = e^{-2 lam} I0(2 lam)."""
    lam = mp.mpf(lam)
    return float(mp.e ** (-2 * lam) * mp.besseli(0, 2 * lam))


def grid_outcomes(l1, l2, lc, max_goals=30):
    w = d = l = mp.mpf(0)
    for z in range(max_goals + 1):
        for y in range(max_goals + 1):
            p = mp_bivariate_pmf(z, y, l1, l2, lc)
            if z > y:
                w += p
            elif z == y:
                d += p
            else:
                l += p
    return float(w), float(d), float(l)


def synthetic_league(n_teams=20, n_matches=2000, seed=0, beta0=0.1, home=0.3, lam_c=0.1,
                     sd=0.5, reference=dt.date(2019, 6, 1), span_days=0):
    """Matches drawn from the bivariate Poisson model with known strengths.

    Matches are dated ``reference - 1 - U{0..span_days}``; ``span_days=0``
    puts every match the day before the reference so all weights are ~1.
    """
    rng = np.random.default_rng(seed)
    teams = [f"T{i:02d}" for i in range(n_teams)]
    r = rng.normal(0, sd, n_teams)
    r -= r.mean()
    out = []
    for _ in range(n_matches):
        i, j = rng.choice(n_teams, 2, replace=False)
        neutral = bool(rng.random() < 0.3)
        l1 = np.exp(beta0 + r[i] - r[j] + (0 if neutral else home))
        l2 = np.exp(beta0 + r[j] - r[i])
        c = rng.poisson(lam_c)
        day = reference - dt.timedelta(days=1 + int(rng.integers(0, span_days + 1)))
        out.append(MatchRecord(day, teams[i], teams[j], int(rng.poisson(l1) + c), int(rng.poisson(l2) + c),
                               teams[i], neutral))
    return out, dict(zip(teams, r))


def poisson_regression_data(rng, n, coef=(0.5, 0.25), p=6, intercept=0.2):
    """Counts y ~ Poisson(exp(intercept + sum coef_k x_k)); the remaining columns are noise."""
    X = rng.normal(size=(n, p))
    eta = intercept + X[:, :len(coef)] @ np.asarray(coef)
    return X, rng.poisson(np.exp(eta)).astype(float)

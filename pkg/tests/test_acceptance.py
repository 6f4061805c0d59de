"""Acceptance criteria, one test each.

Every test records a ``[criterion N] PASS|FAIL ...`` line that pytest prints
in an "acceptance criteria" section at the end of the run.  The module also
runs standalone: ``python tests/test_acceptance.py``.
"""

import datetime as dt
import filecmp
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from conftest import ACCEPTANCE_LINES, ConstantModel  # noqa: E402
from wcforecast.consensus import (  # noqa: E402
    InverseConfig, fit_abilities_inverse, overround_residual, simulate_bt_tournament, strip_overround,
)
from wcforecast.design import DIFF_FEATURES, build_design  # noqa: E402
from wcforecast.forest import ForestConfig, fit_forest_arrays, fit_tree, oob_permutation_deltas  # noqa: E402
from wcforecast.ingest import (  # noqa: E402
    MatchRecord, covariates_by_key, load_covariates, load_odds, load_tournament,
)
from wcforecast.rating import (  # noqa: E402
    DecayConfig, RatingObjective, bivariate_poisson_pmf_grid, fit_ratings, time_weight,
)
from wcforecast.tournament import REPORT_COLUMNS, knockout_outcome, monte_carlo  # noqa: E402

DATA = Path(__file__).parent / "data"


def spec2019():
    from importlib.resources import files
    return load_tournament(files("wcforecast") / "data" / "wwc2019.json")


def record(n, ok, detail, t0):
    line = f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}  ({time.perf_counter() - t0:.1f} s)"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def test_criterion_01_decay_weight():
    t0 = time.perf_counter()
    vals = (time_weight(500, 500), time_weight(0, 500), time_weight(0, 37.5), time_weight(0, 1e6))
    ok = vals[0] == 0.5 and all(v == 1.0 for v in vals[1:])
    record(1, ok, f"w(500,500)={vals[0]!r}, w(0,.)={vals[1:]}", t0)


def test_criterion_02_bivariate_pmf():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_mass = worst_indep = worst_mean = 0.0
    for _ in range(100):
        l1, l2, lc = rng.uniform(0.01, 3.0, 3)
        grid = bivariate_poisson_pmf_grid(l1, l2, lc, 30)
        goals = np.arange(31)
        worst_mass = max(worst_mass, 1 - grid.sum())
        worst_mean = max(worst_mean, abs(goals @ grid.sum(axis=1) - (l1 + lc)),
                         abs(goals @ grid.sum(axis=0) - (l2 + lc)))
        indep = bivariate_poisson_pmf_grid(l1, l2, 0.0, 30)
        product = np.outer(stats.poisson.pmf(goals, l1), stats.poisson.pmf(goals, l2))
        worst_indep = max(worst_indep, np.abs(indep - product).max())
    ok = worst_mass <= 1e-6 and worst_indep < 1e-12 and worst_mean < 1e-5
    record(2, ok, f"1-mass max {worst_mass:.1e}, |indep-product| max {worst_indep:.1e}, "
                  f"marginal mean err max {worst_mean:.1e}", t0)


def test_criterion_03_rating_recovery():
    t0 = time.perf_counter()
    matches, truth = oracles.synthetic_league(20, 2000, seed=3)
    model = fit_ratings(matches, DecayConfig(dt.date(2019, 6, 1), 500))
    teams = sorted(truth)
    true = np.array([truth[t] for t in teams])
    fit = np.array([model.strengths[t] for t in teams])
    r = np.corrcoef(true, fit)[0, 1]
    rmse = math.sqrt(np.mean((true - fit) ** 2))
    total = abs(fit.sum())
    record(3, r > 0.98 and rmse < 0.1 and total < 1e-8, f"r={r:.4f}, RMSE={rmse:.4f}, |sum r|={total:.1e}", t0)


def test_criterion_04_gradient():
    t0 = time.perf_counter()
    matches, _ = oracles.synthetic_league(10, 500, seed=4, span_days=1500)
    obj = RatingObjective(matches, DecayConfig(dt.date(2019, 6, 1), 500))
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(10):
        theta = obj.initial_theta() + rng.normal(0, 0.3, obj.n_params)
        g = obj.gradient(theta)
        h = 1e-6
        fd = np.array([(obj.value(theta + e) - obj.value(theta - e)) / (2 * h) for e in np.eye(obj.n_params) * h])
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
    record(4, worst < 1e-5, f"max relative error {worst:.1e} over 10 points", t0)


def test_criterion_05_overround():
    t0 = time.perf_counter()
    sheet = next(s for s in load_odds(DATA / "odds_2015_wide.csv") if s.bookmaker == "MyTopSportsbooks")
    book = strip_overround(sheet)
    resid = abs(overround_residual(book.delta, list(sheet.quotes.values())))
    total = abs(sum(book.probs.values()) - 1)
    top = max(book.probs, key=book.probs.get)
    ok = resid < 1e-12 and total < 1e-10 and top == "United States"
    record(5, ok, f"delta={book.delta:.6f}, residual={resid:.1e}, |sum p - 1|={total:.1e}, top={top}", t0)


def test_criterion_06_inverse_round_trip():
    t0 = time.perf_counter()
    spec = spec2019()
    rng = np.random.default_rng(6)
    true_log = rng.normal(0, 0.5, 24)
    true_log -= true_log.mean()
    target = simulate_bt_tournament(dict(zip(spec.teams, np.exp(true_log))), spec, 500_000, seed=61)
    assert min(target.values()) > 0
    res = fit_abilities_inverse(target, spec, InverseConfig(runs_per_iter=500_000, seed=62))
    fitted = np.array([res.log_abilities[t] for t in spec.teams])
    r = np.corrcoef(true_log, fitted)[0, 1]
    ok = r > 0.99 and res.fit_error < 5e-4
    record(6, ok, f"log-ability r={r:.4f}, fit_error={res.fit_error:.1e} after {res.iterations} passes", t0)


def test_criterion_07_forest():
    t0 = time.perf_counter()
    mse_ok = imp_ok = 0
    reps = 100
    for r in range(reps):
        rng = np.random.default_rng([7, r])
        X, y = oracles.poisson_regression_data(rng, 400)
        Xt, yt = oracles.poisson_regression_data(rng, 2000)
        forest = fit_forest_arrays(X, y, ForestConfig(n_trees=250, seed=r))
        tree = fit_tree(X, y, seed=r)
        mse_ok += np.mean((forest.predict(Xt) - yt) ** 2) <= np.mean((tree.predict(Xt) - yt) ** 2)
        imp = oob_permutation_deltas(forest, X, y, seed=r).mean
        # both signal columns above every noise column
        imp_ok += min(imp[0], imp[1]) > imp[2:].max()
    ok = mse_ok == reps and imp_ok >= 95
    record(7, ok, f"forest MSE <= tree MSE in {mse_ok}/{reps}, signal > noise in {imp_ok}/{reps}", t0)


def test_criterion_08_design():
    t0 = time.perf_counter()
    cov = covariates_by_key(load_covariates(DATA / "covariates_2011_excerpt.csv"))
    abil = {"France": (1.69, 0.02), "Germany": (2.35, 1.25), "Nigeria": (1.39, -0.47), "Canada": (1.82, -0.17)}
    pois = {(2011, t): v[0] for t, v in abil.items()}
    odds = {(2011, t): v[1] for t, v in abil.items()}
    day = dt.date(2011, 6, 26)
    pairs = [("Nigeria", "France"), ("Germany", "Canada"), ("Canada", "France"), ("Germany", "Nigeria"),
             ("France", "Germany"), ("Canada", "Nigeria")]
    rng = np.random.default_rng(8)
    matches = [MatchRecord(day + dt.timedelta(days=i), a, b, int(rng.poisson(1.3)), int(rng.poisson(1.3)),
                           "Germany", a != "Germany" and b != "Germany", "group")
               for i, (a, b) in enumerate(pairs)]
    rows = build_design(matches, cov, pois, odds)
    antisym = all(all(x == -y for x, y in zip(a.numeric_diffs, b.numeric_diffs))
                  for a, b in zip(rows[::2], rows[1::2]))
    age = DIFF_FEATURES.index("age")
    ng_fr = (rows[0].numeric_diffs[age], rows[1].numeric_diffs[age])
    ok = antisym and abs(ng_fr[0] + 3.62) < 1e-12 and abs(ng_fr[1] - 3.62) < 1e-12
    record(8, ok, f"{len(rows) // 2} matches antisymmetric={antisym}, Nigeria-France age diff "
                  f"{ng_fr[0]:+.2f}/{ng_fr[1]:+.2f}", t0)


def test_criterion_09_tournament_invariants(tmp_path):
    t0 = time.perf_counter()
    spec = spec2019()
    n = 20_000
    rep = monte_carlo(ConstantModel(1.2), spec, n, seed=9)
    sums = rep.counts.sum(axis=0)
    exact = sums.tolist() == [16 * n, 8 * n, 4 * n, 2 * n, n]
    mono = bool(np.all(np.diff(rep.counts, axis=1) <= 0))
    p = rep.probabilities[:, -1]
    se = math.sqrt((1 / 24) * (23 / 24) / n)
    dev = float(np.abs(p - 1 / 24).max() / se)
    (tmp_path / "a.csv").write_text(rep.to_csv(["seed: 9"]))
    (tmp_path / "b.csv").write_text(monte_carlo(ConstantModel(1.2), spec, n, seed=9).to_csv(["seed: 9"]))
    same = filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)
    ok = exact and mono and dev < 4 and same
    record(9, ok, f"exact sums={exact}, monotone={mono}, max champion deviation {dev:.2f} SE, "
                  f"byte-identical={same}", t0)


def test_criterion_10_knockout_mechanics():
    t0 = time.perf_counter()
    n = 1_000_000
    rng = np.random.default_rng(10)
    shootouts = sum(knockout_outcome(1.0, 1.0, rng)[1] == "shootout" for _ in range(n))
    p0 = oracles.poisson_draw_probability(1.0) * oracles.poisson_draw_probability(0.33)
    se = math.sqrt(p0 * (1 - p0) / n)
    z = (shootouts / n - p0) / se
    ok = abs(z) < 3 and abs(p0 - oracles.P_SHOOTOUT_UNIT) < 1e-15
    record(10, ok, f"shootout frequency {shootouts / n:.5f} vs {p0:.5f} ({z:+.2f} SE)", t0)


def test_criterion_11_report_format():
    t0 = time.perf_counter()
    rep = monte_carlo(ConstantModel(1.2), spec2019(), 500, seed=11)
    lines = [ln for ln in rep.to_csv(["seed: 11"]).splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    cells = [ln.split(",") for ln in lines[1:]]
    one_decimal = all(len(c) == 6 and all(v.count(".") == 1 and len(v.split(".")[1]) == 1 and
                                          0 <= float(v) <= 100 for v in c[1:]) for c in cells)
    ok = header == ["team", *REPORT_COLUMNS] and len(cells) == 24 and one_decimal
    record(11, ok, f"columns {header}, {len(cells)} team rows, one-decimal percentages={one_decimal}", t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))

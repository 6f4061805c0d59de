import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from wcforecast.consensus import (
    AdjustedBook, ConsensusResult, InverseConfig, OverroundError, bradley_terry, consensus_probabilities,
    fit_abilities_inverse, load_consensus, overround_residual, require_converged, save_consensus,
    simulate_bt_tournament, strip_overround,
)
from wcforecast.errors import ConvergenceError, DataError
from wcforecast.ingest import OddsSheet, load_odds


def test_fair_two_way_book():
    book = strip_overround(OddsSheet("fair", {"A": 2.0, "B": 2.0}))
    assert book.delta == 1.0 and book.zero_overround
    assert book.probs == {"A": 0.5, "B": 0.5}


def test_closed_form_two_way_root():
    book = strip_overround(OddsSheet("b", {"A": 1.8, "B": 1.8}))
    assert book.delta == pytest.approx(0.8, abs=1e-14)
    assert book.probs["A"] == pytest.approx(0.5, abs=1e-14)
    assert book.overround == pytest.approx(0.2, abs=1e-14)
    assert not book.zero_overround


def test_published_2015_book(data_dir):
    sheet = next(s for s in load_odds(data_dir / "odds_2015_wide.csv") if s.bookmaker == "MyTopSportsbooks")
    book = strip_overround(sheet)
    assert abs(overround_residual(book.delta, list(sheet.quotes.values()))) < 1e-12
    assert abs(book.delta - oracles.MYTOP_DELTA) < 1e-12
    assert abs(sum(book.probs.values()) - 1) < 1e-10
    assert max(book.probs, key=book.probs.get) == "United States"
    assert 0 < book.delta < 1


def test_arbitrage_book_rejected():
    with pytest.raises(OverroundError, match="< 1"):
        strip_overround(OddsSheet("arb", {"A": 2.5, "B": 2.5}))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(1.01, 1e4), min_size=2, max_size=30).filter(lambda q: sum(1 / x for x in q) > 1 + 1e-9))
def test_strip_overround_properties(quotes):
    book = strip_overround(OddsSheet("b", {f"T{i}": q for i, q in enumerate(quotes)}))
    assert abs(sum(book.probs.values()) - 1) < 1e-10
    assert abs(overround_residual(book.delta, quotes)) < 1e-12
    order = np.argsort(quotes, kind="stable")
    p = np.array([book.probs[f"T{i}"] for i in order])
    q = np.array(quotes)[order]
    assert np.all((np.diff(p) < 0) | (np.diff(q) == 0))


def _book(name, probs):
    return AdjustedBook(name, 0.9, probs)


def test_consensus_single_and_identical_books():
    p = {"A": 0.5, "B": 0.3, "C": 0.2}
    assert consensus_probabilities([_book("x", p)]) == pytest.approx(p, abs=1e-15)
    assert consensus_probabilities([_book("x", p), _book("y", p)]) == pytest.approx(p, abs=1e-15)


def test_consensus_two_team_logit_arithmetic():
    res = consensus_probabilities([_book("x", {"A": 0.2, "B": 0.8}), _book("y", {"A": 0.4, "B": 0.6})])
    # mean logit of A is log sqrt((0.2/0.8)(0.4/0.6)) = log sqrt(1/6)
    odds = math.sqrt(1 / 6)
    assert res["A"] == pytest.approx(odds / (1 + odds), abs=1e-15)
    assert res["B"] == pytest.approx(1 / (1 + odds), abs=1e-15)


def test_consensus_requires_same_teams():
    with pytest.raises(DataError):
        consensus_probabilities([_book("x", {"A": 0.5, "B": 0.5}), _book("y", {"A": 0.5, "C": 0.5})])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4), min_size=2, max_size=5), st.randoms())
def test_consensus_order_invariant(raw, rnd):
    books = [_book(f"b{k}", {f"T{i}": v / sum(r) for i, v in enumerate(r)}) for k, r in enumerate(raw)]
    shuffled = books[:]
    rnd.shuffle(shuffled)
    a, b = consensus_probabilities(books), consensus_probabilities(shuffled)
    assert a == pytest.approx(b, abs=1e-14)
    assert abs(sum(a.values()) - 1) < 1e-10


def test_bradley_terry():
    assert bradley_terry(1, 1) == 0.5
    assert bradley_terry(3, 1) == 0.75
    rng = np.random.default_rng(0)
    for a, b in rng.uniform(0.01, 100, (100, 2)):
        assert bradley_terry(a, b) + bradley_terry(b, a) == pytest.approx(1, abs=1e-15)
    with pytest.raises(DataError):
        bradley_terry(0, 1)


def test_bt_simulation_uniform(spec2019):
    runs = 200_000
    freq = simulate_bt_tournament(dict.fromkeys(spec2019.teams, 1.0), spec2019, runs, seed=1)
    p = 1 / 24
    se = math.sqrt(p * (1 - p) / runs)
    assert sum(freq.values()) == pytest.approx(1, abs=1e-12)
    assert max(abs(v - p) for v in freq.values()) < 4 * se


def test_bt_simulation_dominance_and_determinism(spec2019):
    ab = dict.fromkeys(spec2019.teams, 1.0)
    ab["Thailand"] = 1e6
    assert simulate_bt_tournament(ab, spec2019, 20_000, seed=3)["Thailand"] > 0.99
    a = simulate_bt_tournament(ab, spec2019, 5_000, seed=9)
    b = simulate_bt_tournament(ab, spec2019, 5_000, seed=9)
    assert a == b
    del ab["Chile"]
    with pytest.raises(DataError, match="Chile"):
        simulate_bt_tournament(ab, spec2019, 100, seed=0)


def test_inverse_uniform_target(spec2019):
    res = fit_abilities_inverse(dict.fromkeys(spec2019.teams, 1 / 24), spec2019,
                                InverseConfig(runs_per_iter=100_000, seed=2))
    assert res.converged and res.fit_error < 5e-4
    la = np.array(list(res.log_abilities.values()))
    assert abs(la.mean()) < 1e-12
    assert la.std() < 0.05


def test_inverse_non_convergence_is_flagged(spec2019):
    target = {t: (0.5 if t == "France" else 0.5 / 23) for t in spec2019.teams}
    res = fit_abilities_inverse(target, spec2019, InverseConfig(runs_per_iter=2_000, max_iters=1, seed=0))
    assert not res.converged and res.fit_error >= 5e-4 and res.iterations == 1
    with pytest.raises(ConvergenceError):
        require_converged(res)


def test_inverse_rejects_bad_targets(spec2019):
    with pytest.raises(DataError):
        fit_abilities_inverse(dict.fromkeys(spec2019.teams, 1 / 25), spec2019)
    with pytest.raises(DataError, match="Japan"):
        fit_abilities_inverse({t: 1 / 23 for t in spec2019.teams if t != "Japan"}, spec2019)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(1e-3, 1e3))
def test_bt_scale_invariance(a, b, c):
    assert bradley_terry(a * c, b * c) == pytest.approx(bradley_terry(a, b), rel=1e-12)


def test_scaled_abilities_simulate_identically(spec2019):
    rng = np.random.default_rng(4)
    ab = dict(zip(spec2019.teams, np.exp(rng.normal(0, 0.5, 24))))
    scaled = {t: 7.5 * v for t, v in ab.items()}
    assert simulate_bt_tournament(ab, spec2019, 10_000, 5) == pytest.approx(
        simulate_bt_tournament(scaled, spec2019, 10_000, 5), abs=1e-12)


def test_result_round_trip(tmp_path):
    res = ConsensusResult({"A": 0.6, "B": 0.4}, {"A": 0.2, "B": -0.2}, 1e-4, True, 3,
                          {"A": 0.6001, "B": 0.3999}, {"year": 2019})
    save_consensus(res, tmp_path / "c.json")
    assert load_consensus(tmp_path / "c.json") == res

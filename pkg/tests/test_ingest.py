import datetime as dt
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wcforecast.errors import DataError
from wcforecast.ingest import (
    MatchRecord, OddsSheet, TeamCovariates, canonical_team, load_covariates, load_matches, load_odds,
    load_tournament, load_tournaments, parse_tournament, tournament_to_dict, write_covariates,
    write_matches, write_odds,
)

HEADER = "date,home_team,away_team,home_goals,away_goals,country,neutral\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_match_rows_from_published_excerpt(data_dir):
    ms = load_matches(data_dir / "matches_2011_excerpt.csv")
    iceland = next(m for m in ms if m.home_team == "Iceland")
    assert (iceland.away_team, iceland.home_goals, iceland.away_goals, iceland.neutral) == ("Bulgaria", 6, 0, False)
    usa = next(m for m in ms if m.home_team == "United States")
    assert (usa.away_team, usa.home_goals, usa.away_goals) == ("Iceland", 4, 2)
    assert usa.neutral and usa.venue_country == "Portugal"
    assert [m.date for m in ms] == sorted(m.date for m in ms)


def test_empty_file_gives_no_matches(tmp_path):
    assert load_matches(write(tmp_path, "m.csv", HEADER)) == []


def test_window_filter(tmp_path):
    body = HEADER + "".join(f"{d},A,B,1,0,A,no\n" for d in
                            ("2003-06-01", "2003-06-02", "2010-01-01", "2011-06-01", "2011-06-02"))
    ms = load_matches(write(tmp_path, "m.csv", body), dt.date(2011, 6, 2), 8)
    assert [m.date.isoformat() for m in ms] == ["2003-06-02", "2010-01-01", "2011-06-01"]


@pytest.mark.parametrize("row, fragment", [
    ("2011-13-01,A,B,1,0,A,no", "date"),
    ("2011-01-01,A,B,-1,0,A,no", "negative"),
    ("2011-01-01,A,A,1,0,A,no", "itself"),
    ("2011-01-01,A,B,x,0,A,no", "home_goals"),
    ("2011-01-01,A,B,1,0,A,maybe", "neutral"),
])
def test_malformed_rows_report_line(tmp_path, row, fragment):
    p = write(tmp_path, "m.csv", HEADER + "2011-01-01,A,B,1,0,A,no\n" + row + "\n")
    with pytest.raises(DataError) as err:
        load_matches(p)
    assert "line 3" in str(err.value) and fragment in str(err.value)


def test_missing_column_and_file(tmp_path):
    with pytest.raises(DataError, match="neutral"):
        load_matches(write(tmp_path, "m.csv", "date,home_team,away_team,home_goals,away_goals,country\n"))
    with pytest.raises(DataError, match="not found"):
        load_matches(tmp_path / "nope.csv")


def test_aliases_applied():
    assert canonical_team("USA") == "United States"
    assert canonical_team(" China ") == "China PR"
    assert canonical_team("Brazil") == "Brazil"


def test_stage_column(tmp_path):
    p = write(tmp_path, "m.csv", HEADER.strip() + ",stage\n2011-06-26,Germany,Canada,2,1,Germany,no,group\n"
              "2011-06-20,A,B,1,1,A,no,\n")
    ms = load_matches(p)
    assert [m.stage for m in ms] == [None, "group"]
    with pytest.raises(DataError, match="stage"):
        load_matches(write(tmp_path, "n.csv", HEADER.strip() + ",stage\n2011-06-26,A,B,2,1,A,no,final\n"))


def test_covariates_published_ages(data_dir):
    cov = {c.team: c for c in load_covariates(data_dir / "covariates_2011_excerpt.csv")}
    assert cov["France"].avg_age == 25.86
    assert cov["Nigeria"].avg_age == 22.24
    assert cov["Germany"].host and not cov["France"].host


def _cov_text(**override):
    row = dict(year="2019", team="France", gdp_ratio="1.0", population_ratio="1.0", fifa_rank="4", host="yes",
               continent="yes", confederation="UEFA", max_teammates="0.3", second_max_teammates="0.2",
               avg_age="26.1", cl_players="0.4", mls_players="0.0", legionnaires="0.1")
    row.update(override)
    return ",".join(row) + "\n" + ",".join(row.values()) + "\n"


@pytest.mark.parametrize("override, fragment", [
    ({"confederation": "XYZ"}, "confederation"),
    ({"cl_players": "1.5"}, "outside"),
    ({"fifa_rank": "0"}, "fifa_rank"),
    ({"avg_age": ""}, "empty"),
])
def test_covariate_validation(tmp_path, override, fragment):
    with pytest.raises(DataError, match=fragment):
        load_covariates(write(tmp_path, "c.csv", _cov_text(**override)))


def test_odds_wide_layout_published_rows(data_dir):
    sheets = {s.bookmaker: s for s in load_odds(data_dir / "odds_2015_wide.csv")}
    assert set(sheets) == {"MyTopSportsbooks", "SportsInsights", "BovadaSportsbook"}
    assert [sheets[b].quotes["United States"] for b in ("MyTopSportsbooks", "SportsInsights", "BovadaSportsbook")] \
        == [4.00, 4.00, 3.25]
    assert sheets["BovadaSportsbook"].quotes["Thailand"] == 401.00
    assert sheets["MyTopSportsbooks"].quotes["Thailand"] == 5001.00
    assert all(len(s.quotes) == 24 for s in sheets.values())


def test_odds_rejections(tmp_path):
    with pytest.raises(DataError, match="exceed 1"):
        load_odds(write(tmp_path, "o.csv", "bookmaker,team,quoted_odds\nA,X,0.9\nA,Y,3\n"))
    with pytest.raises(DataError, match="no quote for Y"):
        load_odds(write(tmp_path, "p.csv", "bookmaker,team,quoted_odds\nA,X,2\nA,Y,3\nB,X,2\n"))
    with pytest.raises(DataError, match="duplicate"):
        load_odds(write(tmp_path, "q.csv", "bookmaker,team,quoted_odds\nA,X,2\nA,X,3\n"))


def test_odds_year_filter(tmp_path):
    p = write(tmp_path, "o.csv", "bookmaker,team,quoted_odds,year\nA,X,2,2015\nA,Y,3,2015\nA,X,4,2019\nA,Y,1.5,2019\n")
    (s,) = load_odds(p, year=2019)
    assert s.quotes == {"X": 4.0, "Y": 1.5} and s.year == 2019
    with pytest.raises(DataError, match="several years"):
        load_odds(p)


def test_tournament_bundled(spec2019):
    assert spec2019.year == 2019 and len(spec2019.teams) == 24
    assert spec2019.groups["A"] == ("France", "South Korea", "Norway", "Nigeria")
    assert len(spec2019.bracket.third_place) == 15
    assert spec2019.group_of["Thailand"] == "F"


def test_tournament_validation(spec2019):
    obj = tournament_to_dict(spec2019)
    bad = json.loads(json.dumps(obj))
    bad["groups"]["B"][0] = "France"
    with pytest.raises(DataError, match="24 distinct"):
        parse_tournament(bad)
    bad = json.loads(json.dumps(obj))
    bad["groups"]["C"] = bad["groups"]["C"][:3]
    with pytest.raises(DataError, match="group C"):
        parse_tournament(bad)
    assert parse_tournament(obj) == spec2019


def test_multi_edition_file(tmp_path, spec2019):
    a = tournament_to_dict(spec2019)
    b = dict(a, year=2015)
    p = write(tmp_path, "t.json", json.dumps({"editions": [b, a]}))
    assert sorted(load_tournaments(p)) == [2015, 2019]
    assert load_tournament(p).year == 2019
    assert load_tournament(p, 2015).year == 2015
    with pytest.raises(DataError, match="2011"):
        load_tournament(p, 2011)


# ---------------------------------------------------------------------------
# round trips

names = st.sampled_from(["France", "United States", "Côte d'Azur", "São Tomé", "Korea, North", "A \"B\""])
reals = st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False)
shares = st.floats(min_value=0, max_value=1, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.dates(dt.date(1990, 1, 1), dt.date(2030, 1, 1)), names, names,
                          st.integers(0, 20), st.integers(0, 20), names, st.booleans()), max_size=20))
def test_match_round_trip(tmp_path_factory, rows):
    records = [MatchRecord(*r) for r in rows if r[1] != r[2]]
    p = tmp_path_factory.mktemp("rt") / "m.csv"
    write_matches(records, p)
    assert load_matches(p, aliases={}) == sorted(records, key=lambda m: m.date)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(reals, reals, st.integers(1, 300), st.booleans(), st.booleans(),
                          st.sampled_from(["CAF", "AFC", "UEFA", "CONCACAF", "OFC", "CONMEBOL"]),
                          shares, shares, st.floats(15, 40), shares, shares, shares), max_size=10))
def test_covariate_round_trip(tmp_path_factory, rows):
    records = [TeamCovariates(2019, f"T{i}", *r) for i, r in enumerate(rows)]
    p = tmp_path_factory.mktemp("rt") / "c.csv"
    write_covariates(records, p)
    assert load_covariates(p, aliases={}) == records


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.sampled_from([f"T{i}" for i in range(10)]),
                       st.floats(min_value=1.0001, max_value=1e5, allow_nan=False), min_size=2))
def test_odds_round_trip(tmp_path_factory, quotes):
    sheets = [OddsSheet("A", quotes), OddsSheet("B", {t: q + 1 for t, q in quotes.items()})]
    p = tmp_path_factory.mktemp("rt") / "o.csv"
    write_odds(sheets, p)
    assert load_odds(p, aliases={}) == sheets

import io
import json
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import business_days, flat_bar, post, ts
from pndetect.ingestion import (
    Comment,
    DuplicateIdError,
    EventWindow,
    IngestError,
    OhlcvBar,
    Outcome,
    Post,
    build_event_window,
    daily_counts,
    load_ohlcv_dir,
    parse_comments,
    parse_listings,
    parse_ohlcv,
    parse_posts,
    parse_sector_map,
    sector_histogram,
    window_from_record,
    window_posts,
    window_to_record,
    write_comments,
    write_ohlcv,
    write_posts,
    write_sector_map,
)
from pndetect.text_pipeline import SectorMap

DAYS = business_days(date(2020, 4, 1), 9)


def nine_bars():
    return [flat_bar(d, 1.0 + i / 100, 100 + i) for i, d in enumerate(DAYS)]


# -- parse_posts --------------------------------------------------------------------

def test_parse_post_example():
    line = json.dumps({"id": "p1", "author": "u1", "created": 1588000000,
                       "title": "AYTU perfect time to buy", "body": ""})
    (p,) = parse_posts(line + "\n")
    assert p == Post("p1", "u1", 1588000000, "AYTU perfect time to buy", "")


def test_parse_posts_empty_stream():
    assert parse_posts("") == []
    assert parse_posts(io.StringIO("")) == []


def test_parse_posts_duplicate_id():
    rec = {"id": "p1", "author": "u1", "created": 1588000000, "title": "x", "body": ""}
    text = json.dumps(rec) + "\n" + json.dumps(rec) + "\n"
    with pytest.raises(DuplicateIdError) as err:
        parse_posts(text)
    assert err.value.line == 2


def test_parse_posts_keeps_file_order():
    recs = [{"id": f"p{i}", "author": "a", "created": 1588000000 + i, "title": "t", "body": ""}
            for i in (3, 1, 2)]
    posts = parse_posts("\n".join(json.dumps(r) for r in recs))
    assert [p.id for p in posts] == ["p3", "p1", "p2"]


@pytest.mark.parametrize("line, fragment", [
    ("{not json", "line 1"),
    (json.dumps({"id": "p1", "author": "a", "created": 1, "title": "t"}), "body"),
    (json.dumps({"id": "p1", "author": "a", "created": -5, "title": "t", "body": ""}), "created"),
    (json.dumps({"id": "p1", "author": "a", "created": "soon", "title": "t", "body": ""}), "created"),
    (json.dumps({"id": "", "author": "a", "created": 1, "title": "t", "body": ""}), "id"),
    (json.dumps({"id": "p1", "author": "a", "created": 1, "title": " ", "body": ""}), "empty"),
])
def test_parse_posts_malformed(line, fragment):
    with pytest.raises(IngestError) as err:
        parse_posts(line + "\n", source="posts.jsonl")
    assert err.value.line == 1
    assert fragment in str(err.value)


def test_parse_comments_rejects_blank_body():
    line = json.dumps({"id": "c1", "post_id": "p1", "author": "a", "created": 1, "body": "   "})
    with pytest.raises(IngestError):
        parse_comments(line)


# -- parse_ohlcv ----------------------------------------------------------------------

HEADER = "date,open,high,low,close,volume\n"


def test_parse_ohlcv_single_row():
    (bar,) = parse_ohlcv(HEADER + "2020-04-01,1.0,1.0,1.0,1.0,100\n")
    assert bar == OhlcvBar(date(2020, 4, 1), 1.0, 1.0, 1.0, 1.0, 100)


def test_parse_ohlcv_high_below_low():
    with pytest.raises(IngestError) as err:
        parse_ohlcv(HEADER + "2020-04-01,1.5,1.0,2.0,1.5,100\n")
    assert err.value.line == 2


def test_parse_ohlcv_sorts_nine_rows():
    rows = [f"{d.isoformat()},1.0,1.0,1.0,1.0,{i}" for i, d in enumerate(DAYS)]
    text = HEADER + "\n".join(reversed(rows)) + "\n"
    bars = parse_ohlcv(text)
    assert [b.date for b in bars] == DAYS
    assert [b.volume for b in bars] == list(range(9))


@pytest.mark.parametrize("row", [
    "2020-04-01,abc,1.0,1.0,1.0,100",
    "2020-04-01,1.0,1.0,1.0,1.0,-3",
    "2020-04-01,1.0,1.0,1.0,1.0,1.5",
    "2020-04-31,1.0,1.0,1.0,1.0,100",
    "2020-04-01,0.0,1.0,1.0,1.0,100",
    "2020-04-01,1.0,1.0",
])
def test_parse_ohlcv_bad_rows(row):
    with pytest.raises(IngestError):
        parse_ohlcv(HEADER + row + "\n")


def test_parse_ohlcv_header_and_duplicates():
    with pytest.raises(IngestError):
        parse_ohlcv("day,o,h,l,c,v\n")
    with pytest.raises(IngestError):
        parse_ohlcv("")
    with pytest.raises(IngestError):
        parse_ohlcv(HEADER + "2020-04-01,1,1,1,1,1\n2020-04-01,1,1,1,1,2\n")


# -- build_event_window -----------------------------------------------------------------

def test_window_post_on_day_six():
    bars = nine_bars()
    win = build_event_window(post("p", DAYS[5], symbol="ABC"), bars)
    assert win.baseline == tuple(bars[:5])
    assert win.event == tuple(bars[5:9])


def test_window_post_on_day_three_is_skipped():
    assert build_event_window(post("p", DAYS[2], symbol="ABC"), nine_bars()) is None


def test_window_post_on_last_bar():
    bars = nine_bars()
    win = build_event_window(post("p", DAYS[8], symbol="ABC"), bars)
    assert win.baseline == tuple(bars[3:8])
    assert win.event == (bars[8],)


def test_window_after_last_bar_is_skipped():
    assert build_event_window(post("p", date(2020, 5, 1), symbol="ABC"), nine_bars()) is None


def test_weekend_post_starts_at_next_bar():
    days = business_days(date(2020, 4, 6), 9)       # Mon 6 Apr .. Thu 16 Apr
    bars = [flat_bar(d, 1.0) for d in days]
    saturday = date(2020, 4, 11)
    win = build_event_window(post("p", saturday, symbol="ABC"), bars)
    assert win.event[0].date == date(2020, 4, 13)
    assert win.baseline[-1].date == date(2020, 4, 10)


def test_utc_date_boundary():
    # 23:30 UTC on day 6 belongs to day 6 regardless of the local zone
    bars = nine_bars()
    p = Post("p", "a", ts(DAYS[5], hour=23), "t", "", "ABC")
    assert build_event_window(p, bars).event[0].date == DAYS[5]


def test_missing_business_day_is_skipped():
    bars = nine_bars()
    del bars[3]
    assert build_event_window(post("p", DAYS[6], symbol="ABC"), bars) is None


def test_event_window_invariants():
    bars = nine_bars()
    with pytest.raises(ValueError):
        EventWindow("A", "p", tuple(bars[:4]), tuple(bars[4:8]))
    with pytest.raises(ValueError):
        EventWindow("A", "p", tuple(bars[:5]), ())
    with pytest.raises(ValueError):
        EventWindow("A", "p", tuple(bars[1:6]), (bars[0],))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 40), st.integers(0, 45), st.integers(0, 23))
def test_window_dates_never_overlap(n_bars, offset, hour):
    days = business_days(date(2021, 3, 1), n_bars)
    bars = [flat_bar(d, 1.0) for d in days]
    day = date.fromordinal(date(2021, 3, 1).toordinal() + offset)
    win = build_event_window(Post("p", "a", ts(day, hour), "t", "", "ABC"), bars)
    if win is not None:
        dates = [b.date for b in win.baseline + win.event]
        assert dates == sorted(set(dates))
        assert max(b.date for b in win.baseline) < day <= win.event[0].date
        assert len(win.baseline) == 5 and 1 <= len(win.event) <= 4


# -- round trips -----------------------------------------------------------------------

text_st = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=30)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(text_st, st.integers(1, 2**40), text_st,
                          st.one_of(st.none(), st.sampled_from(["AYTU", "MARK"]))),
                min_size=0, max_size=8))
def test_posts_round_trip(rows):
    posts = [Post(f"p{i}", author, created, "title " + title, "", sym)
             for i, (author, created, title, sym) in enumerate(rows)]
    buf = io.StringIO()
    write_posts(posts, buf)
    assert parse_posts(buf.getvalue()) == posts


def test_comments_round_trip():
    comments = [Comment("c1", "p1", "ü", 1588000000, "line\nbreak \"quoted\""),
                Comment("c2", "p1", "b", 1588000001, "plain")]
    buf = io.StringIO()
    write_comments(comments, buf)
    assert parse_comments(buf.getvalue()) == comments


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0001, 5000, allow_nan=False),
                          st.floats(0, 0.5), st.floats(0, 1), st.integers(0, 10**9)),
                min_size=0, max_size=9))
def test_bars_round_trip(rows):
    bars = []
    for d, (low, spread, frac, vol) in zip(DAYS, rows):
        high = low * (1 + spread)
        mid = min(high, max(low, low + frac * (high - low)))
        bars.append(OhlcvBar(d, mid, high, low, mid, vol))
    buf = io.StringIO()
    write_ohlcv(bars, buf)
    assert parse_ohlcv(buf.getvalue()) == bars


def test_window_record_round_trip():
    bars = nine_bars()
    win = build_event_window(post("p9", DAYS[5], symbol="ABC"), bars)
    assert window_from_record(json.loads(json.dumps(window_to_record(win)))) == win


def test_sector_map_round_trip_and_lookup():
    sm = parse_sector_map("symbol,sector\naytu,Healthcare\nMARK,Technology\n")
    assert sm.lookup("AYTU") == "Healthcare"
    assert sm.lookup("aytu") == "Healthcare"
    assert sm.lookup("ZZZ") == "Unknown"
    buf = io.StringIO()
    write_sector_map(sm, buf)
    assert parse_sector_map(buf.getvalue()) == sm
    with pytest.raises(IngestError):
        parse_sector_map("AYTU\n")


def test_listings_and_ohlcv_dir(tmp_path):
    assert parse_listings("# tickers\naytu\nMARK\n\n") == {"AYTU", "MARK"}
    with open(tmp_path / "abc.csv", "w") as fh:
        write_ohlcv(nine_bars(), fh)
    assert load_ohlcv_dir(tmp_path) == {"ABC": nine_bars()}


# -- window_posts ----------------------------------------------------------------------

def test_window_posts_outcomes_and_conservation():
    bars = {"AYTU": nine_bars(), "MARK": nine_bars()}
    listings = {"AYTU", "MARK", "GHST"}
    posts = [
        post("a", DAYS[5], title="AYTU perfect time to buy"),
        post("b", DAYS[5], title="buy AYTU and MARK"),
        post("c", DAYS[5], title="I LOVE THIS"),
        post("d", DAYS[5], title="$ghst is next"),
        post("e", DAYS[2], title="$MARK early"),
        post("f", DAYS[6], title="no ticker here", symbol="MARK"),
    ]
    res = window_posts(posts, listings, bars)
    assert {p: o.value for p, o in res.outcomes.items()} == {
        "a": "windowed", "b": "skipped-multi-symbol", "c": "skipped-no-symbol",
        "d": "skipped-insufficient-data", "e": "skipped-insufficient-data", "f": "windowed",
    }
    assert set(res.windows) == {"a", "f"}
    assert res.posts[0].symbol == "AYTU"
    assert res.stats.n_posts == len(posts)
    assert sum(res.stats.counts[o] for o in Outcome) == len(posts)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["AYTU", "MARK", "LOVE", "$aytu", "hello", "$GHST"]),
                          st.sampled_from(["AYTU", "MARK", "", "now"]),
                          st.integers(0, 12)), max_size=15))
def test_count_conservation(specs):
    bars = {"AYTU": nine_bars(), "MARK": nine_bars()}
    posts = [Post(f"p{i}", "a", ts(date.fromordinal(DAYS[0].toordinal() + off)), f"{w1} {w2}", "")
             for i, (w1, w2, off) in enumerate(specs)]
    res = window_posts(posts, {"AYTU", "MARK", "GHST"}, bars)
    d = res.stats.as_dict()
    assert d["posts"] == len(posts)
    assert sum(d[o.value] for o in Outcome) == len(posts)
    assert len(res.windows) == d["windowed"]


def test_histogram_and_daily_counts():
    sm = SectorMap({"AYTU": "Healthcare"})
    posts = [post("a", DAYS[0], symbol="AYTU"), post("b", DAYS[0], symbol="AYTU"),
             post("c", DAYS[1], symbol="ZZZ"), post("d", DAYS[1])]
    assert sector_histogram(posts, sm) == {"Healthcare": 2, "Unknown": 1}
    comments = [Comment("c1", "a", "x", ts(DAYS[1]), "hi")]
    assert daily_counts(posts, comments) == {DAYS[0]: (2, 0), DAYS[1]: (2, 1)}

"""Readers and writers for forum and market files, and event-window assembly.

Posts and comments are JSON Lines; daily bars are CSV with header
``date,open,high,low,close,volume``; the sector map is CSV ``symbol,sector``.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, TextIO

import numpy as np

from .text_pipeline import SectorMap, extract_symbol, read_word_list

POST_FIELDS = ("id", "author", "created", "title", "body")
COMMENT_FIELDS = ("id", "post_id", "author", "created", "body")
OHLCV_HEADER = ("date", "open", "high", "low", "close", "volume")

BASELINE_DAYS = 5
EVENT_DAYS = 4


class IngestError(ValueError):
    """A record-level or corpus-level data problem.

    ``line`` is the 1-based line number of the offending record when known.
    """

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class DuplicateIdError(IngestError):
    pass


@dataclass(frozen=True)
class Post:
    id: str
    author: str
    created: int
    title: str
    body: str
    symbol: str | None = None

    @property
    def text(self) -> str:
        return f"{self.title} {self.body}".strip()

    @property
    def day(self) -> date:
        return utc_date(self.created)


@dataclass(frozen=True)
class Comment:
    id: str
    post_id: str
    author: str
    created: int
    body: str

    @property
    def day(self) -> date:
        return utc_date(self.created)


@dataclass(frozen=True)
class OhlcvBar:
    date: date
    open: float
    high: float
    low: float
    close: float
    volume: int

    def __post_init__(self):
        for name in ("open", "high", "low", "close"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite price, got {v!r}")
        if self.volume < 0:
            raise ValueError(f"volume must be non-negative, got {self.volume}")
        if self.low > self.high:
            raise ValueError(f"low {self.low} exceeds high {self.high}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise ValueError("open/close must lie within [low, high]")


@dataclass(frozen=True)
class EventWindow:
    symbol: str
    post_ref: str
    baseline: tuple[OhlcvBar, ...]
    event: tuple[OhlcvBar, ...]

    def __post_init__(self):
        if len(self.baseline) != BASELINE_DAYS:
            raise ValueError(f"baseline must hold exactly {BASELINE_DAYS} bars")
        if not 1 <= len(self.event) <= EVENT_DAYS:
            raise ValueError(f"event must hold 1..{EVENT_DAYS} bars")
        dates = [b.date for b in self.baseline + self.event]
        if any(a >= b for a, b in zip(dates, dates[1:])):
            raise ValueError("window bars must be strictly ordered by date")


class Outcome(str, enum.Enum):
    WINDOWED = "windowed"
    NO_SYMBOL = "skipped-no-symbol"
    INSUFFICIENT_DATA = "skipped-insufficient-data"
    MULTI_SYMBOL = "skipped-multi-symbol"


def utc_date(ts: int) -> date:
    return datetime.fromtimestamp(ts, tz=timezone.utc).date()


def _lines(stream: TextIO | Iterable[str] | str) -> Iterable[str]:
    if isinstance(stream, str):
        return io.StringIO(stream)
    return stream


def _records(stream, fields, source):
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"malformed record ({exc.msg})", lineno, source) from None
        if not isinstance(rec, dict):
            raise IngestError("record must be an object", lineno, source)
        missing = [f for f in fields if f not in rec]
        if missing:
            raise IngestError(f"missing fields {missing}", lineno, source)
        yield lineno, rec


def _as_str(rec, key, lineno, source):
    v = rec[key]
    if not isinstance(v, str):
        raise IngestError(f"field {key!r} must be a string", lineno, source)
    return v


def _as_ts(rec, lineno, source):
    v = rec["created"]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise IngestError("field 'created' must be a unix timestamp", lineno, source)
    if v <= 0:
        raise IngestError("field 'created' must be positive", lineno, source)
    return int(v)


def parse_posts(stream, source: str | None = None) -> list[Post]:
    posts: list[Post] = []
    seen: dict[str, int] = {}
    for lineno, rec in _records(stream, POST_FIELDS, source):
        pid = _as_str(rec, "id", lineno, source)
        if not pid:
            raise IngestError("empty id", lineno, source)
        title = _as_str(rec, "title", lineno, source)
        body = _as_str(rec, "body", lineno, source)
        if not (title.strip() or body.strip()):
            raise IngestError("title and body are both empty", lineno, source)
        symbol = rec.get("symbol")
        if symbol is not None and not isinstance(symbol, str):
            raise IngestError("field 'symbol' must be a string", lineno, source)
        if pid in seen:
            raise DuplicateIdError(f"duplicate post id {pid!r} (first at line {seen[pid]})", lineno, source)
        seen[pid] = lineno
        posts.append(
            Post(
                id=pid,
                author=_as_str(rec, "author", lineno, source),
                created=_as_ts(rec, lineno, source),
                title=title,
                body=body,
                symbol=symbol.upper() if symbol else None,
            )
        )
    return posts


def parse_comments(stream, source: str | None = None) -> list[Comment]:
    comments: list[Comment] = []
    seen: dict[str, int] = {}
    for lineno, rec in _records(stream, COMMENT_FIELDS, source):
        cid = _as_str(rec, "id", lineno, source)
        if not cid:
            raise IngestError("empty id", lineno, source)
        body = _as_str(rec, "body", lineno, source)
        if not body.strip():
            raise IngestError("comment body is empty", lineno, source)
        if cid in seen:
            raise DuplicateIdError(f"duplicate comment id {cid!r} (first at line {seen[cid]})", lineno, source)
        seen[cid] = lineno
        comments.append(
            Comment(
                id=cid,
                post_id=_as_str(rec, "post_id", lineno, source),
                author=_as_str(rec, "author", lineno, source),
                created=_as_ts(rec, lineno, source),
                body=body,
            )
        )
    return comments


def write_posts(posts: Iterable[Post], out: TextIO) -> None:
    for p in posts:
        rec = {k: getattr(p, k) for k in POST_FIELDS}
        if p.symbol is not None:
            rec["symbol"] = p.symbol
        out.write(json.dumps(rec, ensure_ascii=False) + "\n")


def write_comments(comments: Iterable[Comment], out: TextIO) -> None:
    for c in comments:
        out.write(json.dumps({k: getattr(c, k) for k in COMMENT_FIELDS}, ensure_ascii=False) + "\n")


def parse_ohlcv(stream, source: str | None = None) -> list[OhlcvBar]:
    reader = csv.reader(_lines(stream))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("missing header row", 1, source) from None
    if tuple(h.strip().lower() for h in header) != OHLCV_HEADER:
        raise IngestError(f"header must be {','.join(OHLCV_HEADER)}", 1, source)
    bars = []
    for lineno, row in enumerate(reader, start=2):
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != len(OHLCV_HEADER):
            raise IngestError(f"expected {len(OHLCV_HEADER)} columns, got {len(row)}", lineno, source)
        try:
            day = date.fromisoformat(row[0].strip())
        except ValueError:
            raise IngestError(f"bad ISO date {row[0]!r}", lineno, source) from None
        try:
            o, h, l, c = (float(x) for x in row[1:5])
        except ValueError:
            raise IngestError("non-numeric price", lineno, source) from None
        try:
            vol_f = float(row[5])
        except ValueError:
            raise IngestError("non-numeric volume", lineno, source) from None
        if not math.isfinite(vol_f) or vol_f != int(vol_f):
            raise IngestError("volume must be an integer share count", lineno, source)
        try:
            bars.append(OhlcvBar(day, o, h, l, c, int(vol_f)))
        except ValueError as exc:
            raise IngestError(str(exc), lineno, source) from None
    bars.sort(key=lambda b: b.date)
    for a, b in zip(bars, bars[1:]):
        if a.date == b.date:
            raise IngestError(f"duplicate date {a.date.isoformat()}", None, source)
    return bars


def write_ohlcv(bars: Iterable[OhlcvBar], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(OHLCV_HEADER)
    for b in bars:
        w.writerow([b.date.isoformat(), repr(b.open), repr(b.high), repr(b.low), repr(b.close), b.volume])


def parse_sector_map(stream, source: str | None = None) -> SectorMap:
    reader = csv.reader(_lines(stream))
    entries = {}
    for lineno, row in enumerate(reader, start=1):
        if not row or row[0].lstrip().startswith("#"):
            continue
        if len(row) != 2:
            raise IngestError("expected two columns symbol,sector", lineno, source)
        sym, sector = row[0].strip(), row[1].strip()
        if lineno == 1 and sym.lower() == "symbol":
            continue
        if not sym or not sector:
            raise IngestError("empty symbol or sector", lineno, source)
        entries[sym.upper()] = sector
    return SectorMap(entries)


def write_sector_map(sector_map: SectorMap, out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["symbol", "sector"])
    for sym in sorted(sector_map.entries):
        w.writerow([sym, sector_map.entries[sym]])


def parse_listings(stream) -> set[str]:
    return {w.upper() for w in read_word_list(_lines(stream))}


def load_ohlcv_dir(directory: str | Path) -> dict[str, list[OhlcvBar]]:
    """Read every ``<SYMBOL>.csv`` under ``directory``."""
    out = {}
    for path in sorted(Path(directory).glob("*.csv")):
        with open(path, encoding="utf-8", newline="") as fh:
            out[path.stem.upper()] = parse_ohlcv(fh, source=str(path))
    return out


def _consecutive(bars: Iterable[OhlcvBar]) -> bool:
    days = np.array([b.date for b in bars], dtype="datetime64[D]")
    if len(days) < 2:
        return True
    return bool(np.all(np.busday_count(days[:-1], days[1:]) == 1))


def build_event_window(post: Post, bars: list[OhlcvBar]) -> EventWindow | None:
    """The 5-bar baseline before the post's UTC date and up to 4 bars from it.

    Returns None when the data cannot support a full window: fewer than five
    baseline bars, no bar on or after the post date, or a missing business
    day anywhere in the span.
    """
    if not post.symbol:
        return None
    post_day = post.day
    split = 0
    while split < len(bars) and bars[split].date < post_day:
        split += 1
    if split < BASELINE_DAYS or split == len(bars):
        return None
    baseline = tuple(bars[split - BASELINE_DAYS : split])
    event = tuple(bars[split : split + EVENT_DAYS])
    # a weekend post keeps Friday->Monday contiguous; a halt or holiday does not
    if not _consecutive(baseline + event):
        return None
    return EventWindow(post.symbol, post.id, baseline, event)


@dataclass
class IngestStats:
    counts: Counter = field(default_factory=Counter)
    n_comments: int = 0

    @property
    def n_posts(self) -> int:
        return sum(self.counts.values())

    def as_dict(self) -> dict:
        d = {o.value: self.counts.get(o, 0) for o in Outcome}
        d["posts"] = self.n_posts
        d["comments"] = self.n_comments
        return d


@dataclass
class IngestResult:
    posts: list[Post]
    comments: list[Comment]
    windows: dict[str, EventWindow]
    outcomes: dict[str, Outcome]
    stats: IngestStats


def window_posts(
    posts: Iterable[Post],
    listings: Iterable[str],
    bars_by_symbol: Mapping[str, list[OhlcvBar]],
    comments: Iterable[Comment] = (),
) -> IngestResult:
    """Resolve each post's ticker and build its event window.

    Every post lands in exactly one outcome bucket.
    """
    listings = {s.upper() for s in listings}
    resolved, windows, outcomes = [], {}, {}
    stats = IngestStats()
    for post in posts:
        symbols = extract_symbol(post.text, listings) if listings else frozenset()
        if post.symbol:
            symbols = frozenset({post.symbol})
        if not symbols:
            outcome = Outcome.NO_SYMBOL
        elif len(symbols) > 1:
            outcome = Outcome.MULTI_SYMBOL
        else:
            (sym,) = symbols
            post = replace(post, symbol=sym)
            win = build_event_window(post, bars_by_symbol.get(sym, []))
            if win is None:
                outcome = Outcome.INSUFFICIENT_DATA
            else:
                windows[post.id] = win
                outcome = Outcome.WINDOWED
        resolved.append(post)
        outcomes[post.id] = outcome
        stats.counts[outcome] += 1
    comments = list(comments)
    stats.n_comments = len(comments)
    return IngestResult(resolved, comments, windows, outcomes, stats)


def window_to_record(win: EventWindow) -> dict:
    def bar(b: OhlcvBar) -> list:
        return [b.date.isoformat(), b.open, b.high, b.low, b.close, b.volume]

    return {
        "post_id": win.post_ref,
        "symbol": win.symbol,
        "baseline": [bar(b) for b in win.baseline],
        "event": [bar(b) for b in win.event],
    }


def window_from_record(rec: dict) -> EventWindow:
    def bar(row: list) -> OhlcvBar:
        return OhlcvBar(date.fromisoformat(row[0]), *map(float, row[1:5]), int(row[5]))

    return EventWindow(
        rec["symbol"],
        rec["post_id"],
        tuple(bar(r) for r in rec["baseline"]),
        tuple(bar(r) for r in rec["event"]),
    )


def sector_histogram(posts: Iterable[Post], sector_map: SectorMap) -> Counter:
    """Posts per sector, over posts with a resolved symbol."""
    return Counter(sector_map.lookup(p.symbol) for p in posts if p.symbol)


def daily_counts(posts: Iterable[Post], comments: Iterable[Comment]) -> dict[date, tuple[int, int]]:
    """Per-UTC-day (posts, comments) submission counts."""
    p = Counter(x.day for x in posts)
    c = Counter(x.day for x in comments)
    return {d: (p.get(d, 0), c.get(d, 0)) for d in sorted(set(p) | set(c))}

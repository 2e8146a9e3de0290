"""Synthetic market windows and forum corpora with known labels.

Windows come in five kinds. ``pnd`` clears both anomaly gates with a gentle
rising region; ``normal`` clears neither; ``price_only_spike`` and
``volume_only_spike`` clear exactly one gate; ``steep_news`` clears both
gates but rises in a straight ramp, which fails the slope gate.

Prices sit on a 2**-16 grid, so sums of four or five prices are exact in
floating point and every gate decision is fixed by construction rather
than by rounding.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path

import numpy as np

from .ingestion import (
    BASELINE_DAYS,
    EVENT_DAYS,
    Comment,
    EventWindow,
    OhlcvBar,
    Outcome,
    Post,
    write_comments,
    write_ohlcv,
    write_posts,
    write_sector_map,
)
from .labeling import AgreementLexicon, default_lexicon
from .text_pipeline import SectorMap, default_preprocessor

KINDS = ("pnd", "normal", "price_only_spike", "volume_only_spike", "steep_news")
PRICE_QUANTUM = 2.0**-16
# rising-region shapes for pnd: start near the peak, pull back, finish at the peak
GENTLE_PROFILES = {1: (1.0,), 3: (0.95, 0.0, 1.0), 4: (0.95, 0.0, 0.0, 1.0)}
ZERO_SIGMA_FALLBACK = 0.01


class ScenarioError(ValueError):
    pass


def _qfloor(p: float) -> float:
    return math.floor(p / PRICE_QUANTUM) * PRICE_QUANTUM


def _qceil(p: float) -> float:
    return math.ceil(p / PRICE_QUANTUM) * PRICE_QUANTUM


def _gentle_slope(profile: tuple[float, ...]) -> float:
    y = np.array(profile)
    if y.size < 2:
        return 0.0
    x = np.linspace(0, 1, y.size)
    return float(np.polyfit(x, y, 1)[0])


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    base_price: float = 1.0
    jitter: float = 0.02
    pump_sigmas: float = 5.0
    duration: int = 3
    volume_multiplier: float = 10.0
    base_volume: int = 100_000
    volume_jitter: float = 0.1
    seed: int = 0
    start: date = date(2020, 4, 1)
    slope_threshold: float = 0.18
    gate_sigmas: float = 2.0
    symbol: str = "SYNT"
    post_ref: str = "synthetic"

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if not 0 < self.base_price:
            raise ScenarioError("base_price must be positive")
        if not 0 <= self.jitter < 0.4 or not 0 <= self.volume_jitter < 0.4:
            raise ScenarioError("jitters must lie in [0, 0.4)")
        if self.base_volume < 1000:
            raise ScenarioError("base_volume must be at least 1000 shares")
        if not 1 <= self.duration <= EVENT_DAYS:
            raise ScenarioError(f"duration must be 1..{EVENT_DAYS} days")
        price_spike = self.kind in ("pnd", "price_only_spike", "steep_news")
        volume_spike = self.kind in ("pnd", "volume_only_spike", "steep_news")
        if price_spike and not self.pump_sigmas > self.gate_sigmas:
            raise ScenarioError(
                f"pump magnitude {self.pump_sigmas} sigma does not clear the {self.gate_sigmas} sigma gate")
        if volume_spike and not self.volume_multiplier > 1 + self.gate_sigmas * self.volume_jitter + 0.01:
            raise ScenarioError("volume multiplier too small to clear the volume gate")
        if self.kind in ("pnd", "price_only_spike"):
            if self.duration not in GENTLE_PROFILES:
                raise ScenarioError(f"no gentle rising shape lasts {self.duration} days")
            if _gentle_slope(GENTLE_PROFILES[self.duration]) > self.slope_threshold:
                raise ScenarioError("slope threshold is below the gentlest available rising shape")
        if self.kind == "steep_news":
            if self.duration < 2:
                raise ScenarioError("a steep ramp needs at least 2 rising days")
            if self.slope_threshold >= 1.0:
                raise ScenarioError("a straight ramp (slope 1) cannot fail a threshold >= 1")


def _business_days(start: date, n: int) -> list[date]:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return [np.busday_offset(first, i).astype(date) for i in range(n)]


def _standardized(rng: np.random.Generator, n: int) -> np.ndarray:
    r = rng.standard_normal(n)
    return (r - r.mean()) / r.std()


def _bar(day: date, price: float, spread: float, volume: int) -> OhlcvBar:
    # open = close = price and a symmetric high/low keep the daily average exactly at price
    s = min(_qfloor(spread), price - PRICE_QUANTUM)
    s = max(s, 0.0)
    return OhlcvBar(day, price, price + s, price - s, price, int(volume))


def _event_prices(spec: ScenarioSpec, bap: float, sigma: float, u: np.ndarray) -> list[float]:
    if spec.kind in ("normal", "volume_only_spike"):
        return [_qfloor(bap + sigma * v) for v in u]
    step = sigma if sigma > 0 else spec.base_price * ZERO_SIGMA_FALLBACK
    peak = _qceil(bap + spec.pump_sigmas * step)
    d = spec.duration
    if spec.kind == "steep_news":
        start = _qfloor(bap)
        region = [_qfloor(start + (peak - start) * i / (d - 1)) for i in range(d - 1)] + [peak]
    else:
        dip = _qfloor(bap + 0.5 * (peak - bap))
        region = [peak if y == 1.0 else _qfloor(dip + y * (peak - dip)) for y in GENTLE_PROFILES[d]]
    # dump phase: strictly below the peak so the rising region ends where intended
    tail = [_qfloor(peak - (peak - bap) * (i + 1) / (EVENT_DAYS - d + 1))
            for i in range(EVENT_DAYS - d)]
    return region + [min(p, peak - PRICE_QUANTUM) for p in tail]


def _event_volumes(spec: ScenarioSpec, bav: float, sigma_v: float, u: np.ndarray) -> list[int]:
    if spec.kind in ("normal", "price_only_spike"):
        return [int(math.floor(bav + sigma_v * v)) for v in u]
    return [int(math.ceil(bav * spec.volume_multiplier * (1.0 - 0.1 * i))) for i in range(EVENT_DAYS)]


def generate_window(spec: ScenarioSpec) -> tuple[EventWindow, bool]:
    """Build a 5+4 day window of the requested kind and its ground-truth label."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    days = _business_days(spec.start, BASELINE_DAYS + EVENT_DAYS)

    z = _standardized(rng, BASELINE_DAYS)
    base_prices = [_qfloor(spec.base_price * (1 + spec.jitter * v)) for v in z]
    zv = _standardized(rng, BASELINE_DAYS)
    base_vols = [int(round(spec.base_volume * (1 + spec.volume_jitter * v))) for v in zv]
    bap = math.fsum(base_prices) / BASELINE_DAYS
    sigma = math.sqrt(math.fsum((p - bap) ** 2 for p in base_prices) / BASELINE_DAYS)
    bav = math.fsum(base_vols) / BASELINE_DAYS
    sigma_v = math.sqrt(math.fsum((v - bav) ** 2 for v in base_vols) / BASELINE_DAYS)

    u_price = rng.uniform(-1.0, 1.0, EVENT_DAYS)
    u_vol = rng.uniform(-1.0, 1.0, EVENT_DAYS)
    ev_prices = _event_prices(spec, bap, sigma, u_price)
    ev_vols = _event_volumes(spec, bav, sigma_v, u_vol)

    spread = 0.02 * spec.base_price
    baseline = tuple(_bar(d, p, spread, v) for d, p, v in zip(days, base_prices, base_vols))
    event = tuple(_bar(d, p, spread, v) for d, p, v in zip(days[BASELINE_DAYS:], ev_prices, ev_vols))
    return EventWindow(spec.symbol, spec.post_ref, baseline, event), spec.kind == "pnd"


def random_spec(kind: str, rng: np.random.Generator, **overrides) -> ScenarioSpec:
    """A valid spec of ``kind`` with parameters drawn from penny-stock ranges."""
    if kind in ("pnd", "price_only_spike"):
        duration = int(rng.choice(sorted(GENTLE_PROFILES)))
    elif kind == "steep_news":
        duration = int(rng.integers(2, EVENT_DAYS + 1))
    else:
        duration = int(rng.integers(1, EVENT_DAYS + 1))
    vj = float(rng.uniform(0.02, 0.3))
    jitter = float(rng.uniform(0.0, 0.08))
    # five standardized draws never exceed 2, so baseline prices stay under $5
    params = dict(
        kind=kind,
        base_price=float(rng.uniform(0.05, 4.9 / (1 + 2 * jitter))),
        jitter=jitter,
        pump_sigmas=float(rng.uniform(2.5, 12.0)),
        duration=duration,
        volume_multiplier=float(rng.uniform(1.2 + 2 * vj, 15.0)),
        base_volume=int(rng.integers(10_000, 2_000_000)),
        volume_jitter=vj,
        seed=int(rng.integers(0, 2**31)),
    )
    params.update(overrides)
    return ScenarioSpec(**params)


# -- corpus -------------------------------------------------------------------

SECTOR_WEIGHTS = {
    "Healthcare": 0.34,
    "Technology": 0.22,
    "Energy": 0.14,
    "CommunicationServices": 0.1,
    "ConsumerCyclical": 0.1,
    "FinancialServices": 0.1,
}
UNMAPPED_SYMBOL_FRACTION = 0.1

TOUTING_WORDS = (
    "moon rocket pump soar jump rally climb spike fly go up buy profit gain breakout "
    "hype zoom burst massive rich cash money quick fast early load shoot run hit big "
    "potential confident awesome nice peak surpass agree good great sure definitely "
    "guaranteed positive happy glad worth bet"
).split()
NEUTRAL_WORDS = (
    "quarter revenue filing analyst dividend report management debt balance sheet "
    "guidance acquisition merger ceo board audit valuation margin segment outlook "
    "shareholder letter conference call product pipeline trial approval partnership "
    "contract customer supplier factory inventory lawsuit regulator patent research "
    "forecast estimate consensus ratio capital expense loan bond"
).split()
DISSENT_WORDS = (
    "scam careful scheme dump bagholder fake warning avoid fraud sketchy bear "
    "overvalued dilution trap suspicious clearly skeptical"
).split()
SHARED_WORDS = "today tomorrow week chart price volume share stock market trade watch ticker".split()


@dataclass
class CorpusTruth:
    post_labels: dict[str, bool] = field(default_factory=dict)
    post_outcomes: dict[str, str] = field(default_factory=dict)
    post_kinds: dict[str, str] = field(default_factory=dict)
    post_sectors: dict[str, str | None] = field(default_factory=dict)
    comment_labels: dict[str, bool] = field(default_factory=dict)
    comment_rules: dict[str, str] = field(default_factory=dict)

    def outcome_counts(self) -> dict[str, int]:
        out = {o.value: 0 for o in Outcome}
        for v in self.post_outcomes.values():
            out[v] += 1
        return out

    def class_counts(self) -> dict[str, dict[str, int]]:
        def tally(labels):
            pnd = sum(1 for v in labels.values() if v)
            return {"pnd": pnd, "not_pnd": len(labels) - pnd, "total": len(labels)}

        posts, comments = tally(self.post_labels), tally(self.comment_labels)
        total = {k: posts[k] + comments[k] for k in posts}
        return {"posts": posts, "comments": comments, "total": total}

    def sector_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for s in self.post_sectors.values():
            if s is not None:
                out[s] = out.get(s, 0) + 1
        return dict(sorted(out.items()))

    def to_dict(self) -> dict:
        return {
            "post_labels": self.post_labels,
            "post_outcomes": self.post_outcomes,
            "post_kinds": self.post_kinds,
            "post_sectors": self.post_sectors,
            "comment_labels": self.comment_labels,
            "comment_rules": self.comment_rules,
        }


@dataclass
class SyntheticCorpus:
    posts: list[Post]
    comments: list[Comment]
    bars: dict[str, list[OhlcvBar]]
    sector_map: SectorMap
    listings: list[str]
    truth: CorpusTruth


def _tickers(rng: np.random.Generator, n: int, banned: set[str]) -> list[str]:
    letters = np.array(list("ABCDEFGHIJKLMNOPQRSTUVWXYZ"))
    out: list[str] = []
    seen = set()
    while len(out) < n:
        t = "".join(rng.choice(letters, size=int(rng.integers(3, 5))))
        if t in seen or t.lower() in banned:
            continue
        seen.add(t)
        out.append(t)
    return out


def _pick(rng: np.random.Generator, pool: list[str], k: int) -> list[str]:
    return [pool[i] for i in rng.choice(len(pool), size=min(k, len(pool)), replace=False)]


def generate_corpus(
    n_posts: int,
    pnd_fraction: float,
    lexicon: AgreementLexicon | None = None,
    seed: int = 0,
    comments_per_post: float = 3.0,
    skip_fraction: float = 0.1,
    start: date = date(2019, 10, 1),
    slope_threshold: float = 0.18,
) -> SyntheticCorpus:
    """Posts, comments, daily bars and sector map with exact ground truth.

    P&D posts and agreeing comments use touting words from the lexicon;
    other documents use neutral or dissenting words with at most one
    lexicon term, so the agreement rules and a bag-of-words classifier can
    both recover the labels.
    """
    if not 0 < pnd_fraction < 1:
        raise ValueError("pnd_fraction must lie strictly between 0 and 1")
    if n_posts < 0:
        raise ValueError("n_posts must be non-negative")
    lexicon = lexicon or default_lexicon()
    rng = np.random.default_rng(seed)
    pre = default_preprocessor()
    lex = lexicon.match_terms

    def usable(w: str) -> bool:
        return pre(w).tokens == (w,)

    touting = [w for w in TOUTING_WORDS if w in lex and usable(w)]
    neutral = [w for w in NEUTRAL_WORDS + SHARED_WORDS if w not in lex and usable(w)]
    dissent = [w for w in DISSENT_WORDS if w not in lex and usable(w)]
    shared = [w for w in SHARED_WORDS if w not in lex and usable(w)]
    if len(touting) < 6:
        raise ValueError("lexicon shares too few words with the touting vocabulary")
    lex_single = sorted(lex & set(TOUTING_WORDS))

    n_skip = int(round(n_posts * skip_fraction))
    n_windowed = n_posts - n_skip
    n_pnd = int(round(n_posts * pnd_fraction))
    if n_posts and n_pnd > n_windowed:
        raise ValueError("pnd_fraction too high for the windowed share of posts")

    # post plan: outcome and kind per post, shuffled
    skip_kinds = [Outcome.NO_SYMBOL, Outcome.MULTI_SYMBOL, Outcome.INSUFFICIENT_DATA]
    plan = ["pnd"] * n_pnd
    others = ("normal", "price_only_spike", "volume_only_spike", "steep_news")
    plan += [others[i % 4] for i in range(n_windowed - n_pnd)]
    plan += [skip_kinds[i % 3].value for i in range(n_skip)]
    plan = [plan[i] for i in rng.permutation(len(plan))]

    banned = set(pre.lemmas) | set(pre.lemmas.values()) | set(pre.stopwords) | set(lex)
    banned |= set(TOUTING_WORDS + NEUTRAL_WORDS + DISSENT_WORDS + SHARED_WORDS)
    n_symbols = max(3, n_windowed // 25)
    n_ghost = max(1, n_skip // 10)
    tickers = _tickers(rng, n_symbols + n_ghost, banned)
    symbols, ghosts = tickers[:n_symbols], tickers[n_symbols:]
    sectors = list(SECTOR_WEIGHTS)
    weights = np.array(list(SECTOR_WEIGHTS.values()))
    sector_of: dict[str, str] = {}
    mapped: dict[str, str] = {}
    for t in tickers:
        s = sectors[int(rng.choice(len(sectors), p=weights / weights.sum()))]
        if rng.random() < UNMAPPED_SYMBOL_FRACTION:
            sector_of[t] = "Unknown"
        else:
            sector_of[t] = s
            mapped[t] = s

    truth = CorpusTruth()
    posts: list[Post] = []
    comments: list[Comment] = []
    bars: dict[str, list[OhlcvBar]] = {s: [] for s in symbols}
    next_start = {s: start for s in symbols}
    author_pool = [f"user{i:05d}" for i in range(max(50, n_posts // 2))]

    def sentence(words: list[str], ticker: str | None, dollar: bool) -> tuple[str, str]:
        words = list(words)
        if ticker:
            words.insert(int(rng.integers(0, min(3, len(words)) + 1)), ("$" if dollar else "") + ticker)
        cut = max(1, min(len(words) - 1, 4))
        return " ".join(words[:cut]), " ".join(words[cut:])

    for i, kind in enumerate(plan):
        pid = f"p{i:06d}"
        author = author_pool[int(rng.integers(len(author_pool)))]
        is_pnd = kind == "pnd"
        ticker: str | None = None
        if kind in KINDS:
            sym = symbols[int(rng.integers(n_symbols))]
            spec = random_spec(kind, rng, start=next_start[sym], symbol=sym, post_ref=pid,
                               slope_threshold=slope_threshold)
            win, label = generate_window(spec)
            assert label == is_pnd
            bars[sym].extend(win.baseline + win.event)
            next_start[sym] = win.event[-1].date + timedelta(days=1)
            post_day = win.event[0].date
            # Monday events are sometimes posted over the weekend
            if post_day.weekday() == 0 and rng.random() < 0.3:
                post_day -= timedelta(days=int(rng.integers(1, 3)))
            ticker = sym
            truth.post_outcomes[pid] = Outcome.WINDOWED.value
            truth.post_sectors[pid] = sector_of[sym]
        else:
            post_day = start + timedelta(days=int(rng.integers(0, 365)))
            truth.post_outcomes[pid] = kind
            if kind == Outcome.INSUFFICIENT_DATA.value:
                ticker = ghosts[int(rng.integers(n_ghost))]
                truth.post_sectors[pid] = sector_of[ticker]
            else:
                truth.post_sectors[pid] = None
        created = int(datetime.combine(post_day, time(13, 0), tzinfo=timezone.utc).timestamp())
        created += int(rng.integers(0, 6 * 3600))

        if is_pnd:
            words = _pick(rng, touting, int(rng.integers(3, 7))) + _pick(rng, shared, 2)
        else:
            words = _pick(rng, neutral, int(rng.integers(4, 8)))
        words = [words[j] for j in rng.permutation(len(words))]
        dollar = bool(rng.random() < 0.3)
        if kind == Outcome.MULTI_SYMBOL.value:
            a, b = _pick(rng, symbols, 2)
            title, body = sentence(words, None, False)
            title = f"{a} or {b} {title}"
        else:
            title, body = sentence(words, ticker, dollar)
        posts.append(Post(pid, author, created, title, body))
        truth.post_labels[pid] = is_pnd
        truth.post_kinds[pid] = kind

        n_comments = int(rng.poisson(comments_per_post))
        for j in range(n_comments):
            cid = f"{pid}c{j:03d}"
            other = author
            while other == author:
                other = author_pool[int(rng.integers(len(author_pool)))]
            c_created = created + int(rng.integers(60, 24 * 3600))
            if is_pnd:
                r = rng.random()
                if r < 0.25:
                    c_author, rule, c_label = author, "author-rule", True
                    cw = _pick(rng, touting, int(rng.integers(2, 5)))
                elif r < 0.65:
                    c_author, rule, c_label = other, "lexicon-rule", True
                    cw = _pick(rng, touting, int(rng.integers(2, 5))) + _pick(rng, shared, 1)
                else:
                    c_author, rule, c_label = other, "lexicon-rule", False
                    cw = _pick(rng, dissent, int(rng.integers(2, 5)))
                    if rng.random() < 0.5:
                        cw += _pick(rng, lex_single, 1)
            else:
                c_author, rule, c_label = other, "inherited-negative", False
                cw = _pick(rng, neutral, int(rng.integers(2, 6)))
                if rng.random() < 0.3:
                    cw += _pick(rng, dissent, 1)
            cw = [cw[k] for k in rng.permutation(len(cw))]
            comments.append(Comment(cid, pid, c_author, c_created, " ".join(cw)))
            truth.comment_labels[cid] = c_label
            truth.comment_rules[cid] = rule

    listings = sorted(tickers)
    return SyntheticCorpus(posts, comments, {s: b for s, b in bars.items() if b},
                           SectorMap(mapped), listings, truth)


def write_corpus(corpus: SyntheticCorpus, directory) -> dict[str, Path]:
    """Write the corpus in the ingestion file formats; returns the paths."""
    d = Path(directory)
    (d / "ohlcv").mkdir(parents=True, exist_ok=True)
    paths = {
        "posts": d / "posts.jsonl",
        "comments": d / "comments.jsonl",
        "ohlcv_dir": d / "ohlcv",
        "sector_map": d / "sectors.csv",
        "listings": d / "listings.txt",
        "truth": d / "truth.json",
    }
    with open(paths["posts"], "w", encoding="utf-8", newline="\n") as fh:
        write_posts(corpus.posts, fh)
    with open(paths["comments"], "w", encoding="utf-8", newline="\n") as fh:
        write_comments(corpus.comments, fh)
    for sym, series in sorted(corpus.bars.items()):
        with open(paths["ohlcv_dir"] / f"{sym}.csv", "w", encoding="utf-8", newline="") as fh:
            write_ohlcv(series, fh)
    with open(paths["sector_map"], "w", encoding="utf-8", newline="") as fh:
        write_sector_map(corpus.sector_map, fh)
    with open(paths["listings"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# listed tickers, one per line\n")
        fh.writelines(f"{t}\n" for t in corpus.listings)
    with open(paths["truth"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(corpus.truth.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths

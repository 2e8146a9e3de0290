"""Baseline statistics, two-sigma anomaly gates and the rising-slope filter."""
from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .ingestion import EventWindow, OhlcvBar

DEFAULT_SLOPE_THRESHOLD = 0.18
DEFAULT_SIGMA_MULTIPLIER = 2.0

VERDICT_COLUMNS = (
    "post_id", "symbol", "bap", "bav", "sigma_price", "sigma_volume",
    "price_anomaly", "volume_anomaly", "slope", "is_pnd_shape",
)


@dataclass(frozen=True)
class BaselineStats:
    bap: float
    bav: float
    sigma_price: float
    sigma_volume: float

    def price_threshold(self, k: float = DEFAULT_SIGMA_MULTIPLIER) -> float:
        return self.bap + k * self.sigma_price

    def volume_threshold(self, k: float = DEFAULT_SIGMA_MULTIPLIER) -> float:
        return self.bav + k * self.sigma_volume


@dataclass(frozen=True)
class AnomalyVerdict:
    price_anomaly: bool
    volume_anomaly: bool
    slope: float | None = None
    is_pnd_shape: bool = False


def dap(bar: OhlcvBar) -> float:
    """Daily average price: mean of open, high, low and close."""
    return (bar.open + bar.high + bar.low + bar.close) / 4


def baseline_stats(window: EventWindow) -> BaselineStats:
    prices = np.array([dap(b) for b in window.baseline])
    volumes = np.array([b.volume for b in window.baseline], dtype=float)
    return BaselineStats(
        bap=float(prices.mean()),
        bav=float(volumes.mean()),
        sigma_price=float(prices.std()),
        sigma_volume=float(volumes.std()),
    )


def detect_anomaly(
    window: EventWindow,
    stats: BaselineStats,
    sigma_multiplier: float = DEFAULT_SIGMA_MULTIPLIER,
) -> AnomalyVerdict:
    p_thr = stats.price_threshold(sigma_multiplier)
    v_thr = stats.volume_threshold(sigma_multiplier)
    price = any(dap(b) > p_thr for b in window.event)
    volume = any(b.volume > v_thr for b in window.event)
    return AnomalyVerdict(price_anomaly=price, volume_anomaly=volume)


def rising_region(event_prices: Sequence[float]) -> np.ndarray:
    """Prices from the first event day through the (first) peak day."""
    p = np.asarray(event_prices, dtype=float)
    if p.size == 0:
        raise ValueError("need at least one event price")
    return p[: int(np.argmax(p)) + 1]


def rising_slope(event_prices: Sequence[float]) -> float:
    """Least-squares slope of the min-max normalized rising region.

    Both the day index and the price are scaled to [0, 1] over the region,
    so a straight ramp scores 1.0 whatever its length or height. A flat or
    single-day region has no slope and scores 0.
    """
    y = rising_region(event_prices)
    lo, hi = y.min(), y.max()
    if y.size < 2 or hi == lo:
        return 0.0
    if y.size == 2:
        return 1.0
    # normalization folded into one final division, so a slope that is
    # exactly representable (e.g. 0.18 on a dyadic price grid) is not nudged
    # across the threshold by intermediate rounding
    n = y.size
    c = np.arange(n) - (n - 1) / 2
    num = (n - 1) * math.fsum(c * y)
    den = (hi - lo) * (n * (n * n - 1) / 12)
    return float(num / den)


def median_slope(slopes: Iterable[float]) -> float:
    slopes = list(slopes)
    if not slopes:
        raise ValueError("median of an empty slope list")
    return float(statistics.median(slopes))


def classify_window(
    window: EventWindow,
    slope_threshold: float = DEFAULT_SLOPE_THRESHOLD,
    sigma_multiplier: float = DEFAULT_SIGMA_MULTIPLIER,
    stats: BaselineStats | None = None,
) -> AnomalyVerdict:
    if slope_threshold <= 0:
        raise ValueError("slope_threshold must be positive")
    stats = stats or baseline_stats(window)
    verdict = detect_anomaly(window, stats, sigma_multiplier)
    if not (verdict.price_anomaly and verdict.volume_anomaly):
        return verdict
    slope = rising_slope([dap(b) for b in window.event])
    return replace(verdict, slope=slope, is_pnd_shape=slope <= slope_threshold)


def calibrate_slope_threshold(
    windows: Iterable[EventWindow], sigma_multiplier: float = DEFAULT_SIGMA_MULTIPLIER
) -> float:
    """Median rising slope over the windows that clear both anomaly gates."""
    slopes = []
    for w in windows:
        v = detect_anomaly(w, baseline_stats(w), sigma_multiplier)
        if v.price_anomaly and v.volume_anomaly:
            slopes.append(rising_slope([dap(b) for b in w.event]))
    return median_slope(slopes)


def write_verdict_report(
    windows: Mapping[str, EventWindow],
    verdicts: Mapping[str, AnomalyVerdict],
    out: TextIO,
) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(VERDICT_COLUMNS)
    for post_id, win in windows.items():
        s = baseline_stats(win)
        v = verdicts[post_id]
        w.writerow([
            post_id, win.symbol, f"{s.bap:.6g}", f"{s.bav:.6g}",
            f"{s.sigma_price:.6g}", f"{s.sigma_volume:.6g}",
            int(v.price_anomaly), int(v.volume_anomaly),
            "" if v.slope is None else f"{v.slope:.6f}", int(v.is_pnd_shape),
        ])

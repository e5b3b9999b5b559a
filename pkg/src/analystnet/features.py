"""Momentum features: multi-horizon log-returns and normalized trend signals.

Each firm gets an 8-dimensional vector per date, in fixed column order:

    [r_1, r_21, r_63, r_126, r_252, s(8,24), s(16,48), s(32,96)]

where r_d is the d-day log-return and s(S, L) is a trend signal built from
the difference of short- and long-scale price EWMAs, normalized twice: by
the 63-day rolling standard deviation of prices, and then by the 252-day
rolling standard deviation of that normalized series. The inner series is
defined from index 62 on, so the outer window uses whatever part of the
last 252 values exists; with the 252-day warm-up both normalizers are
always populated.

Scalar entry points (`log_return`, `ewma_price`, `macd_signal`) are
straight-line implementations; `feature_matrix` runs off a vectorized
per-panel cache and equals column-stacked scalar calls.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSeriesError
from .market_data import PricePanel

RETURN_HORIZONS = (1, 21, 63, 126, 252)
MACD_PAIRS = ((8, 24), (16, 48), (32, 96))
PRICE_STD_WINDOW = 63
SIGNAL_STD_WINDOW = 252
WARMUP_DAYS = 252
N_FEATURES = 8

FEATURE_NAMES = tuple(f"r_{d}" for d in RETURN_HORIZONS) + tuple(
    f"s_{s}_{l}" for s, l in MACD_PAIRS)


@dataclass(frozen=True)
class MacdScalePair:
    """Short/long EWMA scale pair, in trading days."""

    short: int
    long: int

    def __post_init__(self):
        if not (1 <= self.short < self.long):
            raise ValueError(f"need 1 <= short < long, got ({self.short}, {self.long})")


@dataclass(frozen=True)
class FeatureMatrix:
    """N x 8 feature block for one date; row i is panel firm i."""

    date: np.datetime64
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[1] != N_FEATURES:
            raise ValueError(f"feature matrix must be (N, {N_FEATURES}), got {v.shape}")
        if not np.isfinite(v).all():
            i, j = np.argwhere(~np.isfinite(v))[0]
            raise ValueError(f"non-finite feature at firm {i}, column {j}")

    @property
    def macd_columns(self) -> np.ndarray:
        return self.values[:, 5:8]


def log_return(panel: PricePanel, firm: int, t: int, delta: int) -> float:
    """ln(p_t / p_{t-delta}) for one firm."""
    if delta < 1:
        raise ValueError(f"horizon must be >= 1 day, got {delta}")
    if t - delta < 0:
        raise ValueError(
            f"insufficient history: t={t} needs {delta} prior days")
    p = panel.prices
    return float(np.log(p[t, firm] / p[t - delta, firm]))


def ewma_price(panel: PricePanel, firm: int, t: int, scale: int) -> float:
    """Exponential moving average of the price, gamma = 1/scale, m_0 = p_0."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    gamma = 1.0 / scale
    series = panel.prices[: t + 1, firm]
    m = series[0]
    for p in series[1:]:
        m = gamma * p + (1.0 - gamma) * m
    return float(m)


def _window_std(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1))


def macd_signal(panel: PricePanel, firm: int, t: int,
                pair: MacdScalePair) -> float:
    """Doubly-normalized EWMA-difference trend signal for one firm and date."""
    if t < WARMUP_DAYS:
        raise ValueError(
            f"macd_signal needs t >= {WARMUP_DAYS} for its warm-up, got {t}")
    prices = panel.prices[: t + 1, firm]
    first = PRICE_STD_WINDOW - 1          # first index with a full price window
    q = np.empty(t + 1 - first)
    for u in range(first, t + 1):
        sd = _window_std(prices[u - PRICE_STD_WINDOW + 1: u + 1])
        if sd == 0.0:
            raise DegenerateSeriesError(
                f"constant prices: zero {PRICE_STD_WINDOW}-day std for firm {firm} at t={u}")
        m_s = ewma_price(panel, firm, u, pair.short)
        m_l = ewma_price(panel, firm, u, pair.long)
        q[u - first] = (m_s - m_l) / sd
    window = q[max(0, len(q) - SIGNAL_STD_WINDOW):]
    sd_q = _window_std(window)
    if sd_q == 0.0:
        raise DegenerateSeriesError(
            f"zero {SIGNAL_STD_WINDOW}-day signal std for firm {firm} at t={t}")
    return float(q[-1] / sd_q)


class FeatureStore:
    """Per-panel cache of raw (unstandardized) features, vectorized over firms."""

    def __init__(self, panel: PricePanel):
        self.panel = panel
        prices = panel.prices
        t_total, n = prices.shape
        logp = np.log(prices)

        ewmas = {}
        for scale in sorted({s for pair in MACD_PAIRS for s in pair}):
            gamma = 1.0 / scale
            m = np.empty_like(prices)
            m[0] = prices[0]
            for t in range(1, t_total):
                m[t] = gamma * prices[t] + (1.0 - gamma) * m[t - 1]
            ewmas[scale] = m

        first = PRICE_STD_WINDOW - 1
        sigma_p = np.full((t_total, n), np.nan)
        for t in range(first, t_total):
            sigma_p[t] = prices[t - PRICE_STD_WINDOW + 1: t + 1].std(axis=0, ddof=1)

        raw = np.full((t_total, n, N_FEATURES), np.nan)
        for col, delta in enumerate(RETURN_HORIZONS):
            raw[delta:, :, col] = logp[delta:] - logp[:-delta]

        with np.errstate(divide="ignore", invalid="ignore"):
            for col, (s, l) in enumerate(MACD_PAIRS, start=len(RETURN_HORIZONS)):
                q = (ewmas[s] - ewmas[l]) / sigma_p
                for t in range(first + 1, t_total):
                    start = max(first, t - SIGNAL_STD_WINDOW + 1)
                    sd_q = q[start: t + 1].std(axis=0, ddof=1)
                    raw[t, :, col] = q[t] / sd_q

        self.raw = raw

    def matrix(self, t: int) -> np.ndarray:
        return self.raw[t].copy()


_stores: "weakref.WeakKeyDictionary[PricePanel, FeatureStore]" = weakref.WeakKeyDictionary()


def feature_store(panel: PricePanel) -> FeatureStore:
    store = _stores.get(panel)
    if store is None:
        store = FeatureStore(panel)
        _stores[panel] = store
    return store


def feature_matrix(panel: PricePanel, t: int,
                   standardize: bool = True) -> FeatureMatrix:
    """All firms' features at date index t, cross-sectionally standardized.

    Standardization maps each column to zero mean and unit (population)
    variance across firms; a column with zero cross-sectional spread is left
    at zero rather than divided through.
    """
    if t < WARMUP_DAYS:
        raise ValueError(
            f"feature_matrix needs t >= {WARMUP_DAYS} for its warm-up, got {t}")
    raw = feature_store(panel).matrix(t)
    if not np.isfinite(raw).all():
        i, j = np.argwhere(~np.isfinite(raw))[0]
        raise DegenerateSeriesError(
            f"non-finite raw feature for firm {panel.firms[i]} ({i}) "
            f"column {FEATURE_NAMES[j]} at t={t}")
    if standardize:
        mu = raw.mean(axis=0)
        sd = raw.std(axis=0)
        centered = raw - mu
        raw = np.where(sd > 0, centered / np.where(sd > 0, sd, 1.0), 0.0)
    return FeatureMatrix(date=panel.dates[t], values=raw)

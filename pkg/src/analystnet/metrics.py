"""Performance statistics on period-return series.

Annualization assumes monthly periods (12 per year). Drawdowns are computed
on the compounded value curve; maximum-drawdown duration is the longest run
of consecutive periods spent below the running peak, as a percentage of all
periods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSeriesError


@dataclass(frozen=True)
class PerfSummary:
    ann_return_pct: float
    ann_vol_pct: float
    sharpe: float
    max_drawdown_pct: float
    mdd_duration_pct: float
    cum_log_return: float


def drawdown_stats(curve, initial: float | None = None) -> tuple[float, float]:
    """(max drawdown, below-peak duration share), both in percent.

    ``curve`` holds one value per period; the running peak is seeded with
    ``initial`` when given, else with the first curve value. Max drawdown is
    the most negative value of curve/peak - 1 (<= 0); duration is the longest
    run of consecutive periods strictly below the running peak, divided by
    the number of periods.
    """
    values = np.asarray(curve, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty value curve")
    peak = float(values[0]) if initial is None else float(initial)
    max_dd = 0.0
    longest = 0
    run = 0
    for v in values:
        peak = max(peak, v)
        dd = v / peak - 1.0
        max_dd = min(max_dd, dd)
        if v < peak:
            run += 1
            longest = max(longest, run)
        else:
            run = 0
    return 100.0 * max_dd, 100.0 * longest / values.size


def cumulative_log_curve(period_returns) -> np.ndarray:
    """Prefix sums of ln(1 + R_t)."""
    r = np.asarray(period_returns, dtype=np.float64)
    if (r <= -1.0).any():
        bad = int(np.flatnonzero(r <= -1.0)[0])
        raise DegenerateSeriesError(
            f"period {bad} return {r[bad]} <= -100%: total loss")
    return np.cumsum(np.log1p(r))


def perf_summary(period_returns, periods_per_year: int = 12) -> PerfSummary:
    """Annualized return/vol/Sharpe plus drawdown statistics.

    Sample standard deviation; risk-free rate zero; zero volatility is an
    error (Sharpe undefined on a constant return stream).
    """
    r = np.asarray(period_returns, dtype=np.float64)
    if r.size < 2:
        raise ValueError(f"need at least 2 periods, got {r.size}")
    mean = r.mean()
    std = r.std(ddof=1)
    if std == 0.0 or r.max() == r.min():
        raise DegenerateSeriesError("zero return volatility: Sharpe undefined")
    ann_return = mean * periods_per_year
    ann_vol = std * np.sqrt(periods_per_year)
    curve = np.cumprod(1.0 + r)
    max_dd, mdd_duration = drawdown_stats(curve, initial=1.0)
    return PerfSummary(
        ann_return_pct=100.0 * ann_return,
        ann_vol_pct=100.0 * ann_vol,
        sharpe=float(ann_return / ann_vol),
        max_drawdown_pct=max_dd,
        mdd_duration_pct=mdd_duration,
        cum_log_return=float(cumulative_log_curve(r)[-1]),
    )


def return_correlation_matrix(reports) -> np.ndarray:
    """Pearson correlations of aligned gross period-return series."""
    dates = [tuple(p.position_date for p in rep.periods) for rep in reports]
    if len(set(dates)) > 1:
        raise ValueError("reports do not share identical period dates")
    series = np.array([[p.gross_return for p in rep.periods] for rep in reports])
    return np.corrcoef(series)


def signal_correlation_matrix(reports) -> tuple[np.ndarray, list]:
    """Correlations of cross-sectionally averaged probability scores.

    Only strategies exposing probabilities participate; returns the matrix
    and the list of participating strategy ids.
    """
    usable = [rep for rep in reports
              if all(p.mean_signal is not None for p in rep.periods)]
    if len(usable) < 2:
        return np.zeros((0, 0)), []
    dates = [tuple(p.position_date for p in rep.periods) for rep in usable]
    if len(set(dates)) > 1:
        raise ValueError("reports do not share identical period dates")
    series = np.array([[p.mean_signal for p in rep.periods] for rep in usable])
    return np.corrcoef(series), [rep.strategy for rep in usable]


def cost_decay_table(reports, costs=(0.0, 1.0, 2.0, 5.0),
                     periods_per_year: int = 12) -> dict:
    """Sharpe per (strategy, cost level), on net-of-cost period returns."""
    table = {}
    for rep in reports:
        row = {}
        for cost in costs:
            net = [p.net_return(cost) for p in rep.periods]
            row[cost] = perf_summary(net, periods_per_year).sharpe
        table[rep.strategy] = row
    return table

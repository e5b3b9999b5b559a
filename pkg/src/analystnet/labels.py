"""Binary out/under-performance targets and dated training samples.

A target at date t marks each firm 1 when its forward log-return over the
horizon strictly exceeds the cross-sectional mean forward return, else 0.
A sample bundles the graph, the feature block, and the target for one
trading day; a trading period is `horizon` consecutive days and yields one
sample per day.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .features import WARMUP_DAYS, FeatureMatrix, feature_matrix
from .graphs import CoverageGraph, build_graph
from .market_data import PricePanel

logger = logging.getLogger(__name__)

PERIOD_DAYS = 21  # trading days per period; also the default target horizon


@dataclass(frozen=True)
class TargetVector:
    date_formed: np.datetime64
    date_realized: np.datetime64
    values: np.ndarray          # {0, 1} per firm

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int8)
        object.__setattr__(self, "values", v)
        if not np.isin(v, (0, 1)).all():
            raise ValueError("target values must be 0 or 1")


@dataclass(frozen=True)
class Sample:
    """One training triplet: graph and features at t, target realized later."""

    graph: CoverageGraph
    features: FeatureMatrix
    target: TargetVector
    t: int

    def __post_init__(self):
        if self.target.date_formed != self.features.date:
            raise ValueError("target and features dated inconsistently")
        if self.graph.date > self.features.date:
            raise ValueError("graph dated after the sample's feature date")


class PeriodSkipped(Exception):
    """A boundary period lacks the history or future data for full samples."""

    def __init__(self, period: int, reason: str):
        super().__init__(f"period {period} skipped: {reason}")
        self.period = period
        self.reason = reason


def make_target(panel: PricePanel, t: int, horizon: int = PERIOD_DAYS) -> TargetVector:
    """1 where the firm's forward log-return strictly beats the mean, else 0."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if t + horizon >= panel.n_dates:
        raise ValueError(
            f"insufficient future data: t={t} needs {horizon} more days, "
            f"panel has {panel.n_dates}")
    fwd = np.log(panel.prices[t + horizon] / panel.prices[t])
    values = (fwd > fwd.mean()).astype(np.int8)
    return TargetVector(date_formed=panel.dates[t],
                        date_realized=panel.dates[t + horizon],
                        values=values)


@dataclass(frozen=True)
class AssemblyConfig:
    """How samples are put together for one walk-forward run."""

    horizon: int = PERIOD_DAYS
    lookback: int = 252
    graph_source: str = "analysts"
    graph_refresh: str = "monthly"
    corr_window: int = 252
    corr_percentile: float = 0.90
    del_edge_fraction: float = 0.60
    standardize_features: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.graph_refresh not in ("monthly", "daily"):
            raise ConfigError(f"graph_refresh must be monthly or daily, "
                              f"got {self.graph_refresh!r}")


def period_start(period: int, horizon: int = PERIOD_DAYS) -> int:
    return period * horizon


def n_periods(panel: PricePanel, horizon: int = PERIOD_DAYS) -> int:
    return panel.n_dates // horizon


def eligible_periods(panel: PricePanel, horizon: int = PERIOD_DAYS,
                     warmup: int = WARMUP_DAYS) -> list[int]:
    """Periods whose 21 samples all have full feature history and a realized
    target: start >= warmup and last sample's realization inside the panel."""
    out = []
    for period in range(n_periods(panel, horizon)):
        start = period_start(period, horizon)
        if start < warmup:
            continue
        if start + 2 * horizon - 1 >= panel.n_dates:
            continue
        out.append(period)
    return out


# A traded period's models are fit on samples from FIT_LAG periods earlier,
# the most recent period whose targets have all realized by the trade date.
# Fitting on the trade period's own samples would let validation labels
# overlap the traded return window.
FIT_LAG = 2


def tradeable_periods(panel: PricePanel, horizon: int = PERIOD_DAYS,
                      warmup: int = WARMUP_DAYS) -> list[int]:
    """Periods that can be traded: the lagged fit period has full history
    and the period's own return window closes inside the panel."""
    eligible = set(eligible_periods(panel, horizon, warmup))
    out = []
    for period in range(FIT_LAG, n_periods(panel, horizon)):
        if period - FIT_LAG not in eligible:
            continue
        if period_start(period, horizon) + horizon >= panel.n_dates:
            continue
        out.append(period)
    return out


def assemble_samples(panel: PricePanel, records, industries, period: int,
                     config: AssemblyConfig = AssemblyConfig()) -> list[Sample]:
    """All samples of one trading period, one per day, oldest first.

    With monthly graph refresh the period shares a single graph dated at the
    period's first day, so no sample sees records from its own future; with
    daily refresh each sample gets the graph at its own date. Edge deletion
    uses the run seed, so the removal pattern is drawn once per run, not
    redrawn per period.
    """
    start = period_start(period, config.horizon)
    if period < 0 or period >= n_periods(panel, config.horizon):
        raise PeriodSkipped(period, "outside the panel")
    if start < WARMUP_DAYS:
        raise PeriodSkipped(period, "insufficient history")
    if start + 2 * config.horizon - 1 >= panel.n_dates:
        raise PeriodSkipped(period, "insufficient future data")

    def graph_at(t: int) -> CoverageGraph:
        return build_graph(config.graph_source, panel, records, industries, t,
                           lookback=config.lookback,
                           corr_window=config.corr_window,
                           corr_percentile=config.corr_percentile,
                           del_fraction=config.del_edge_fraction,
                           del_seed=config.seed)

    shared_graph = graph_at(start) if config.graph_refresh == "monthly" else None
    samples = []
    for k in range(config.horizon):
        t = start + k
        graph = shared_graph if shared_graph is not None else graph_at(t)
        samples.append(Sample(
            graph=graph,
            features=feature_matrix(panel, t, config.standardize_features),
            target=make_target(panel, t, config.horizon),
            t=t,
        ))
    return samples


def period_sample(panel: PricePanel, records, industries, period: int,
                  config: AssemblyConfig = AssemblyConfig(),
                  day: int = 0) -> Sample:
    """One sample of a period without assembling the other twenty."""
    if not 0 <= day < config.horizon:
        raise ValueError(f"day must be in [0, {config.horizon}), got {day}")
    start = period_start(period, config.horizon)
    t = start + day
    if start < WARMUP_DAYS:
        raise PeriodSkipped(period, "insufficient history")
    if t + config.horizon >= panel.n_dates:
        raise PeriodSkipped(period, "insufficient future data")
    graph_t = start if config.graph_refresh == "monthly" else t
    graph = build_graph(config.graph_source, panel, records, industries,
                        graph_t, lookback=config.lookback,
                        corr_window=config.corr_window,
                        corr_percentile=config.corr_percentile,
                        del_fraction=config.del_edge_fraction,
                        del_seed=config.seed)
    return Sample(graph=graph,
                  features=feature_matrix(panel, t, config.standardize_features),
                  target=make_target(panel, t, config.horizon),
                  t=t)


def leakage_audit(samples) -> dict:
    """Date bounds used by the leakage checks: every feature/graph date must
    precede every target realization date in the audited set."""
    return {
        "max_feature_date": max(s.features.date for s in samples),
        "max_graph_date": max(s.graph.date for s in samples),
        "min_realization_date": min(s.target.date_realized for s in samples),
    }

"""Rolling monthly walk-forward backtest.

Each eligible trading period contributes 21 daily samples: the first 10
train the model, the next 10 validate the per-period grid search, and the
last one (index 20) is the test sample. The test day's predictions form a
quartile long/short position held for the full horizon; gross and net
returns and turnover are recorded per period.

Positions trade at the close of the test day, so the test sample's features
share that date; all model-fitting information (train/validation features
and graphs) must be strictly older. Periods are independent given the
loaded data and can be fanned out to worker processes; results are merged
in period order and turnover is computed on the merged sequence.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing
from dataclasses import dataclass, replace

import numpy as np

from . import baselines, gnn, labels
from .config import RunConfig
from .errors import ConfigError, NumericalError
from .labels import AssemblyConfig, PeriodSkipped, Sample, assemble_samples
from .market_data import IndustryMap, PricePanel

logger = logging.getLogger(__name__)

LEARNED_KINDS = {"nn": "nn", "gat": "gat", "gcn": "gcn"}


@dataclass(frozen=True)
class Position:
    """Per-firm weights at one date. Long/short books sum to 0 with 0.5 in
    each leg; long-only books sum to 1. Gross exposure is always 1."""

    date: np.datetime64
    weights: np.ndarray
    kind: str  # "long_short" | "long_only"

    def __post_init__(self):
        object.__setattr__(self, "weights",
                           np.asarray(self.weights, dtype=np.float64))


def quartile_portfolio(scores, quantile: float = 0.25,
                       date=np.datetime64("NaT")) -> Position:
    """Long the top floor(q*N) firms by score, short the bottom floor(q*N).

    Ties break by ascending firm index; the short leg is drawn from firms
    not already taken long, so the legs never overlap. Legs are
    equal-weighted at +-0.5 total each.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    k = math.floor(quantile * n)
    if k < 2:
        raise ValueError(
            f"fewer than 2 firms per leg: floor({quantile} * {n}) = {k}")
    by_desc = sorted(range(n), key=lambda i: (-scores[i], i))
    longs = set(by_desc[:k])
    by_asc = sorted((i for i in range(n) if i not in longs),
                    key=lambda i: (scores[i], i))
    shorts = by_asc[:k]
    weights = np.zeros(n)
    weights[list(longs)] = 0.5 / k
    weights[shorts] = -0.5 / k
    return Position(date=date, weights=weights, kind="long_short")


def long_only_position(n: int, date=np.datetime64("NaT")) -> Position:
    return Position(date=date, weights=np.full(n, 1.0 / n), kind="long_only")


def period_return(position: Position, panel: PricePanel, t: int,
                  horizon: int) -> float:
    """Portfolio simple return over (t, t + horizon]."""
    if t + horizon >= panel.n_dates:
        raise ValueError(f"return window past the panel end: t={t}, h={horizon}")
    rel = panel.prices[t + horizon] / panel.prices[t] - 1.0
    return float(position.weights @ rel)


def turnover(weights_now: np.ndarray, weights_prev: np.ndarray | None) -> float:
    """Sum of absolute weight changes; a fresh book pays its full entry."""
    prev = np.zeros_like(weights_now) if weights_prev is None else weights_prev
    return float(np.abs(weights_now - prev).sum())


@dataclass
class PeriodResult:
    period: int
    test_t: int
    position_date: str            # ISO date the position is formed (test day)
    weights: np.ndarray
    position_kind: str
    gross_return: float
    gross_log_return: float
    turnover: float
    net_returns: dict             # str(cost_bps) -> net simple return
    return_window: tuple          # (ISO start, ISO end); start == position date
    max_fit_feature_date: str     # newest feature date used to fit the model
    max_fit_graph_date: str
    test_feature_date: str
    test_graph_date: str
    mean_signal: float | None     # cross-sectional mean probability, if any
    selected: dict | None         # winning grid cell, if the strategy learns

    def net_return(self, cost_bps: float) -> float:
        return self.gross_return - (cost_bps / 10_000.0) * self.turnover

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "test_t": self.test_t,
            "position_date": self.position_date,
            "weights": [float(w) for w in self.weights],
            "position_kind": self.position_kind,
            "gross_return": self.gross_return,
            "gross_log_return": self.gross_log_return,
            "turnover": self.turnover,
            "net_returns": self.net_returns,
            "return_window": list(self.return_window),
            "max_fit_feature_date": self.max_fit_feature_date,
            "max_fit_graph_date": self.max_fit_graph_date,
            "test_feature_date": self.test_feature_date,
            "test_graph_date": self.test_graph_date,
            "mean_signal": self.mean_signal,
            "selected": self.selected,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PeriodResult":
        d = dict(d)
        d["weights"] = np.asarray(d["weights"], dtype=np.float64)
        d["return_window"] = tuple(d["return_window"])
        return cls(**d)


@dataclass
class BacktestReport:
    strategy: str
    config: dict                   # full flat config echo, seed included
    periods: list
    skipped: list                  # (period, reason)
    invalid: bool
    max_attention_row_dev: float = 0.0   # worst |row sum - 1| seen in any
    # attention forward pass of the run; 0 for attention-free strategies

    def gross_returns(self) -> list:
        return [p.gross_return for p in self.periods]

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "config": self.config,
            "invalid": self.invalid,
            "skipped": [list(s) for s in self.skipped],
            "max_attention_row_dev": self.max_attention_row_dev,
            "periods": [p.to_dict() for p in self.periods],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "BacktestReport":
        d = json.loads(text)
        return cls(strategy=d["strategy"], config=d["config"],
                   invalid=d["invalid"],
                   skipped=[tuple(s) for s in d["skipped"]],
                   max_attention_row_dev=d["max_attention_row_dev"],
                   periods=[PeriodResult.from_dict(p) for p in d["periods"]])


def strategy_plan(strategy: str, config: RunConfig) -> dict:
    """Resolve a strategy id to (model kind, graph source, layer grid)."""
    plans = {
        "long_only": dict(kind=None, source=config.graph_source, layers=None),
        "macd": dict(kind=None, source=config.graph_source, layers=None),
        "analyst_matrix": dict(kind=None, source="analysts", layers=None),
        "nn": dict(kind="nn", source=config.graph_source, layers=None),
        "gat": dict(kind="gat", source=config.graph_source,
                    layers=tuple(config.layers_grid)),
        "gcn": dict(kind="gcn", source=config.graph_source,
                    layers=tuple(config.layers_grid)),
        "gat_analysts": dict(kind="gat", source="analysts",
                             layers=tuple(config.layers_grid)),
        "gat_corr": dict(kind="gat", source="correlation",
                         layers=tuple(config.layers_grid)),
        "gat_industries": dict(kind="gat", source="industry",
                               layers=tuple(config.layers_grid)),
        "gat_del_edge": dict(kind="gat", source="del_edge",
                             layers=tuple(config.layers_grid)),
        "gat_1layer": dict(kind="gat", source="analysts", layers=(1,)),
    }
    if strategy not in plans:
        raise ConfigError(f"unknown strategy {strategy!r}")
    return plans[strategy]


def split_samples(samples) -> tuple[list, list, Sample]:
    """First half trains, second half validates, the last sample tests."""
    fit = samples[:-1]
    half = len(fit) // 2
    return fit[:half], fit[half:], samples[-1]


def _assembly_config(config: RunConfig, source: str) -> AssemblyConfig:
    return AssemblyConfig(
        horizon=config.horizon, lookback=config.lookback, graph_source=source,
        graph_refresh=config.graph_refresh, corr_window=config.corr_window,
        corr_percentile=config.corr_percentile,
        del_edge_fraction=config.del_edge_fraction,
        standardize_features=config.standardize_features, seed=config.seed)


def _run_period(panel, records, industries, config: RunConfig, strategy: str,
                period: int):
    """One period's position and bookkeeping (turnover is filled in later)."""
    plan = strategy_plan(strategy, config)
    assembly = _assembly_config(config, plan["source"])
    samples = assemble_samples(panel, records, industries, period, assembly)
    train_s, val_s, test_s = split_samples(samples)

    mean_signal = None
    selected = None
    if plan["kind"] is None:
        if strategy == "long_only":
            scores = baselines.long_only_signal(panel.n_firms)
        elif strategy == "macd":
            scores = baselines.macd_signal_avg(test_s.features)
        else:
            scores = baselines.analyst_matrix_signal(test_s.features, test_s.graph)
    else:
        grid = gnn.enumerate_grid(
            plan["kind"], lr_values=tuple(config.lr_grid),
            hidden_values=tuple(config.hidden_grid),
            layers_values=plan["layers"],
            wd_values=tuple(config.weight_decay_grid),
            heads_values=tuple(config.heads_grid),
            base_seed=config.seed, period=period,
            max_epochs=config.max_epochs, patience=config.patience,
            use_edge_weights=config.use_edge_weights)
        result = gnn.grid_search(train_s, val_s, grid)
        graph = None if plan["kind"] == "nn" else test_s.graph
        scores = gnn.model_forward(test_s.features.values, graph, result.params)
        mean_signal = float(np.mean(scores))
        selected = {
            "layers": result.config.layers, "hidden": result.config.hidden,
            "heads": result.config.heads, "lr": result.config.lr,
            "weight_decay": result.config.weight_decay,
            "val_loss": result.val_loss,
        }

    date = panel.dates[test_s.t]
    if strategy == "long_only":
        position = long_only_position(panel.n_firms, date)
    else:
        position = quartile_portfolio(scores, config.quantile, date)
    gross = period_return(position, panel, test_s.t, config.horizon)

    fit_features = max(s.features.date for s in train_s + val_s)
    fit_graphs = max(s.graph.date for s in train_s + val_s)
    return PeriodResult(
        period=period,
        test_t=test_s.t,
        position_date=str(date),
        weights=position.weights,
        position_kind=position.kind,
        gross_return=gross,
        gross_log_return=float(np.log1p(gross)),
        turnover=math.nan,
        net_returns={},
        return_window=(str(date), str(panel.dates[test_s.t + config.horizon])),
        max_fit_feature_date=str(fit_features),
        max_fit_graph_date=str(fit_graphs),
        test_feature_date=str(test_s.features.date),
        test_graph_date=str(test_s.graph.date),
        mean_signal=mean_signal,
        selected=selected,
    )


_WORKER_STATE: dict = {}


def _init_worker(panel, records, industries, config, strategy):
    from threadpoolctl import threadpool_limits
    # Keep a reference so the single-thread BLAS limit persists for the
    # worker's lifetime; period-level processes are the parallelism unit.
    _WORKER_STATE["_blas_limit"] = threadpool_limits(limits=1, user_api="blas")
    _WORKER_STATE.update(panel=panel, records=records, industries=industries,
                         config=config, strategy=strategy)


def _worker_period(period: int):
    s = _WORKER_STATE
    with gnn.observe_attention() as attention:
        try:
            result = _run_period(s["panel"], s["records"], s["industries"],
                                 s["config"], s["strategy"], period)
        except (PeriodSkipped, NumericalError) as exc:
            return period, str(exc), attention["max_row_dev"]
    return period, result, attention["max_row_dev"]


def run_walk_forward(panel: PricePanel, records, industries: IndustryMap | None,
                     config: RunConfig, strategy: str | None = None,
                     jobs: int = 1) -> BacktestReport:
    """Backtest one strategy over every eligible period of the panel."""
    strategy = strategy or config.strategy
    periods = labels.eligible_periods(panel, config.horizon)
    if not periods:
        raise ValueError("no eligible trading periods in this panel")

    if jobs > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs, initializer=_init_worker,
                      initargs=(panel, records, industries, config, strategy)) as pool:
            outcomes = pool.map(_worker_period, periods)
    else:
        _init_worker(panel, records, industries, config, strategy)
        outcomes = [_worker_period(p) for p in periods]

    results = []
    skipped = []
    prev_weights = None
    attention_dev = 0.0
    for period, outcome, dev in outcomes:
        attention_dev = max(attention_dev, dev)
        if isinstance(outcome, str):
            skipped.append((period, outcome))
            logger.warning("period %d skipped: %s", period, outcome)
            continue
        outcome.turnover = turnover(outcome.weights, prev_weights)
        outcome.net_returns = {
            repr(float(c)): outcome.net_return(float(c)) for c in config.cost_levels}
        prev_weights = outcome.weights
        results.append(outcome)

    invalid = len(skipped) > 0.10 * len(periods)
    if invalid:
        logger.error("%d of %d periods skipped: run marked invalid",
                     len(skipped), len(periods))
    return BacktestReport(strategy=strategy, config=config.to_dict(),
                          periods=results, skipped=skipped, invalid=invalid,
                          max_attention_row_dev=attention_dev)


def apply_costs(report: BacktestReport, cost_bps: float) -> BacktestReport:
    """Report with net returns at one extra cost level filled in."""
    new_periods = []
    for p in report.periods:
        nets = dict(p.net_returns)
        nets[repr(float(cost_bps))] = p.net_return(cost_bps)
        new_periods.append(replace(p, net_returns=nets))
    return replace(report, periods=new_periods)


def audit_no_lookahead(report: BacktestReport) -> list:
    """Violations of the walk-forward information ordering.

    For every period: all model-fitting feature/graph dates must be strictly
    older than the position date; the test sample's feature/graph dates may
    not exceed the position date (the position is formed at that day's
    close); and the position date must not be later than the return window
    start.
    """
    violations = []
    for p in report.periods:
        if not (p.max_fit_feature_date < p.position_date):
            violations.append((p.period, "fit features not before position date"))
        if not (p.max_fit_graph_date < p.position_date):
            violations.append((p.period, "fit graphs not before position date"))
        if p.test_feature_date > p.position_date:
            violations.append((p.period, "test features after position date"))
        if p.test_graph_date > p.position_date:
            violations.append((p.period, "test graph after position date"))
        if not (p.position_date <= p.return_window[0]):
            violations.append((p.period, "position date after return window start"))
    return violations

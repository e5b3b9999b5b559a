"""Command-line pipeline: synthesize data, inspect graphs and features, run
backtests and ablations, and produce report tables.

Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.
Every command is deterministic given its config and seed; rerunning a
command overwrites its outputs byte-identically.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import backtest as bt
from . import gnn, graphs, labels, metrics
from . import synth as synth_mod
from .config import ABLATION_STRATEGIES, RunConfig, STRATEGIES
from .errors import ConfigError, DataError, NumericalError
from .features import FEATURE_NAMES, feature_matrix
from .labels import eligible_periods, period_start
from .market_data import (load_estimates, load_industries, load_price_panel,
                          write_estimates, write_industries, write_price_panel)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load_inputs(config: RunConfig):
    panel, _ = load_price_panel(config.prices)
    records, _ = load_estimates(config.estimates, panel)
    industries = load_industries(config.industries, panel) \
        if config.industries else None
    return panel, records, industries


def _graph_for(config: RunConfig, panel, records, industries, t: int):
    return graphs.build_graph(
        config.graph_source, panel, records, industries, t,
        lookback=config.lookback, corr_window=config.corr_window,
        corr_percentile=config.corr_percentile,
        del_fraction=config.del_edge_fraction, del_seed=config.seed)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = synth_mod.SynthConfig.from_file(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel, records, industries = synth_mod.generate(config)
    write_price_panel(panel, out / "prices.csv")
    write_estimates(records, out / "estimates.csv")
    write_industries(industries, out / "industries.csv")
    (out / "synth_config.json").write_text(
        json.dumps(config.to_dict(), sort_keys=True, indent=1), encoding="utf-8")
    logger.info("wrote %d firms x %d days and %d estimate records to %s",
                panel.n_firms, panel.n_dates, len(records), out)
    return EXIT_OK


def write_report_outputs(report: bt.BacktestReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    costs = [c for c in report.config["cost_levels"] if c != 0]
    header = ["date", "gross"] + [f"net@{c:g}" for c in costs] + ["turnover"]
    rows = []
    for p in report.periods:
        rows.append([p.position_date, _fmt(p.gross_return)]
                    + [_fmt(p.net_return(c)) for c in costs]
                    + [_fmt(p.turnover)])
    _write_csv(out / "returns.csv", header, rows)


def cmd_backtest(args) -> int:
    config = RunConfig.from_file(args.config)
    if args.strategy:
        config = config.replaced(strategy=args.strategy)
    panel, records, industries = _load_inputs(config)
    report = bt.run_walk_forward(panel, records, industries, config,
                                 jobs=args.jobs)
    write_report_outputs(report, Path(args.out))
    logger.info("backtest %s: %d periods, invalid=%s",
                report.strategy, len(report.periods), report.invalid)
    return EXIT_OK


_MESSAGE_PASSING = {"gcn": "Convolution"}
_ADJACENCY = {"gat_corr": "Correlation", "gat_industries": "Industries",
              "gat_del_edge": "Perturbed"}


def summary_rows(reports) -> list:
    rows = []
    for rep in reports:
        s = metrics.perf_summary(rep.gross_returns())
        rows.append([rep.strategy, _fmt(s.ann_return_pct), _fmt(s.ann_vol_pct),
                     _fmt(s.sharpe), _fmt(s.max_drawdown_pct),
                     _fmt(s.mdd_duration_pct)])
    return rows


def cmd_ablate(args) -> int:
    config = RunConfig.from_file(args.config)
    panel, records, industries = _load_inputs(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for strategy in ABLATION_STRATEGIES:
        report = bt.run_walk_forward(panel, records, industries, config,
                                     strategy=strategy, jobs=args.jobs)
        if report.invalid:
            raise NumericalError(f"ablation run {strategy} is invalid "
                                 f"({len(report.skipped)} skipped periods)")
        (out / f"report_{strategy}.json").write_text(report.to_json(),
                                                     encoding="utf-8")
        reports.append(report)
    _write_csv(out / "summary.csv",
               ["strategy", "returns_pct", "vol_pct", "sharpe", "md_pct",
                "mdd_pct"],
               summary_rows(reports))
    delta_rows = []
    for rep in reports:
        cum = metrics.cumulative_log_curve(rep.gross_returns())[-1]
        delta_rows.append([
            rep.strategy, _fmt(cum),
            _MESSAGE_PASSING.get(rep.strategy, "Attention"),
            _ADJACENCY.get(rep.strategy, "Analyst"),
            "1" if rep.strategy == "gat_1layer" else "2",
        ])
    delta_rows.sort(key=lambda r: -float(r[1]))
    _write_csv(out / "deltas.csv",
               ["strategy", "cum_log_return", "message_passing", "adjacency",
                "layers"],
               delta_rows)
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for path in args.reports:
        path = Path(path)
        if not path.exists():
            raise DataError(f"report file not found: {path}")
        reports.append(bt.BacktestReport.from_json(path.read_text(encoding="utf-8")))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    _write_csv(out / "summary.csv",
               ["strategy", "returns_pct", "vol_pct", "sharpe", "md_pct",
                "mdd_pct"],
               summary_rows(reports))

    names = [rep.strategy for rep in reports]
    if len(reports) > 1:
        corr = metrics.return_correlation_matrix(reports)
        rows = [[names[i]] + [_fmt(v) for v in corr[i]] for i in range(len(names))]
        _write_csv(out / "corr.csv", ["strategy"] + names, rows)
        sig_corr, sig_names = metrics.signal_correlation_matrix(reports)
        if sig_names:
            rows = [[sig_names[i]] + [_fmt(v) for v in sig_corr[i]]
                    for i in range(len(sig_names))]
            _write_csv(out / "signal_corr.csv", ["strategy"] + sig_names, rows)

    costs = sorted({float(c) for rep in reports
                    for c in rep.config["cost_levels"]})
    table = metrics.cost_decay_table(reports, costs)
    rows = [[name] + [_fmt(table[name][c]) for c in costs] for name in names]
    _write_csv(out / "cost_decay.csv",
               ["strategy"] + [f"sharpe@{c:g}bps" for c in costs], rows)

    header = ["date"] + names
    curves = [metrics.cumulative_log_curve(rep.gross_returns()) for rep in reports]
    dates = [p.position_date for p in reports[0].periods]
    rows = [[dates[t]] + [_fmt(c[t]) for c in curves]
            for t in range(len(dates))]
    _write_csv(out / "cum_returns.csv", header, rows)
    return EXIT_OK


def cmd_graph(args) -> int:
    config = RunConfig.from_file(args.config)
    panel, records, industries = _load_inputs(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    periods = eligible_periods(panel, config.horizon)
    if not periods:
        raise DataError("no eligible periods: panel too short")
    snapshots = [(p, _graph_for(config, panel, records, industries,
                                period_start(p, config.horizon)))
                 for p in periods]
    if args.verb == "dump":
        rows = []
        for _, g in snapshots:
            for (i, j), w in sorted(g.edges.items()):
                rows.append([str(g.date), panel.firms[i], panel.firms[j], _fmt(w)])
        _write_csv(out / "edges.csv", ["date", "src", "dst", "weight"], rows)
    else:
        rows = []
        prev = None
        for _, g in snapshots:
            stats = graphs.topology_stats(g, prev)
            rows.append([str(g.date), _fmt(stats.jaccard_vs_prev),
                         _fmt(stats.diameter), _fmt(stats.transitivity)])
            prev = g
        _write_csv(out / "graph_stats.csv",
                   ["date", "jaccard", "diameter", "transitivity"], rows)
    return EXIT_OK


def cmd_features(args) -> int:
    config = RunConfig.from_file(args.config)
    panel, _, _ = _load_inputs(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = panel.date_index(args.start) if args.start else 252
    end = panel.date_index(args.end) if args.end else panel.n_dates - 1
    rows = []
    for t in range(start, end + 1):
        fm = feature_matrix(panel, t, config.standardize_features)
        for i, ticker in enumerate(panel.firms):
            rows.append([str(fm.date), ticker]
                        + [_fmt(v) for v in fm.values[i]])
    _write_csv(out / "features.csv",
               ["date", "ticker"] + [f"f{k+1}" for k in range(len(FEATURE_NAMES))],
               rows)
    return EXIT_OK


def cmd_labels(args) -> int:
    config = RunConfig.from_file(args.config)
    panel, _, _ = _load_inputs(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in eligible_periods(panel, config.horizon):
        start = period_start(p, config.horizon)
        for t in range(start, start + config.horizon):
            target = labels.make_target(panel, t, config.horizon)
            for i, ticker in enumerate(panel.firms):
                rows.append([str(target.date_formed), ticker,
                             str(int(target.values[i]))])
    _write_csv(out / "targets.csv", ["date", "ticker", "target"], rows)
    return EXIT_OK


def cmd_attention(args) -> int:
    config = RunConfig.from_file(args.config)
    panel, records, industries = _load_inputs(config)
    periods = eligible_periods(panel, config.horizon)
    if not periods:
        raise DataError("no eligible periods: panel too short")
    period = args.period if args.period is not None else periods[-1]
    if period not in periods:
        raise ConfigError(f"period {period} is not eligible; choices "
                          f"{periods[0]}..{periods[-1]}")
    plan = bt.strategy_plan("gat_analysts", config)
    assembly = bt._assembly_config(config, plan["source"])
    samples = labels.assemble_samples(panel, records, industries, period, assembly)
    train_s, val_s, test_s = bt.split_samples(samples)
    grid = gnn.enumerate_grid(
        "gat", lr_values=tuple(config.lr_grid),
        hidden_values=tuple(config.hidden_grid),
        layers_values=tuple(config.layers_grid),
        wd_values=tuple(config.weight_decay_grid),
        heads_values=tuple(config.heads_grid), base_seed=config.seed,
        period=period, max_epochs=config.max_epochs, patience=config.patience,
        use_edge_weights=config.use_edge_weights)
    result = gnn.grid_search(train_s, val_s, grid)
    snapshot = gnn.extract_top_attention(result.params, test_s,
                                         config.top_attention, panel.firms)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[str(snapshot.date), src, dst, str(head), _fmt(alpha)]
            for src, dst, head, alpha in snapshot.rows]
    _write_csv(out / "attention.csv", ["date", "src", "dst", "head", "alpha"],
               rows)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = gnn.gradcheck_suite(n_instances=args.instances)
    print(f"gradcheck ok: max relative error {worst:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="analystnet",
                     description="Coverage-network momentum strategies: "
                                 "data, graphs, models, backtests.")
    sub = parser.add_subparsers(dest="command", required=True)
    jobs_default = os.cpu_count() or 1

    p = sub.add_parser("synth", help="generate a synthetic market")
    p.add_argument("--config", required=True, help="SynthConfig JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("backtest", help="walk-forward backtest")
    bsub = p.add_subparsers(dest="verb", required=True)
    run = bsub.add_parser("run", help="run one strategy")
    run.add_argument("--strategy", choices=STRATEGIES, default=None,
                     help="override the config's strategy id")
    run.add_argument("--config", required=True, help="RunConfig JSON file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--jobs", type=int, default=jobs_default,
                     help="worker processes (default: CPU count)")
    run.set_defaults(func=cmd_backtest)

    p = sub.add_parser("ablate", help="run the six graph/model ablation variants")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="summaries from one or more report.json")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("graph", help="dump graph edge lists or topology stats")
    p.add_argument("verb", choices=["dump", "stats"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("features", help="dump the feature matrix time series")
    p.add_argument("verb", choices=["dump"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--start", default=None, help="ISO start date")
    p.add_argument("--end", default=None, help="ISO end date")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("labels", help="dump the target time series")
    p.add_argument("verb", choices=["dump"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("attention", help="train on one period and dump the "
                                         "strongest attention edges")
    p.add_argument("verb", choices=["dump"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--period", type=int, default=None,
                   help="period index (default: last eligible)")
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("gradcheck", help="finite-difference check of the "
                                         "model gradients")
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Scan synthetic-market seeds for the planted-signal margins.

For each seed, backtests the attention model on the full and edge-deleted
coverage graphs (plus the untrained baselines) and prints the Sharpe gaps
that the planted-signal acceptance checks rely on. Run this when tuning
generator parameters or picking the pinned acceptance seeds.
"""

import argparse
import json
import time

from analystnet import backtest as bt
from analystnet import metrics, synth
from analystnet.config import RunConfig

REDUCED_GRID = {
    "lr_grid": [1e-2, 1e-3], "hidden_grid": [64], "layers_grid": [1, 2],
    "weight_decay_grid": [1e-5], "heads_grid": [2],
}


def sharpe_of(panel, records, industries, config, strategy, jobs):
    report = bt.run_walk_forward(panel, records, industries, config,
                                 strategy=strategy, jobs=jobs)
    return metrics.perf_summary(report.gross_returns()).sharpe


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", required=True)
    ap.add_argument("--phi", type=float, default=0.5)
    ap.add_argument("--jobs", type=int, default=2)
    ap.add_argument("--skip-baselines", action="store_true")
    args = ap.parse_args()

    for seed in args.seeds:
        t0 = time.time()
        panel, records, industries = synth.generate(
            synth.SynthConfig(seed=seed, spillover_phi=args.phi))
        config = RunConfig.from_dict(dict(REDUCED_GRID, seed=seed))
        row = {"seed": seed, "phi": args.phi}
        row["gat"] = sharpe_of(panel, records, industries, config,
                               "gat_analysts", args.jobs)
        if args.phi > 0:
            row["del"] = sharpe_of(panel, records, industries, config,
                                   "gat_del_edge", args.jobs)
            row["gap_del"] = row["gat"] - row["del"]
        if not args.skip_baselines:
            row["lo"] = sharpe_of(panel, records, industries, config,
                                  "long_only", args.jobs)
            row["am"] = sharpe_of(panel, records, industries, config,
                                  "analyst_matrix", args.jobs)
            row["gap_lo"] = row["gat"] - row["lo"]
            row["gap_am"] = row["gat"] - row["am"]
        row["secs"] = round(time.time() - t0)
        print(json.dumps(row), flush=True)


if __name__ == "__main__":
    main()

"""Analyst-coverage-network momentum strategies.

Builds dated firm graphs from analyst estimate streams, computes momentum
features, trains graph attention forecasters of monthly out/under-
performance, and evaluates quartile long/short portfolios in a rolling
walk-forward backtest against baselines and graph ablations.
"""

__version__ = "0.1.0"

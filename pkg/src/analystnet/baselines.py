"""Comparison strategies: market long-only, trend-signal averaging, neighbor
momentum averaging on the coverage graph, and a graph-free feed-forward net.

Every baseline emits a per-firm score vector (higher = stronger buy); the
backtest turns scores into positions the same way for all strategies.
"""

from __future__ import annotations

import numpy as np

from .features import FeatureMatrix
from .gnn import ModelConfig, TrainResult, train
from .graphs import CoverageGraph


def long_only_signal(n: int) -> np.ndarray:
    """All-equal scores; the backtest holds every firm long at equal weight."""
    return np.ones(n)


def macd_signal_avg(features: FeatureMatrix) -> np.ndarray:
    """Per-firm mean of the three trend-signal columns."""
    return features.macd_columns.mean(axis=1)


def analyst_matrix_signal(features: FeatureMatrix, graph: CoverageGraph) -> np.ndarray:
    """Coverage-weighted mean of 1-hop neighbors' trend momentum.

    score_i = sum_j w_ij * mom_j / sum_j w_ij over neighbors j, where mom_j
    is the firm's mean trend-signal value; isolated firms score 0.
    """
    mom = macd_signal_avg(features)
    a = graph.adjacency(weighted=True)
    weight_sums = a.sum(axis=1)
    scores = np.zeros(graph.n)
    connected = weight_sums > 0
    scores[connected] = (a @ mom)[connected] / weight_sums[connected]
    return scores


def nn_signal(features: FeatureMatrix, train_samples, val_samples,
              config: ModelConfig) -> tuple[np.ndarray, TrainResult]:
    """Probabilities from a 2-layer feed-forward net applied row-wise."""
    if config.kind != "nn":
        raise ValueError(f"nn_signal needs kind='nn', got {config.kind!r}")
    result = train(train_samples, val_samples, config)
    from .gnn import model_forward
    return model_forward(features.values, None, result.params), result

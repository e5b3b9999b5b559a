"""Flat run configuration: one JSON object, every key documented and checked.

Unknown keys are rejected at load time so a typo cannot silently fall back
to a default. All randomness in a run flows from the single base ``seed``,
which is echoed into every output.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

GRAPH_SOURCES = ("analysts", "correlation", "industry", "del_edge")

STRATEGIES = ("long_only", "macd", "analyst_matrix", "nn", "gat", "gcn",
              "gat_analysts", "gat_corr", "gat_industries", "gat_del_edge",
              "gat_1layer")

ABLATION_STRATEGIES = ("gat_analysts", "gat_corr", "gat_industries",
                       "gat_del_edge", "gat_1layer", "gcn")


@dataclass
class RunConfig:
    """Everything a backtest run needs beyond the loaded data."""

    # data paths (used by the CLI; the engine takes loaded structures)
    prices: str = ""
    estimates: str = ""
    industries: str = ""
    # strategy and portfolio construction
    strategy: str = "gat_analysts"
    quantile: float = 0.25
    cost_levels: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 5.0])
    # sample assembly
    horizon: int = 21
    lookback: int = 252
    graph_source: str = "analysts"
    graph_refresh: str = "monthly"
    corr_window: int = 252
    corr_percentile: float = 0.90
    del_edge_fraction: float = 0.60
    standardize_features: bool = True
    use_edge_weights: bool = False
    # model selection grid
    lr_grid: list = field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    hidden_grid: list = field(default_factory=lambda: [64, 128])
    layers_grid: list = field(default_factory=lambda: [1, 2])
    weight_decay_grid: list = field(default_factory=lambda: [1e-4, 1e-5, 1e-6])
    heads_grid: list = field(default_factory=lambda: [2, 8])
    max_epochs: int = 300
    patience: int = 20
    # reproducibility and reporting
    seed: int = 0
    top_attention: int = 10

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.graph_source not in GRAPH_SOURCES:
            raise ConfigError(
                f"unknown graph_source {self.graph_source!r}; choose from {GRAPH_SOURCES}")
        if self.graph_refresh not in ("monthly", "daily"):
            raise ConfigError(
                f"graph_refresh must be 'monthly' or 'daily', got {self.graph_refresh!r}")
        if not 0.0 < self.quantile <= 0.5:
            raise ConfigError(f"quantile must be in (0, 0.5], got {self.quantile}")
        if not 0.0 < self.corr_percentile < 1.0:
            raise ConfigError(
                f"corr_percentile must be in (0, 1), got {self.corr_percentile}")
        if not 0.0 <= self.del_edge_fraction <= 1.0:
            raise ConfigError(
                f"del_edge_fraction must be in [0, 1], got {self.del_edge_fraction}")
        if self.horizon < 3:
            raise ConfigError(f"horizon must be >= 3 days, got {self.horizon}")
        if min(self.cost_levels, default=0.0) < 0.0:
            raise ConfigError("cost_levels must be non-negative")
        for name in ("lr_grid", "hidden_grid", "layers_grid",
                     "weight_decay_grid", "heads_grid"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must not be empty")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a flat JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def replaced(self, **kwargs) -> "RunConfig":
        d = self.to_dict()
        d.update(kwargs)
        return RunConfig.from_dict(d)

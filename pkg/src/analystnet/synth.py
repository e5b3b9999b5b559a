"""Synthetic market generator with a planted coverage-driven lead-lag effect.

Firms live in latent sectors; each analyst covers a basket of firms drawn
partly from one home sector and partly from the whole market, and issues
estimate records roughly weekly. Daily log-returns combine a sector factor,
idiosyncratic noise, and a catch-up spillover term: ``spillover_phi`` times
the gap between the trailing 21-day mean return of the firm's coverage
neighbors and the firm's own trailing mean, lagged one day. A firm lagging
its covered peers drifts toward them, so next-month relative performance is
predictable from the coverage graph and from nothing cheaper: own momentum
in isolation points the wrong way, and removing coverage edges degrades the
neighbor-momentum estimate. Neighbors are taken from the trailing-year
co-coverage graph (the union of baskets active within the last twelve
months), which is exactly the firm network the estimate stream reveals. The
effect vanishes at ``spillover_phi = 0``.

Everything is deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .market_data import EstimateRecord, PricePanel

TRAIL_DAYS = 21          # neighbor-momentum window; matches the target horizon
ESTIMATE_RATE = 0.2      # per-day emission probability per covered pair
# Share of basket slots drawn from the whole market rather than the home
# sector, so the coverage graph stays informative beyond the industry
# partition.
GLOBAL_BASKET_SHARE = 0.2
COVERAGE_WINDOW_MONTHS = 12   # months of basket history driving the spillover
START_DATE = "2006-01-02"


@dataclass(frozen=True)
class SynthConfig:
    n_firms: int = 100
    n_analysts: int = 40
    n_days: int = 1008
    basket_size_mean: float = 3.0
    coverage_churn: float = 0.05   # share of baskets resampled per month
    spillover_phi: float = 0.5
    noise_vol: float = 0.015       # daily idiosyncratic vol
    factor_vol: float = 0.002      # daily sector-factor vol
    seed: int = 0

    def __post_init__(self):
        if self.n_days <= 600:
            raise ConfigError(f"n_days must exceed 600 (warm-up plus at least "
                              f"a trading year), got {self.n_days}")
        if not 0.0 <= self.spillover_phi < 1.0:
            raise ConfigError(
                f"spillover_phi must be in [0, 1), got {self.spillover_phi}")
        if not 0.0 <= self.coverage_churn <= 1.0:
            raise ConfigError(
                f"coverage_churn must be in [0, 1], got {self.coverage_churn}")
        if self.n_firms < 4 or self.n_analysts < 1:
            raise ConfigError("need at least 4 firms and 1 analyst")

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown synth config key(s): {', '.join(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "SynthConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"synth config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"synth config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)


def _draw_basket(rng: np.random.Generator, home: np.ndarray, n_firms: int,
                 mean_size: float) -> np.ndarray:
    """A sorted basket: mostly home-sector firms, with a global tail."""
    size = int(min(max(2, rng.poisson(mean_size)), n_firms))
    n_global = max(1, int(round(GLOBAL_BASKET_SHARE * size)))
    n_home = min(size - n_global, home.size)
    chosen = list(rng.choice(home, size=n_home, replace=False)) if n_home else []
    pool = np.setdiff1d(np.arange(n_firms), np.asarray(chosen, dtype=int))
    extra = rng.choice(pool, size=size - len(chosen), replace=False)
    return np.sort(np.concatenate([np.asarray(chosen, dtype=int), extra]))


def _binary_coverage_adjacency(baskets, n_firms: int) -> np.ndarray:
    a = np.zeros((n_firms, n_firms), dtype=bool)
    for basket in baskets:
        a[np.ix_(basket, basket)] = True
    np.fill_diagonal(a, False)
    return a


def generate(config: SynthConfig):
    """Returns (PricePanel, list of EstimateRecord, IndustryMap)."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    n, t_total = config.n_firms, config.n_days
    firms = [f"F{i:03d}" for i in range(n)]
    analyst_ids = [f"A{k:03d}" for k in range(config.n_analysts)]

    n_sectors = max(2, n // 5)
    sector_of = np.arange(n) % n_sectors
    industries = {firms[i]: f"S{sector_of[i]:02d}" for i in range(n)}
    sector_members = [np.flatnonzero(sector_of == s) for s in range(n_sectors)]

    home_sector = rng.integers(0, n_sectors, size=config.n_analysts)
    baskets = [_draw_basket(rng, sector_members[home_sector[k]], n,
                            config.basket_size_mean)
               for k in range(config.n_analysts)]
    # The spillover flows through the trailing-window co-coverage graph:
    # the union of basket snapshots from the last COVERAGE_WINDOW_MONTHS.
    snapshots = [_binary_coverage_adjacency(baskets, n)]
    adjacency = snapshots[0]

    dates = np.array(
        np.busday_offset(START_DATE, np.arange(t_total), roll="forward"),
        dtype="datetime64[D]")

    def active_pairs():
        out = []
        for k in range(config.n_analysts):
            for f in baskets[k]:
                out.append((k, int(f)))
        return out

    pairs = active_pairs()
    returns = np.zeros((t_total, n))
    records = []

    # day 0: coverage only, no return
    emit = rng.random(len(pairs)) < ESTIMATE_RATE
    for keep, (k, f) in zip(emit, pairs):
        if keep:
            records.append(EstimateRecord(dates[0], analyst_ids[k], firms[f]))

    n_churn = int(round(config.coverage_churn * config.n_analysts))
    for t in range(1, t_total):
        if t % TRAIL_DAYS == 0 and n_churn:
            for k in sorted(rng.choice(config.n_analysts, size=n_churn,
                                       replace=False)):
                baskets[int(k)] = _draw_basket(
                    rng, sector_members[home_sector[int(k)]], n,
                    config.basket_size_mean)
            pairs = active_pairs()
            snapshots.append(_binary_coverage_adjacency(baskets, n))
            snapshots = snapshots[-COVERAGE_WINDOW_MONTHS:]
            adjacency = np.logical_or.reduce(snapshots)

        factor = rng.normal(0.0, config.factor_vol, size=n_sectors)
        idio = rng.normal(0.0, config.noise_vol, size=n)
        trail = returns[max(1, t - TRAIL_DAYS): t]
        if trail.size:
            momentum = trail.mean(axis=0)
            degree = adjacency.sum(axis=1)
            neighbor_mom = adjacency @ momentum / np.maximum(degree, 1)
            # covered firms drift toward their peers; uncovered firms don't
            catch_up = np.where(degree > 0, neighbor_mom - momentum, 0.0)
        else:
            catch_up = np.zeros(n)
        returns[t] = (factor[sector_of] + idio
                      + config.spillover_phi * catch_up)

        emit = rng.random(len(pairs)) < ESTIMATE_RATE
        for keep, (k, f) in zip(emit, pairs):
            if keep:
                records.append(EstimateRecord(dates[t], analyst_ids[k], firms[f]))

    prices = 100.0 * np.exp(np.cumsum(returns, axis=0))
    panel = PricePanel(dates=dates, firms=tuple(firms), prices=prices)
    records.sort(key=lambda r: (r.date, r.analyst_id, r.firm_id))
    return panel, records, industries

"""Firm-to-firm networks: analyst coverage projection and its ablation variants.

The coverage graph is the one-mode projection of the bipartite analyst-firm
record stream: the weight of edge (i, j) counts distinct analysts with at
least one estimate for each of the two firms inside the trailing lookback
window. Correlation and industry graphs replace the edge semantics for
ablation runs; `delete_edges` perturbs a graph by dropping a random edge
subset. `topology_stats` produces the per-date Jaccard / diameter /
transitivity diagnostics.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import ConfigError, DegenerateSeriesWarning
from .market_data import EstimateRecord, IndustryMap, PricePanel

DEFAULT_LOOKBACK = 252
DEFAULT_CORR_WINDOW = 252
DEFAULT_CORR_PERCENTILE = 0.90
DEFAULT_DELETE_FRACTION = 0.60


@dataclass(frozen=True, eq=False)
class CoverageGraph:
    """Dated weighted undirected firm graph; edges keyed (i, j) with i < j."""

    date: np.datetime64
    n: int
    edges: dict
    lookback_days: int

    def __post_init__(self):
        for (i, j), w in self.edges.items():
            if not (0 <= i < j < self.n):
                raise ValueError(f"bad edge ({i}, {j}) for n={self.n}")
            if w < 1:
                raise ValueError(f"edge ({i}, {j}) has weight {w} < 1")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_set(self) -> frozenset:
        return frozenset(self.edges)

    def adjacency(self, weighted: bool = False) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for (i, j), w in self.edges.items():
            a[i, j] = a[j, i] = w if weighted else 1.0
        return a

    def neighbor_mask(self, self_loops: bool = True) -> np.ndarray:
        mask = self.adjacency() > 0
        if self_loops:
            np.fill_diagonal(mask, True)
        return mask


@dataclass(frozen=True)
class TopologyStats:
    jaccard_vs_prev: float
    diameter: float
    transitivity: float


class IndexedEstimates:
    """Array view of an estimate record list for fast window filtering."""

    def __init__(self, dates: np.ndarray, analysts: np.ndarray, firms: np.ndarray):
        self.dates = dates        # datetime64[D], sorted
        self.analysts = analysts  # int codes
        self.firms = firms        # panel firm indices

    @classmethod
    def from_records(cls, records, panel: PricePanel) -> "IndexedEstimates":
        if not records:
            empty = np.array([], dtype="datetime64[D]")
            return cls(empty, np.array([], dtype=np.int64), np.array([], dtype=np.int64))
        order = sorted(range(len(records)), key=lambda k: records[k].date)
        dates = np.array([records[k].date for k in order], dtype="datetime64[D]")
        analyst_code = {}
        analysts = np.empty(len(records), dtype=np.int64)
        firms = np.empty(len(records), dtype=np.int64)
        for pos, k in enumerate(order):
            r = records[k]
            analysts[pos] = analyst_code.setdefault(r.analyst_id, len(analyst_code))
            firms[pos] = panel.firm_index(r.firm_id)
        return cls(dates, analysts, firms)


def _window_slice(idx: IndexedEstimates, panel: PricePanel, ti: int, lookback: int):
    hi = np.searchsorted(idx.dates, panel.dates[ti], side="right")
    if ti - lookback >= 0:
        lo = np.searchsorted(idx.dates, panel.dates[ti - lookback], side="right")
    else:
        lo = 0
    return lo, hi


def _resolve_t(panel: PricePanel, t) -> int:
    if isinstance(t, (int, np.integer)):
        if not 0 <= t < panel.n_dates:
            raise ValueError(f"date index {t} out of range")
        return int(t)
    return panel.date_index(t)


def project_coverage(records, t, lookback: int, panel: PricePanel) -> CoverageGraph:
    """Project the analyst-firm record stream onto a firm graph at date t.

    Edge (i, j) gets weight = number of distinct analysts with at least one
    estimate for firm i and one for firm j within the trailing ``lookback``
    trading days (window (t - lookback, t], closed on the right). Firms
    without coverage remain isolated nodes.
    """
    if lookback < 1:
        raise ValueError(f"lookback must be >= 1, got {lookback}")
    ti = _resolve_t(panel, t)
    idx = records if isinstance(records, IndexedEstimates) else \
        IndexedEstimates.from_records(records, panel)
    lo, hi = _window_slice(idx, panel, ti, lookback)

    covered: dict[int, set] = {}
    for a, f in zip(idx.analysts[lo:hi], idx.firms[lo:hi]):
        covered.setdefault(int(a), set()).add(int(f))
    edges: dict[tuple[int, int], float] = {}
    for basket in covered.values():
        for i, j in itertools.combinations(sorted(basket), 2):
            edges[(i, j)] = edges.get((i, j), 0.0) + 1.0
    return CoverageGraph(date=panel.dates[ti], n=panel.n_firms,
                         edges=edges, lookback_days=lookback)


def correlation_graph(panel: PricePanel, t, window: int = DEFAULT_CORR_WINDOW,
                      percentile: float = DEFAULT_CORR_PERCENTILE) -> CoverageGraph:
    """Connect firm pairs whose trailing daily log-return correlation is in
    the top (1 - percentile) share of all pairs; kept edges get weight 1.

    The cutoff is the k-th largest pair correlation with
    k = ceil((1 - percentile) * n_pairs); ties at the cutoff are all kept.
    Zero-variance firms get correlation 0 to every partner and are never
    connected (a DegenerateSeriesWarning is emitted).
    """
    if not 0.0 < percentile < 1.0:
        raise ValueError(f"percentile must be in (0, 1), got {percentile}")
    ti = _resolve_t(panel, t)
    if ti < window:
        raise ValueError(f"correlation window {window} needs t >= {window}, got {ti}")
    logp = np.log(panel.prices[ti - window: ti + 1])
    rets = np.diff(logp, axis=0)
    sd = rets.std(axis=0)
    degenerate = np.flatnonzero(sd == 0.0)
    if degenerate.size:
        warnings.warn(
            f"{degenerate.size} firm(s) with constant returns excluded from "
            f"the correlation graph", DegenerateSeriesWarning)
    n = panel.n_firms
    valid = sd > 0.0
    corr = np.zeros((n, n))
    if valid.sum() >= 2:
        sub = np.corrcoef(rets[:, valid].T)
        ii = np.flatnonzero(valid)
        corr[np.ix_(ii, ii)] = sub
    iu, ju = np.triu_indices(n, k=1)
    pair_ok = valid[iu] & valid[ju]
    vals = corr[iu, ju]
    edges: dict[tuple[int, int], float] = {}
    if pair_ok.any():
        k = int(np.ceil((1.0 - percentile) * iu.size))
        k = max(k, 1)
        usable = np.where(pair_ok, vals, -np.inf)
        cutoff = np.partition(usable, -k)[-k]
        keep = usable >= cutoff
        for i, j in zip(iu[keep], ju[keep]):
            edges[(int(i), int(j))] = 1.0
    return CoverageGraph(date=panel.dates[ti], n=n, edges=edges,
                         lookback_days=window)


def industry_graph(industries: IndustryMap, panel: PricePanel, t=0) -> CoverageGraph:
    """Union of one clique per industry code, weight 1."""
    ti = _resolve_t(panel, t)
    groups: dict[str, list] = {}
    for ticker, code in industries.items():
        groups.setdefault(code, []).append(panel.firm_index(ticker))
    edges = {}
    for members in groups.values():
        for i, j in itertools.combinations(sorted(members), 2):
            edges[(i, j)] = 1.0
    return CoverageGraph(date=panel.dates[ti], n=panel.n_firms, edges=edges,
                         lookback_days=0)


def delete_edges(g: CoverageGraph, fraction: float = DEFAULT_DELETE_FRACTION,
                 seed: int = 0) -> CoverageGraph:
    """Keep a uniformly random subset of exactly round((1-fraction)*|E|) edges."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    keys = sorted(g.edges)
    n_keep = int(round((1.0 - fraction) * len(keys)))
    rng = np.random.default_rng(seed)
    kept_idx = rng.choice(len(keys), size=n_keep, replace=False) if keys else []
    kept = {keys[int(k)]: g.edges[keys[int(k)]] for k in kept_idx}
    return replace(g, edges=kept)


def _largest_component_diameter(g: CoverageGraph) -> float:
    if not g.edges:
        return 0.0
    a = csr_matrix(g.adjacency())
    n_comp, labels = connected_components(a, directed=False)
    sizes = np.bincount(labels, minlength=n_comp)
    comp = int(np.argmax(sizes))
    nodes = np.flatnonzero(labels == comp)
    if nodes.size < 2:
        return 0.0
    dist = shortest_path(a[np.ix_(nodes, nodes)], method="D", directed=False,
                         unweighted=True)
    return float(dist[np.isfinite(dist)].max())


def _transitivity(g: CoverageGraph) -> float:
    if not g.edges:
        return 0.0
    a = g.adjacency()
    deg = a.sum(axis=0)
    triples = float((deg * (deg - 1.0)).sum() / 2.0)
    if triples == 0.0:
        return 0.0
    triangles = float(np.trace(a @ a @ a) / 6.0)
    return 3.0 * triangles / triples


def topology_stats(g: CoverageGraph, prev: CoverageGraph | None = None) -> TopologyStats:
    """Jaccard similarity vs the previous snapshot, diameter of the largest
    component in unweighted hops, and global transitivity."""
    if prev is None:
        jac = 1.0
    else:
        a, b = g.edge_set(), prev.edge_set()
        union = a | b
        jac = 1.0 if not union else len(a & b) / len(union)
    return TopologyStats(jaccard_vs_prev=jac,
                         diameter=_largest_component_diameter(g),
                         transitivity=_transitivity(g))


def build_graph(source: str, panel: PricePanel, records, industries, t,
                *, lookback: int = DEFAULT_LOOKBACK,
                corr_window: int = DEFAULT_CORR_WINDOW,
                corr_percentile: float = DEFAULT_CORR_PERCENTILE,
                del_fraction: float = DEFAULT_DELETE_FRACTION,
                del_seed: int = 0) -> CoverageGraph:
    """Build the graph variant named by ``source`` at date (index) ``t``."""
    if source == "analysts":
        return project_coverage(records, t, lookback, panel)
    if source == "correlation":
        return correlation_graph(panel, t, corr_window, corr_percentile)
    if source == "industry":
        if industries is None:
            raise ConfigError("industry graph requested but no industry map loaded")
        return industry_graph(industries, panel, t)
    if source == "del_edge":
        base = project_coverage(records, t, lookback, panel)
        return delete_edges(base, del_fraction, del_seed)
    raise ConfigError(f"unknown graph source {source!r}")

import numpy as np
import pytest
from hypothesis import given, strategies as st

from analystnet import graphs
from analystnet.errors import DegenerateSeriesWarning
from analystnet.graphs import (CoverageGraph, correlation_graph, delete_edges,
                               industry_graph, project_coverage,
                               topology_stats)
from analystnet.market_data import EstimateRecord

from conftest import make_panel


def rec(panel, day, analyst, ticker):
    return EstimateRecord(panel.dates[day], analyst, ticker)


def graph_of(edges, n=4):
    return CoverageGraph(date=np.datetime64("2020-06-01"), n=n,
                         edges={e: 1.0 for e in edges}, lookback_days=252)


class TestProjectCoverage:
    def test_two_shared_analysts_give_weight_two(self):
        panel = make_panel(n_days=10, n_firms=2, seed=0)  # T00=Google, T01=Apple
        records = [rec(panel, 1, "A", "T00"), rec(panel, 2, "A", "T01"),
                   rec(panel, 3, "B", "T00"), rec(panel, 4, "B", "T01")]
        g = project_coverage(records, panel.dates[5], 252, panel)
        assert g.edges == {(0, 1): 2.0}

    def test_single_firm_coverage_gives_no_edges(self):
        panel = make_panel(n_days=10, n_firms=3, seed=0)
        g = project_coverage([rec(panel, 1, "A", "T00")], panel.dates[5], 252, panel)
        assert g.edges == {}

    def test_chain_of_two_analysts(self):
        panel = make_panel(n_days=10, n_firms=3, seed=0)
        records = [rec(panel, 1, "A", "T00"), rec(panel, 1, "A", "T01"),
                   rec(panel, 2, "C", "T01"), rec(panel, 2, "C", "T02")]
        g = project_coverage(records, panel.dates[5], 252, panel)
        assert g.edges == {(0, 1): 1.0, (1, 2): 1.0}

    def test_lookback_window_is_half_open(self):
        panel = make_panel(n_days=10, n_firms=2, seed=0)
        # records at day 0; window (t-2, t] at t=4 covers days 3..4 only
        records = [rec(panel, 0, "A", "T00"), rec(panel, 0, "A", "T01")]
        g = project_coverage(records, panel.dates[4], 2, panel)
        assert g.edges == {}
        g = project_coverage(records, panel.dates[1], 2, panel)
        assert g.edges == {(0, 1): 1.0}

    def test_duplicate_estimates_count_analysts_once(self):
        panel = make_panel(n_days=10, n_firms=2, seed=0)
        records = [rec(panel, 1, "A", "T00"), rec(panel, 2, "A", "T00"),
                   rec(panel, 3, "A", "T01"), rec(panel, 4, "A", "T01")]
        g = project_coverage(records, panel.dates[6], 252, panel)
        assert g.edges == {(0, 1): 1.0}

    @given(seed=st.integers(0, 2 ** 31 - 1))
    def test_matches_bipartite_matrix_product(self, seed):
        rng = np.random.default_rng(seed)
        n_analysts = int(rng.integers(1, 21))
        n_firms = int(rng.integers(2, 31))
        panel = make_panel(n_days=6, n_firms=n_firms, seed=seed)
        coverage = rng.random((n_analysts, n_firms)) < 0.15
        records = [rec(panel, int(rng.integers(0, 4)), f"a{a}", panel.firms[f])
                   for a, f in zip(*np.nonzero(coverage))]
        g = project_coverage(records, panel.dates[5], 252, panel)
        product = coverage.astype(int).T @ coverage.astype(int)
        np.fill_diagonal(product, 0)
        np.testing.assert_array_equal(g.adjacency(weighted=True), product)


class TestCorrelationGraph:
    def test_top_decile_kept_exactly(self):
        panel = make_panel(n_days=300, n_firms=15, seed=3)  # 105 pairs
        g = correlation_graph(panel, 280, window=252, percentile=0.90)
        assert g.n_edges == int(np.ceil(0.10 * 105))

    def test_identical_series_always_kept(self):
        panel = make_panel(n_days=300, n_firms=6, seed=4)
        panel.prices[:, 1] = panel.prices[:, 0]
        g = correlation_graph(panel, 290)
        assert (0, 1) in g.edges

    def test_matches_independent_correlation_oracle(self):
        panel = make_panel(n_days=280, n_firms=5, seed=5)
        t, window = 270, 252
        g = correlation_graph(panel, t, window, 0.90)
        logp = np.log(panel.prices)
        rets = np.diff(logp[t - window: t + 1], axis=0)
        vals = {}
        for i in range(5):
            for j in range(i + 1, 5):
                vals[(i, j)] = np.corrcoef(rets[:, i], rets[:, j])[0, 1]
        k = int(np.ceil(0.10 * len(vals)))
        cutoff = sorted(vals.values(), reverse=True)[k - 1]
        expected = {p for p, v in vals.items() if v >= cutoff}
        assert g.edge_set() == frozenset(expected)

    def test_constant_firm_warned_and_excluded(self):
        panel = make_panel(n_days=300, n_firms=4, seed=6)
        panel.prices[:, 2] = 42.0
        with pytest.warns(DegenerateSeriesWarning):
            g = correlation_graph(panel, 290, percentile=0.5)
        assert not any(2 in e for e in g.edges)

    def test_edge_count_near_percentile_share(self):
        panel = make_panel(n_days=300, n_firms=20, seed=7)
        g = correlation_graph(panel, 290)
        n_pairs = 20 * 19 // 2
        assert g.n_edges >= int(np.ceil(0.10 * n_pairs))
        assert g.n_edges <= int(np.ceil(0.10 * n_pairs)) + 3  # tie tolerance


class TestIndustryGraph:
    def test_pair_within_one_code(self):
        panel = make_panel(n_days=5, n_firms=3, seed=0)
        g = industry_graph({"T00": "a", "T01": "a", "T02": "b"}, panel)
        assert g.edges == {(0, 1): 1.0}

    def test_single_code_gives_complete_graph(self):
        panel = make_panel(n_days=5, n_firms=4, seed=0)
        g = industry_graph({f: "x" for f in panel.firms}, panel)
        assert g.n_edges == 6

    def test_distinct_codes_give_empty_graph(self):
        panel = make_panel(n_days=5, n_firms=4, seed=0)
        g = industry_graph({f: f for f in panel.firms}, panel)
        assert g.n_edges == 0


class TestDeleteEdges:
    def test_sixty_percent_of_ten_leaves_four(self):
        g = graph_of([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3),
                      (0, 4), (1, 4), (2, 4), (3, 4)], n=5)
        assert delete_edges(g, 0.6, seed=1).n_edges == 4

    def test_zero_fraction_is_identity(self):
        g = graph_of([(0, 1), (2, 3)])
        assert delete_edges(g, 0.0, seed=1).edges == g.edges

    def test_same_seed_same_survivors(self):
        g = graph_of([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
        a = delete_edges(g, 0.5, seed=9)
        b = delete_edges(g, 0.5, seed=9)
        assert a.edges == b.edges

    @given(seed=st.integers(0, 2 ** 31 - 1),
           fraction=st.floats(0.0, 1.0))
    def test_survivors_are_subset_with_exact_count(self, seed, fraction):
        g = graph_of([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
        out = delete_edges(g, fraction, seed)
        assert set(out.edges) <= set(g.edges)
        assert out.n_edges == round((1.0 - fraction) * 6)
        for e, w in out.edges.items():
            assert w == g.edges[e]


class TestTopologyStats:
    def test_identical_graphs_jaccard_one(self):
        g = graph_of([(0, 1), (1, 2)])
        assert topology_stats(g, g).jaccard_vs_prev == 1.0

    def test_triangle(self):
        g = graph_of([(0, 1), (0, 2), (1, 2)], n=3)
        stats = topology_stats(g)
        assert stats.transitivity == pytest.approx(1.0)
        assert stats.diameter == 1.0
        assert stats.jaccard_vs_prev == 1.0  # no previous snapshot

    def test_path_and_jaccard_third(self):
        path = graph_of([(0, 1), (1, 2)], n=4)
        stats = topology_stats(path)
        assert stats.transitivity == 0.0
        assert stats.diameter == 2.0
        other = graph_of([(0, 1), (2, 3)], n=4)
        assert topology_stats(other, path).jaccard_vs_prev == pytest.approx(1 / 3)

    def test_edgeless_graph(self):
        g = graph_of([], n=3)
        stats = topology_stats(g)
        assert stats.diameter == 0.0
        assert stats.transitivity == 0.0

    def test_diameter_uses_largest_component(self):
        # component {0,1,2,3} is a path of length 3; {4,5} is an edge
        g = graph_of([(0, 1), (1, 2), (2, 3), (4, 5)], n=6)
        assert topology_stats(g).diameter == 3.0


class TestPermutationEquivariance:
    def test_projection_equivariant(self):
        panel = make_panel(n_days=10, n_firms=4, seed=1)
        records = [rec(panel, 1, "A", "T00"), rec(panel, 1, "A", "T03"),
                   rec(panel, 2, "B", "T01"), rec(panel, 2, "B", "T03")]
        g = project_coverage(records, panel.dates[5], 252, panel)
        perm = [2, 0, 3, 1]  # new index of old firm i is perm.index(i)
        from analystnet.market_data import PricePanel
        permuted_panel = PricePanel(dates=panel.dates,
                                    firms=tuple(panel.firms[k] for k in perm),
                                    prices=panel.prices[:, perm])
        g2 = project_coverage(records, panel.dates[5], 252, permuted_panel)
        inverse = {old: new for new, old in enumerate(perm)}
        remapped = {tuple(sorted((inverse[i], inverse[j]))): w
                    for (i, j), w in g.edges.items()}
        assert g2.edges == remapped

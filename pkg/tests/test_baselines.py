import numpy as np
import pytest

from analystnet import baselines, gnn
from analystnet.features import FeatureMatrix
from analystnet.graphs import CoverageGraph

from test_gnn import DATE, make_sample, separable_samples


def features_of(values):
    return FeatureMatrix(date=DATE, values=np.asarray(values, dtype=float))


def weighted_graph(edges, n):
    return CoverageGraph(date=DATE, n=n, edges=edges, lookback_days=252)


class TestLongOnly:
    def test_all_equal_scores(self):
        np.testing.assert_array_equal(baselines.long_only_signal(3),
                                      np.ones(3))


class TestMacdAveraging:
    def test_mean_of_trend_columns(self):
        values = np.zeros((1, 8))
        values[0, 5:8] = [1.0, 2.0, 3.0]
        assert baselines.macd_signal_avg(features_of(values))[0] == 2.0

    def test_zero_trend_gives_zero(self):
        assert baselines.macd_signal_avg(features_of(np.zeros((4, 8))))[0] == 0.0

    def test_matches_column_mean_oracle(self):
        rng = np.random.default_rng(0)
        values = rng.standard_normal((7, 8))
        got = baselines.macd_signal_avg(features_of(values))
        np.testing.assert_allclose(got, values[:, 5:8].mean(axis=1), atol=1e-14)


class TestAnalystMatrix:
    def test_single_neighbor_returns_its_momentum(self):
        values = np.zeros((2, 8))
        values[1, 5:8] = 0.9
        g = weighted_graph({(0, 1): 7.0}, 2)
        scores = baselines.analyst_matrix_signal(features_of(values), g)
        assert scores[0] == pytest.approx(0.9)

    def test_isolated_firm_scores_zero(self):
        values = np.ones((3, 8))
        g = weighted_graph({(0, 1): 1.0}, 3)
        scores = baselines.analyst_matrix_signal(features_of(values), g)
        assert scores[2] == 0.0

    def test_weighted_two_neighbor_mean(self):
        values = np.zeros((3, 8))
        values[1, 5:8] = 0.3   # momentum 0.3, weight 2
        values[2, 5:8] = 0.0   # momentum 0.0, weight 1
        g = weighted_graph({(0, 1): 2.0, (0, 2): 1.0}, 3)
        scores = baselines.analyst_matrix_signal(features_of(values), g)
        assert scores[0] == pytest.approx(0.2)

    def test_uniform_weights_equal_unweighted_mean(self):
        rng = np.random.default_rng(1)
        values = rng.standard_normal((4, 8))
        g = weighted_graph({(0, 1): 3.0, (0, 2): 3.0, (0, 3): 3.0}, 4)
        mom = values[:, 5:8].mean(axis=1)
        scores = baselines.analyst_matrix_signal(features_of(values), g)
        assert scores[0] == pytest.approx(mom[1:].mean())

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        values = rng.standard_normal((4, 8))
        g = weighted_graph({(0, 1): 2.0, (1, 3): 1.0}, 4)
        base = baselines.analyst_matrix_signal(features_of(values), g)
        perm = np.array([2, 0, 3, 1])  # new position of old firm i
        remapped = {tuple(sorted((perm[i], perm[j]))): w
                    for (i, j), w in g.edges.items()}
        permuted = baselines.analyst_matrix_signal(
            features_of(values[np.argsort(perm)]),
            weighted_graph(remapped, 4))
        np.testing.assert_allclose(permuted[perm], base, atol=1e-12)


class TestNnSignal:
    def test_zero_weights_give_half(self):
        rng = np.random.default_rng(3)
        config = gnn.ModelConfig(kind="nn", hidden=4, seed=1)
        params = gnn.init_params(config, 8, rng)
        for p in params.parameters():
            p.data[:] = 0.0
        probs = gnn.model_forward(rng.standard_normal((5, 8)), None, params)
        np.testing.assert_allclose(probs, 0.5)

    def test_matches_identity_gcn_under_shared_weights(self):
        # on an edgeless graph the degree-normalized propagation is the
        # identity, so a 1-layer gcn with zeroed-bias nn weights coincides
        # with the feed-forward net
        rng = np.random.default_rng(4)
        x = rng.standard_normal((6, 8))
        gcn_params = gnn.init_params(
            gnn.ModelConfig(kind="gcn", layers=1, hidden=5, seed=2), 8, rng)
        nn_params = gnn.init_params(
            gnn.ModelConfig(kind="nn", hidden=5, seed=3), 8, rng)
        nn_params.mlp[0].data = gcn_params.gcn_weights[0].data.copy()
        nn_params.mlp[1].data[:] = 0.0
        nn_params.mlp[2].data = gcn_params.head.data.copy()
        nn_params.mlp[3].data[:] = 0.0
        edgeless = weighted_graph({}, 6)
        np.testing.assert_allclose(
            gnn.model_forward(x, None, nn_params),
            gnn.model_forward(x, edgeless, gcn_params), atol=1e-12)

    def test_trained_signal_and_equivariance(self):
        rng = np.random.default_rng(5)
        samples = separable_samples(rng, n_nodes=8)
        config = gnn.ModelConfig(kind="nn", hidden=8, lr=1e-2, seed=4,
                                 max_epochs=60, patience=60)
        probs, result = baselines.nn_signal(samples[0].features, samples[:4],
                                            samples[4:], config)
        assert probs.shape == (8,)
        perm = rng.permutation(8)
        permuted = gnn.model_forward(samples[0].features.values[perm], None,
                                     result.params)
        np.testing.assert_allclose(permuted, probs[perm], atol=1e-12)

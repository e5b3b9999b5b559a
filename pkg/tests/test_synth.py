import numpy as np
import pytest

from analystnet import baselines, features, graphs, labels, synth
from analystnet.errors import ConfigError
from analystnet.market_data import load_price_panel, write_price_panel


def neighbor_momentum_tstat(config):
    """t-statistic of lagged neighbor momentum on forward monthly returns,
    controlling for the firm's own momentum (pooled OLS)."""
    panel, records, _ = synth.generate(config)
    logp = np.log(panel.prices)
    xs, zs, ys = [], [], []
    for p in labels.eligible_periods(panel):
        t = labels.period_start(p)
        g = graphs.project_coverage(records, t, 252, panel)
        a = g.adjacency()
        deg = a.sum(1)
        trail = logp[t] - logp[t - 21]
        nbr = np.where(deg > 0, a @ trail / np.maximum(deg, 1), 0.0)
        fwd = logp[t + 21] - logp[t]
        keep = deg > 0
        xs.append(nbr[keep])
        zs.append(trail[keep])
        ys.append(fwd[keep])
    x, z, y = map(np.concatenate, (xs, zs, ys))
    design = np.column_stack([np.ones_like(x), x, z])
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    sigma2 = resid @ resid / (len(y) - 3)
    cov = sigma2 * np.linalg.inv(design.T @ design)
    return float(beta[1] / np.sqrt(cov[1, 1]))


@pytest.fixture(scope="module")
def tstat_table():
    table = {}
    for phi in (0.0, 0.25, 0.5):
        table[phi] = [neighbor_momentum_tstat(
            synth.SynthConfig(n_days=800, spillover_phi=phi, seed=s))
            for s in (1, 2, 3, 4, 5)]
    return table


class TestGenerate:
    def test_same_seed_bit_identical(self):
        config = synth.SynthConfig(n_firms=20, n_analysts=8, n_days=610, seed=7)
        a_panel, a_records, a_ind = synth.generate(config)
        b_panel, b_records, b_ind = synth.generate(config)
        np.testing.assert_array_equal(a_panel.prices, b_panel.prices)
        assert a_records == b_records
        assert a_ind == b_ind

    def test_prices_positive_and_panel_valid(self, small_market):
        panel, _, _ = small_market
        assert (panel.prices > 0).all()
        assert np.isfinite(panel.prices).all()

    def test_round_trips_through_the_loader(self, small_market, tmp_path):
        panel, _, _ = small_market
        write_price_panel(panel, tmp_path / "prices.csv")
        again, summary = load_price_panel(tmp_path / "prices.csv")
        assert summary.cells_filled == 0 and summary.firms_dropped == ()
        np.testing.assert_array_equal(again.prices, panel.prices)
        np.testing.assert_array_equal(again.dates, panel.dates)
        assert again.firms == panel.firms

    def test_industry_map_total(self, small_market):
        panel, _, industries = small_market
        assert set(industries) == set(panel.firms)

    def test_config_validation(self):
        with pytest.raises(ConfigError, match="n_days"):
            synth.SynthConfig(n_days=500)
        with pytest.raises(ConfigError, match="spillover_phi"):
            synth.SynthConfig(spillover_phi=1.0)
        with pytest.raises(ConfigError, match="unknown"):
            synth.SynthConfig.from_dict({"n_firms": 10, "bogus": 1})


class TestPlantedSignal:
    def test_spillover_recovers_significant_coefficient(self, tstat_table):
        assert tstat_table[0.5][0] > 3.0  # seed 1 fixture
        assert np.median(tstat_table[0.5]) > 3.0

    def test_tstat_monotone_in_spillover(self, tstat_table):
        medians = [np.median(tstat_table[phi]) for phi in (0.0, 0.25, 0.5)]
        assert medians[0] <= medians[1] <= medians[2]

    def test_no_spillover_kills_neighbor_signal(self):
        sigs, fwds = [], []
        panel, records, _ = synth.generate(
            synth.SynthConfig(spillover_phi=0.0, seed=1))
        logp = np.log(panel.prices)
        for p in labels.eligible_periods(panel):
            t = labels.period_start(p) + 20
            g = graphs.project_coverage(records, t, 252, panel)
            fm = features.feature_matrix(panel, t)
            sigs.append(baselines.analyst_matrix_signal(fm, g))
            fwds.append(logp[t + 21] - logp[t])
        sig, fwd = np.concatenate(sigs), np.concatenate(fwds)
        assert sig.size >= 200
        assert abs(np.corrcoef(sig, fwd)[0, 1]) < 0.05

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("suite", deadline=None, max_examples=40)
settings.load_profile("suite")

from analystnet.market_data import PricePanel


def make_panel(n_days=320, n_firms=5, seed=0, start="2010-01-04",
               daily_vol=0.02):
    """Geometric random-walk panel for feature and label tests."""
    rng = np.random.default_rng(seed)
    rets = rng.normal(0.0, daily_vol, size=(n_days, n_firms))
    rets[0] = 0.0
    prices = 100.0 * np.exp(np.cumsum(rets, axis=0))
    dates = np.array(np.busday_offset(start, np.arange(n_days), roll="forward"),
                     dtype="datetime64[D]")
    firms = tuple(f"T{i:02d}" for i in range(n_firms))
    return PricePanel(dates=dates, firms=firms, prices=prices)


@pytest.fixture(scope="session")
def walk_panel():
    return make_panel(n_days=330, n_firms=5, seed=42)


@pytest.fixture(scope="session")
def small_market():
    """Small synthetic market shared by integration-style tests."""
    from analystnet import synth
    config = synth.SynthConfig(n_firms=24, n_analysts=10, n_days=651, seed=5)
    panel, records, industries = synth.generate(config)
    return panel, records, industries


@pytest.fixture(scope="session", autouse=True)
def attention_row_sum_watch():
    """Verify attention rows stay normalized on every in-process forward."""
    from analystnet import gnn

    box = {"max_row_dev": 0.0}

    def observer(alpha):
        dev = float(np.abs(alpha.sum(axis=1) - 1.0).max())
        if dev > box["max_row_dev"]:
            box["max_row_dev"] = dev

    gnn.register_attention_observer(observer)
    yield box
    gnn._attention_observers.remove(observer)
    assert box["max_row_dev"] < 1e-9, (
        f"attention rows drifted from 1 by {box['max_row_dev']:.2e}")

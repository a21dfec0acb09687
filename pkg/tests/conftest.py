import pytest

from covspec.config import SEED_ENV, load

SMALL = [
    'visual.num_tokens=96',
    'visual.num_planted=8',
    'selection.B_vis=16',
    'model.vocab_size=32',
    'drafting.max_new_tokens=48',
]


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: statistical checks over many seeds or draws")


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


@pytest.fixture
def small_config():
    """
    a factory for configs small enough to run an episode in well under a second
    """
    def make(*overrides, seed: int = 0):
        return load({'seed': seed}, SMALL + list(overrides))
    return make

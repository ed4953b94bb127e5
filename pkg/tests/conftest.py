import numpy as np
import pytest

from spinbayes.config import PipelineConfig
from spinbayes.network import Layer, BinaryNetwork, Method, Sharing, init_network
from spinbayes import pipeline

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net(rng):
    return init_network([16, 8, 8, 3], rng)


def identity_layer(weights, has_dropout=False, mean=None, var=None):
    w = np.asarray(weights, dtype=float)
    o = w.shape[1]
    return Layer(w, np.ones(o), np.zeros(o),
                 np.zeros(o) if mean is None else np.asarray(mean, float),
                 np.ones(o) if var is None else np.asarray(var, float), has_dropout)


def flip_net(p=0.5):
    """1 -> 1 -> 2 net whose single hidden bit flips the logit sign when dropped.

    Input +1 gives y=1 (kept) or y=0 (dropped); bn mean 0.5 maps those to
    +1 and -1; the output layer emits logits (a, -a).
    """
    hidden = identity_layer([[1.0]], has_dropout=True, mean=[0.5], var=[1.0])
    out = identity_layer([[1.0, -1.0]])
    return BinaryNetwork([hidden, out], Method.SPINDROP, p, 1, 0.5, Sharing.PER_COLUMN)


@pytest.fixture(scope="session")
def reference_model():
    """Default-config dataset and trained model, built once per session."""
    cfg = PipelineConfig()
    data = pipeline.build_dataset(cfg)
    return {"cfg": cfg, "data": data, "net": pipeline.train_model(cfg, data)}


@pytest.fixture(scope="session")
def reference(reference_model):
    """The reference model plus its default test kit."""
    ref = dict(reference_model)
    ref["tvs"], ref["profile"] = pipeline.build_kit(ref["cfg"], ref["net"], ref["data"])
    return ref

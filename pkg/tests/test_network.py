import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinbayes.network import (
    BN_EPS,
    BinaryNetwork,
    DropoutBank,
    GenState,
    MaskSet,
    Method,
    Sharing,
    crossbar_mac,
    forward,
    init_network,
    layer_forward,
    sample_generator_bits,
    sample_masks,
    softmax,
)
from spinbayes.rng import RngStream

from conftest import identity_layer


def naive_mac(w, x):
    rows, cols = w.shape
    out = np.zeros(cols)
    for j in range(cols):
        s = 0.0
        for i in range(rows):
            s += x[i] * w[i, j]
        out[j] = s
    return out


def reference_forward(net, x, masks=None):
    """Straightforward per-neuron re-implementation of the layer pipeline."""
    a = list(x)
    for k, layer in enumerate(net.layers):
        w = layer.weights
        z = []
        for j in range(w.shape[1]):
            y = sum(a[i] * w[i, j] for i in range(w.shape[0]))
            if masks is not None and masks[k] is not None and masks[k][j]:
                y = y * net.scale_gamma if net.method is Method.SCALEDROP else 0.0
            z.append(layer.bn_gamma[j] * (y - layer.bn_mean[j])
                     / np.sqrt(layer.bn_var[j] + BN_EPS) + layer.bn_beta[j])
        a = z if k == len(net.layers) - 1 else [1.0 if v >= 0 else -1.0 for v in z]
    return np.array(a)


def test_mac_examples():
    w = np.ones((2, 2))
    x = np.array([1.0, 1.0])
    np.testing.assert_array_equal(crossbar_mac(w, x), [2, 2])
    np.testing.assert_array_equal(crossbar_mac(w, x, np.array([True, False])), [0, 2])
    np.testing.assert_array_equal(
        crossbar_mac(w, x, np.array([True, False]), method=Method.SCALEDROP, scale_gamma=0.5),
        [1, 2])


def test_mac_matches_naive_oracle(rng):
    for _ in range(50):
        w = np.where(rng.random((8, 8)) < 0.5, -1.0, 1.0)
        x = np.where(rng.random(8) < 0.5, -1.0, 1.0)
        np.testing.assert_array_equal(crossbar_mac(w, x), naive_mac(w, x))


def test_mac_dimension_mismatch():
    with pytest.raises(ValueError):
        crossbar_mac(np.ones((3, 2)), np.ones(4))


@settings(max_examples=60, deadline=None)
@given(rows=st.integers(1, 40), cols=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_mac_integrality_and_parity(rows, cols, seed):
    g = np.random.default_rng(seed)
    w = np.where(g.random((rows, cols)) < 0.5, -1.0, 1.0)
    x = np.where(g.random(rows) < 0.5, -1.0, 1.0)
    y = crossbar_mac(w, x)
    assert np.all(y == np.round(y))
    assert np.all(np.abs(y) <= rows)
    assert np.all((y.astype(int) - rows) % 2 == 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_scaledrop_never_zeroes(seed):
    g = np.random.default_rng(seed)
    w = np.where(g.random((7, 6)) < 0.5, -1.0, 1.0)
    x = np.where(g.random(7) < 0.5, -1.0, 1.0)
    mask = g.random(6) < 0.5
    y = crossbar_mac(w, x, mask, method=Method.SCALEDROP, scale_gamma=0.5)
    np.testing.assert_array_equal(y == 0, x @ w == 0)


def test_layer_forward_examples():
    var = np.full(2, 1 - BN_EPS)
    layer = identity_layer([[1, -1], [1, -1]], var=var)
    ones = np.array([1.0, 1.0])
    np.testing.assert_array_equal(layer_forward(layer, ones), [1, -1])
    # y == 0 gives z == 0 exactly, which maps to +1
    np.testing.assert_array_equal(layer_forward(layer, np.array([1.0, -1.0])), [1, 1])
    np.testing.assert_allclose(layer_forward(layer, ones, is_output=True), [2, -2])

    def stuck_first(a):
        a = a.copy()
        a[..., 0] = 1.0
        return a

    flipped = identity_layer([[-1, 1], [-1, 1]], var=var)
    np.testing.assert_array_equal(layer_forward(flipped, ones), [-1, 1])
    np.testing.assert_array_equal(layer_forward(flipped, ones, buf_fault=stuck_first), [1, 1])


def test_single_layer_forward_is_output_layer(rng):
    net = init_network([5, 3], rng)
    x = np.where(rng.random(5) < 0.5, -1.0, 1.0)
    np.testing.assert_array_equal(forward(net, x), layer_forward(net.layers[0], x, is_output=True))


@pytest.mark.parametrize("method", list(Method))
def test_forward_matches_reference(rng, method):
    net = init_network([10, 8, 8, 3], rng, method=method)
    # non-trivial bn parameters
    for layer in net.layers:
        o = layer.out_dim
        layer.bn_gamma[:] = rng.uniform(0.5, 2, o)
        layer.bn_beta[:] = rng.normal(0, 0.5, o)
        layer.bn_mean[:] = rng.normal(0, 1, o)
        layer.bn_var[:] = rng.uniform(0.5, 3, o)
    bank = DropoutBank.healthy(net)
    for k in range(20):
        x = np.where(rng.random(10) < 0.5, -1.0, 1.0)
        masks = sample_masks(bank, net, RngStream(k))
        np.testing.assert_array_equal(forward(net, x, masks), reference_forward(net, x, masks))


def test_forward_batch_equals_rows(small_net, rng):
    X = np.where(rng.random((6, 16)) < 0.5, -1.0, 1.0)
    batch = forward(small_net, X)
    for i in range(6):
        np.testing.assert_array_equal(batch[i], forward(small_net, X[i]))


def test_softmax():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    p = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)
    z = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(softmax(z + 17.0), softmax(z), atol=1e-15)
    assert abs(softmax(z).sum() - 1) < 1e-12


def test_generator_counts(rng):
    dims = [8, 16, 8, 2]
    assert DropoutBank.healthy(init_network(dims, rng)).n_generators == 24
    assert DropoutBank.healthy(init_network(dims, rng, method=Method.SPATIAL_SPINDROP)).n_generators == 6
    assert DropoutBank.healthy(init_network(dims, rng, sharing=Sharing.LAYER_SHARED)).n_generators == 2
    assert DropoutBank.healthy(init_network(dims, rng, sharing=Sharing.GLOBAL_SHARED)).n_generators == 1


def test_output_layer_never_masked(small_net):
    masks = sample_masks(DropoutBank.healthy(small_net), small_net, RngStream(0), n=5)
    assert masks[len(small_net.layers) - 1] is None


def test_per_column_drop_frequency(rng):
    net = init_network([8, 64, 4], rng)
    masks = sample_masks(DropoutBank.healthy(net), net, RngStream(1), n=100_000)
    freq = masks[0].mean(axis=0)
    assert np.all(np.abs(freq - 0.25) <= 0.013)


@pytest.mark.parametrize("sharing", [Sharing.LAYER_SHARED, Sharing.GLOBAL_SHARED])
def test_mask_replication(rng, sharing):
    net = init_network([8, 12, 12, 4], rng, sharing=sharing)
    masks = sample_masks(DropoutBank.healthy(net), net, RngStream(2), n=200)
    for m in masks.masks[:2]:
        assert np.all(m == m[:, :1])
    if sharing is Sharing.GLOBAL_SHARED:
        np.testing.assert_array_equal(masks[0][:, 0], masks[1][:, 0])
    else:
        assert not np.array_equal(masks[0][:, 0], masks[1][:, 0])


def test_spatial_groups_contiguous(rng):
    net = init_network([8, 16, 4], rng, method=Method.SPATIAL_SPINDROP)
    m = sample_masks(DropoutBank.healthy(net), net, RngStream(3), n=50)[0]
    groups = m.reshape(50, 4, 4)
    assert np.all(groups == groups[:, :, :1])


def test_stuck_states(rng):
    net = init_network([8, 12, 12, 4], rng, sharing=Sharing.LAYER_SHARED)
    bank = DropoutBank.healthy(net)
    passing = sample_masks(bank.all_stuck(GenState.STUCK_PASS), net, RngStream(0), n=30)
    assert not any(m.any() for m in passing.masks if m is not None)
    state = bank.state.copy()
    state[0] = GenState.STUCK_DROP
    dropped = sample_masks(bank.replace(state=state), net, RngStream(0), n=30)
    assert dropped[0].all()


def test_bit_flip_generator_rate(rng):
    net = init_network([8, 4, 2], rng)
    bank = DropoutBank.healthy(net)
    state = np.full(4, GenState.BIT_FLIP, dtype=np.int8)
    bank = bank.replace(state=state, flip_rate=np.full(4, 0.5))
    bits = sample_generator_bits(bank, RngStream(0), 100_000)
    # p' = p(1-r) + (1-p)r = 0.5 for r = 0.5
    assert np.all(np.abs(bits.mean(axis=0) - 0.5) < 3 * np.sqrt(0.25 / 1e5))


@pytest.mark.parametrize("state", [GenState.STUCK_PASS, GenState.STUCK_DROP])
def test_degenerate_dropout_deterministic(small_net, rng, state):
    bank = DropoutBank.healthy(small_net).all_stuck(state)
    x = np.where(rng.random(16) < 0.5, -1.0, 1.0)
    outs = [forward(small_net, x, sample_masks(bank, small_net, RngStream(k))) for k in range(10)]
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])


def test_network_validation(rng):
    with pytest.raises(ValueError):
        init_network([8, 6, 2], rng, method=Method.SPATIAL_SPINDROP)  # 4 does not divide 6
    with pytest.raises(ValueError):
        init_network([8, 4, 2], rng, p=1.0)
    net = init_network([8, 4, 2], rng)
    with pytest.raises(ValueError):
        forward(net, np.ones(7))
    bad = identity_layer(np.ones((2, 2)), has_dropout=True)
    with pytest.raises(ValueError):
        BinaryNetwork([bad], Method.SPINDROP, 0.25)


def test_layer_invariants():
    with pytest.raises(ValueError):
        identity_layer([[0.5, 1.0]])
    with pytest.raises(ValueError):
        identity_layer([[1.0]], var=[0.0])


def test_serialization_round_trip(tmp_path, rng):
    net = init_network([8, 4, 4, 3], rng, method=Method.SCALEDROP, sharing=Sharing.LAYER_SHARED)
    net.save(tmp_path / "m.json")
    back = BinaryNetwork.load(tmp_path / "m.json")
    assert back.to_dict() == net.to_dict()
    x = np.where(rng.random((5, 8)) < 0.5, -1.0, 1.0)
    np.testing.assert_array_equal(forward(back, x), forward(net, x))
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["format"] == "spinbayes.network"
    doc["format"] = "other"
    with pytest.raises(ValueError):
        BinaryNetwork.from_dict(doc)


def test_maskset_none(small_net):
    assert all(m is None for m in MaskSet.none(small_net).masks)

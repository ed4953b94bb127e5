import math

import numpy as np
import pytest

from spinbayes.errors import CalibrationError, SpecificationError
from spinbayes.faults import (
    STUCK_AT_0,
    STUCK_AT_1,
    BufferPlan,
    FaultContext,
    FaultSpec,
    Kind,
    Location,
    MacVariation,
    apply_buffer_faults,
    calibrate_layer_std,
    cell_count,
    inject,
    perturb_mac,
)
from spinbayes.inference import run_passes
from spinbayes.network import (
    BinaryNetwork,
    DropoutBank,
    GenState,
    Method,
    Sharing,
    forward,
    init_network,
    sample_masks,
)
from spinbayes.rng import RngStream

from conftest import identity_layer


def bits(rng, shape):
    return np.where(rng.random(shape) < 0.5, -1.0, 1.0)


def test_logic_mapping():
    assert STUCK_AT_0 == -1.0 and STUCK_AT_1 == 1.0


def test_illegal_pairs_rejected():
    with pytest.raises(SpecificationError):
        FaultSpec(Location.WEIGHT_CELLS, Kind.ADDITIVE_GAUSSIAN, sigma=0.1)
    with pytest.raises(SpecificationError):
        FaultSpec(Location.BUFFER_MEMORY, Kind.DROP_PROB_VARIATION, sigma=0.1)
    with pytest.raises(SpecificationError):
        FaultSpec(Location.MAC_CONDUCTANCE, Kind.STUCK_AT_0, rate=0.1)
    with pytest.raises(SpecificationError):
        FaultSpec(Location.WEIGHT_CELLS, Kind.BIT_FLIP, rate=1.5)
    with pytest.raises(SpecificationError):
        FaultSpec.from_dict({"location": "weight_cells", "kind": "bit_flip", "seed": 3})


def test_spec_round_trip():
    for spec in (FaultSpec(Location.WEIGHT_CELLS, Kind.STUCK_AT_1, rate=0.05),
                 FaultSpec(Location.MAC_CONDUCTANCE, Kind.MULTIPLICATIVE_GAUSSIAN, sigma=0.2)):
        assert FaultSpec.from_dict(spec.to_dict()) == spec
    g = FaultSpec(Location.DROPOUT_MODULE, Kind.DROP_PROB_VARIATION).with_value(0.1)
    assert g.sigma == 0.1 and g.rate == 0.0


def test_cell_count_ceiling():
    assert cell_count(0.0, 100) == 0
    assert cell_count(0.05, 2048) == 103
    assert cell_count(0.1, 100) == 10  # float fuzz must not round 10.000000000000002 up
    assert cell_count(1e-6, 10) == 1
    assert cell_count(1.0, 7) == 7


def test_rate_zero_is_clean(small_net, rng):
    bank = DropoutBank.healthy(small_net)
    x = bits(rng, (4, 16))
    for loc, kind in [(Location.WEIGHT_CELLS, Kind.BIT_FLIP), (Location.BUFFER_MEMORY, Kind.STUCK_AT_0),
                      (Location.BUFFER_MEMORY, Kind.BIT_FLIP), (Location.DROPOUT_MODULE, Kind.STUCK_AT_1)]:
        ctx = inject(small_net, bank, FaultSpec(loc, kind, rate=0.0), RngStream(0))
        assert ctx.is_clean
        np.testing.assert_array_equal(forward(small_net, x, ctx=ctx), forward(small_net, x))


def test_clean_context_identity(small_net, rng):
    x = bits(rng, (8, 16))
    masks = sample_masks(DropoutBank.healthy(small_net), small_net, RngStream(1), n=8)
    np.testing.assert_array_equal(forward(small_net, x, masks, FaultContext.clean()),
                                  forward(small_net, x, masks))


def test_weight_bit_flip_all(small_net):
    ctx = inject(small_net, DropoutBank.healthy(small_net),
                 FaultSpec(Location.WEIGHT_CELLS, Kind.BIT_FLIP, rate=1.0), RngStream(0))
    for w, layer in zip(ctx.weights(small_net), small_net.layers):
        np.testing.assert_array_equal(w, -layer.weights)


def test_weight_stuck_count(rng):
    net = init_network([32, 64], rng)
    ctx = inject(net, DropoutBank.healthy(net),
                 FaultSpec(Location.WEIGHT_CELLS, Kind.STUCK_AT_1, rate=0.05), RngStream(2))
    idx, vals = ctx.weight_overrides[0]
    assert len(idx) == 103 == len(np.unique(idx))
    assert np.all(vals == 1.0)
    w = ctx.weights(net)[0]
    assert np.all(w.flat[idx] == 1.0)
    untouched = np.setdiff1d(np.arange(w.size), idx)
    np.testing.assert_array_equal(w.flat[untouched], net.layers[0].weights.flat[untouched])


def test_weight_faults_persistent(small_net, rng):
    bank = DropoutBank.healthy(small_net)
    ctx = inject(small_net, bank, FaultSpec(Location.WEIGHT_CELLS, Kind.BIT_FLIP, rate=0.2), RngStream(3))
    x = bits(rng, 16)
    a = forward(small_net, x, ctx=ctx, source=RngStream(0))
    b = forward(small_net, x, ctx=ctx, source=RngStream(99))
    np.testing.assert_array_equal(a, b)


def test_buffer_stuck_positions(small_net):
    bank = DropoutBank.healthy(small_net)
    ctx = inject(small_net, bank, FaultSpec(Location.BUFFER_MEMORY, Kind.STUCK_AT_0, rate=0.25),
                 RngStream(4))
    total = sum(len(p.stuck_idx) for p in ctx.buffer_plans if p is not None)
    assert total == math.ceil(0.25 * 16)
    assert all(np.all(p.stuck_val == -1.0) for p in ctx.buffer_plans if p is not None)
    assert ctx.buffer_plans[-1] is None


def test_buffer_flips_transient(small_net, rng):
    bank = DropoutBank.healthy(small_net)
    ctx = inject(small_net, bank, FaultSpec(Location.BUFFER_MEMORY, Kind.BIT_FLIP, rate=0.3),
                 RngStream(5))
    flips = ctx.draw_noise(small_net, np.random.default_rng(0), 50)[0]["flip"]
    assert len({row.tobytes() for row in flips}) > 1


def test_apply_buffer_faults():
    a = np.array([-1.0, 1.0, 1.0, -1.0])
    assert apply_buffer_faults(a, BufferPlan.empty()) is a
    plan = BufferPlan(np.array([0]), np.array([1.0]), flip_rate=1.0)
    np.testing.assert_array_equal(apply_buffer_faults(a, plan, RngStream(0)), [1.0, -1.0, -1.0, 1.0])


def test_buffer_flip_rate():
    plan = BufferPlan(np.zeros(0, dtype=np.intp), np.zeros(0), 0.1)
    a = np.ones((10_000, 64))
    out = apply_buffer_faults(a, plan, RngStream(6))
    mean_flips = (out != a).sum(axis=1).mean()
    assert 6.0 <= mean_flips <= 6.8


def test_perturb_mac_moments():
    y = np.full(100_000, 10.0)
    out = perturb_mac(y, MacVariation(sigma_m=0.1), 0.0, RngStream(7))
    assert 0.99 <= out.std() <= 1.01
    out = perturb_mac(np.zeros(100_000), MacVariation(sigma_a=0.2), 5.0, RngStream(8))
    assert 0.99 <= out.std() <= 1.01
    assert perturb_mac(y, MacVariation(), 0.0) is y
    with pytest.raises(CalibrationError):
        perturb_mac(y, MacVariation(sigma_a=0.1), 0.0, RngStream(0))


def test_additive_requires_calibration(small_net):
    bank = DropoutBank.healthy(small_net)
    with pytest.raises(CalibrationError):
        inject(small_net, bank, FaultSpec(Location.MAC_CONDUCTANCE, Kind.ADDITIVE_GAUSSIAN, sigma=0.1),
               RngStream(0))


def test_transient_noise_keyed_per_injection(small_net, rng):
    bank = DropoutBank.healthy(small_net)
    spec = FaultSpec(Location.MAC_CONDUCTANCE, Kind.MULTIPLICATIVE_GAUSSIAN, sigma=0.5)
    a = inject(small_net, bank, spec, RngStream(1))
    b = inject(small_net, bank, spec, RngStream(2))
    X = bits(rng, (3, 16))
    src = [RngStream(9).derive(i) for i in range(3)]
    pa = run_passes(small_net, X, 5, bank, a, src)
    pb = run_passes(small_net, X, 5, bank, b, src)
    assert not np.array_equal(pa, pb)
    np.testing.assert_array_equal(pa, run_passes(small_net, X, 5, bank, a, src))


def test_dropout_module_faults(rng):
    net = init_network([8, 16, 16, 4], rng)
    bank = DropoutBank.healthy(net)
    ctx = inject(net, bank, FaultSpec(Location.DROPOUT_MODULE, Kind.STUCK_AT_0, rate=0.25), RngStream(0))
    assert (ctx.dropout_bank.state == GenState.STUCK_PASS).sum() == 8
    assert np.all(bank.state == GenState.HEALTHY)  # shared bank untouched
    ctx = inject(net, bank, FaultSpec(Location.DROPOUT_MODULE, Kind.STUCK_AT_1, rate=0.25), RngStream(0))
    assert (ctx.dropout_bank.state == GenState.STUCK_DROP).sum() == 8
    ctx = inject(net, bank, FaultSpec(Location.DROPOUT_MODULE, Kind.BIT_FLIP, rate=0.25), RngStream(0))
    flipped = ctx.dropout_bank.state == GenState.BIT_FLIP
    assert flipped.sum() == 8 and np.all(ctx.dropout_bank.flip_rate[flipped] == 0.25)


def test_drop_prob_variation(rng):
    net = init_network([8, 64, 64, 4], rng)
    bank = DropoutBank.healthy(net)
    ctx = inject(net, bank, FaultSpec(Location.DROPOUT_MODULE, Kind.DROP_PROB_VARIATION, sigma=0.1),
                 RngStream(3))
    p = ctx.dropout_bank.p_effective
    assert np.all((p >= 0) & (p <= 1))
    assert abs(p.mean() - 0.25) < 0.03 and 0.07 < p.std() < 0.13
    big = inject(net, bank, FaultSpec(Location.DROPOUT_MODULE, Kind.DROP_PROB_VARIATION, sigma=5.0),
                 RngStream(3)).dropout_bank.p_effective
    assert np.all((big >= 0) & (big <= 1))
    assert np.any(big == 0.0) and np.any(big == 1.0)


def test_calibrate_closed_form():
    # one column, outputs -2, 0, 2 equally often
    net = BinaryNetwork([identity_layer([[1.0], [1.0]])], Method.SPINDROP, 0.25)
    X = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]] * 10)
    (std,) = calibrate_layer_std(net, X, 30, RngStream(0))
    assert std == pytest.approx(math.sqrt(8 / 3), abs=1e-12)


def test_calibrate_errors():
    net = BinaryNetwork([identity_layer([[1.0], [1.0]])], Method.SPINDROP, 0.25)
    X = np.tile([1.0, 1.0], (40, 1))
    with pytest.raises(CalibrationError):
        calibrate_layer_std(net, X, 40, RngStream(0))
    with pytest.raises(ValueError):
        calibrate_layer_std(net, X, 10, RngStream(0))


def test_calibrate_reproducible(small_net, rng):
    X = bits(rng, (64, 16))
    a = calibrate_layer_std(small_net, X, 64, RngStream(5))
    b = calibrate_layer_std(small_net, X, 64, RngStream(5))
    assert a == b and all(s > 0 for s in a)


def test_global_stuck_zeroes_everything(rng):
    net = init_network([8, 8, 8, 2], rng, sharing=Sharing.GLOBAL_SHARED)
    bank = DropoutBank.healthy(net)
    ctx = inject(net, bank, FaultSpec(Location.DROPOUT_MODULE, Kind.STUCK_AT_1, rate=1.0), RngStream(0))
    masks = sample_masks(ctx.dropout_bank, net, RngStream(1), n=10)
    assert masks[0].all() and masks[1].all()

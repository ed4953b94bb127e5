import numpy as np
import pytest

from spinbayes.rng import RngStream, bernoulli, check_bits, derive, gaussian, sign_pm1


def test_derive_is_deterministic():
    s = RngStream(7)
    a = derive(s, 0).generator().random(100)
    b = derive(s, 0).generator().random(100)
    np.testing.assert_array_equal(a, b)


def test_sibling_streams_uncorrelated():
    s = RngStream(7)
    a = s.derive(0).generator().random(10_000)
    b = s.derive(1).generator().random(10_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_path_order_matters():
    s = RngStream(7)
    a = s.derive(1).derive(2).generator().random(16)
    b = s.derive(2).derive(1).generator().random(16)
    assert not np.array_equal(a, b)


def test_seed_range_checked():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(0, (-3,))


def test_int_seed_stable_and_distinct():
    s = RngStream(5)
    assert s.derive(1).int_seed() == s.derive(1).int_seed()
    assert s.derive(1).int_seed() != s.derive(2).int_seed()
    assert 0 <= s.int_seed() < 2**63


def test_bernoulli_edges():
    s = RngStream(0)
    assert not bernoulli(s, 0.0, 1000).any()
    assert bernoulli(s, 1.0, 1000).all()
    with pytest.raises(ValueError):
        bernoulli(s, 1.5)
    with pytest.raises(ValueError):
        bernoulli(s, -0.1)


def test_bernoulli_rate():
    draws = bernoulli(RngStream(3), 0.25, 1_000_000)
    assert 0.2487 <= draws.mean() <= 0.2513


def test_gaussian_moments():
    z = gaussian(RngStream(4), 0.0, 1.0, 1_000_000)
    assert abs(z.mean()) < 0.004
    assert 0.996 <= z.std() <= 1.004


def test_gaussian_location_scale():
    s = RngStream(9)
    z = s.generator().standard_normal(10)
    np.testing.assert_array_equal(gaussian(s, 5.0, 2.0, 10), 5.0 + 2.0 * z)
    np.testing.assert_array_equal(gaussian(s, 3.0, 0.0, 10), np.full(10, 3.0))
    with pytest.raises(ValueError):
        gaussian(s, 0.0, -1.0)


def test_sign_and_bits():
    np.testing.assert_array_equal(sign_pm1([-2.0, 0.0, 0.5]), [-1.0, 1.0, 1.0])
    check_bits([1, -1, 1])
    with pytest.raises(ValueError):
        check_bits([1, 0])

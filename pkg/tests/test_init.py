import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from initlab.activations import gaussian_moments
from initlab.init import Distribution, Family, FanMode, FanSpec, InitScheme, gain_for, init_matrix, target_std
from initlab.numerics import ParameterError, RngState

# E[(z Phi(z))^2] for z ~ N(0, 1), computed with scipy.integrate.quad and frozen
GELU_C_PHI = 0.42522148257029874


def test_target_std_examples():
    k = InitScheme.kaiming("normal", "fan_in", "relu")
    assert target_std(k, FanSpec(1, 5)) == pytest.approx(math.sqrt(2), rel=1e-15)
    assert target_std(k, FanSpec(784, 10)) == pytest.approx(0.050508, abs=5e-7)
    assert target_std(InitScheme.xavier(), FanSpec(16, 32)) == pytest.approx(0.204124, abs=5e-7)
    assert target_std(InitScheme.constant(0.02), FanSpec(3, 900)) == 0.02


def test_fan_modes():
    fan = FanSpec(100, 400)
    assert target_std(InitScheme.kaiming("normal", "fan_out", "relu"), fan) == pytest.approx(math.sqrt(2 / 400))
    assert target_std(InitScheme.lecun(), fan) == pytest.approx(0.1)
    assert InitScheme.xavier().fan_mode is FanMode.FAN_AVG


def test_zero_fan_rejected():
    with pytest.raises(ParameterError):
        FanSpec(0, 3)
    with pytest.raises(ParameterError):
        FanSpec(3, 0)


def test_constant_requires_positive_std():
    with pytest.raises(ParameterError):
        InitScheme.constant(0.0)
    with pytest.raises(ParameterError):
        InitScheme(Family.CONSTANT_STD, FanMode.FAN_IN, Distribution.NORMAL)


def test_kaiming_uniform_bound():
    w = init_matrix(RngState(0), InitScheme.kaiming("uniform", "fan_in", "relu"), FanSpec(6, 20000))
    assert w.shape == (20000, 6)
    assert np.abs(w).max() <= 1.0
    assert np.abs(w).max() > 0.999


def test_gain_for():
    assert gain_for("linear") == 1.0
    assert gain_for("relu") == pytest.approx(1.41421356, abs=1e-8)
    assert gain_for("gelu") == pytest.approx(1 / math.sqrt(GELU_C_PHI), rel=1e-9)
    with pytest.raises(ParameterError):
        gain_for("swish")


def test_gelu_gain_uses_cached_moment():
    assert gain_for("gelu") == pytest.approx(1 / math.sqrt(gaussian_moments("gelu")[0]), rel=1e-15)


@pytest.mark.parametrize("scheme", [
    InitScheme.lecun(), InitScheme.lecun("uniform"), InitScheme.xavier(), InitScheme.xavier("uniform"),
    InitScheme.kaiming("normal"), InitScheme.kaiming("uniform"), InitScheme.constant(0.05),
])
def test_empirical_std_mean_over_seeds(scheme):
    fan = FanSpec(784, 64)
    stds = [init_matrix(RngState(s), scheme, fan).std() for s in range(10)]
    assert np.mean(stds) == pytest.approx(target_std(scheme, fan), rel=0.01)


@pytest.mark.parametrize("scheme", [InitScheme.lecun(), InitScheme.xavier("uniform"),
                                    InitScheme.kaiming("uniform"), InitScheme.kaiming("normal", "fan_out")])
def test_512_square_within_three_standard_errors(scheme):
    fan = FanSpec(512, 512)
    w = init_matrix(RngState(9), scheme, fan)
    sigma = target_std(scheme, fan)
    assert abs(w.std() - sigma) <= 3 * sigma / math.sqrt(2 * w.size)


def test_uniform_and_normal_variances_agree():
    fan = FanSpec(300, 300)
    n = init_matrix(RngState(1), InitScheme.kaiming("normal"), fan).var()
    u = init_matrix(RngState(2), InitScheme.kaiming("uniform"), fan).var()
    assert u == pytest.approx(n, rel=0.01)


@given(st.integers(1, 5000))
def test_xavier_square_equals_lecun(k):
    assert target_std(InitScheme.xavier(), FanSpec(k, k)) == target_std(InitScheme.lecun(), FanSpec(k, k))


@pytest.mark.parametrize("scheme", [InitScheme.lecun(), InitScheme.xavier("uniform"),
                                    InitScheme.kaiming("uniform", "fan_in", "relu"), InitScheme.constant(0.02)])
def test_json_round_trip(scheme):
    obj = json.loads(json.dumps(scheme.to_json()))
    assert InitScheme.from_json(obj) == scheme


def test_json_named_gain():
    s = InitScheme.from_json({"family": "kaiming", "fan_mode": "fan_in", "distribution": "normal", "gain": "relu"})
    assert s.gain == pytest.approx(math.sqrt(2))


def test_init_is_deterministic():
    s = InitScheme.xavier()
    assert np.array_equal(init_matrix(RngState(4), s, FanSpec(5, 7)), init_matrix(RngState(4), s, FanSpec(5, 7)))

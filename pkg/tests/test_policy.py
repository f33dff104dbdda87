import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtrgp.policy import (
    ParamBox,
    ThresholdPolicy,
    TwoFeaturePolicy,
    consistent,
    decide,
    enumerate_grid,
    policy_from_json,
    policy_to_json,
)


def test_threshold_examples():
    p = ThresholdPolicy(0.25, 0.75)
    assert decide(p, {"x": 0.5}) == 0
    assert decide(p, {"x": 0.1}) == 1
    assert decide(p, {"x": 0.25}) == 0  # equality is not treated


def test_two_feature_example():
    assert decide(TwoFeaturePolicy(0.23, 89.8), {"c0": 0.5, "w0": 95.0}) == 1
    assert decide(TwoFeaturePolicy(0.23, 89.8), {"c0": 0.5, "w0": 89.8}) == 0
    with pytest.raises(ValueError):
        TwoFeaturePolicy(1.2, 10.0)
    with pytest.raises(ValueError):
        TwoFeaturePolicy(0.2, 0.0)


def test_missing_feature():
    with pytest.raises(ValueError):
        decide(ThresholdPolicy(0.2, 0.8), {"z": 0.1})


def test_consistent_examples():
    p = ThresholdPolicy(0.25, 0.75)
    assert consistent(p, {"x": 0.1}, 1)
    assert not consistent(p, {"x": 0.1}, 0)
    xs = np.linspace(0.001, 0.999, 50)
    assert np.all(consistent(ThresholdPolicy(0.0, 1.0), {"x": xs}, np.zeros(50)))


@given(st.floats(-1, 2), st.floats(-1, 2), st.floats(0.001, 0.999))
def test_overlapping_thresholds_treat_everyone(b1, b2, x):
    if b1 >= b2 and x != b1:
        assert decide(ThresholdPolicy(b1, b2), {"x": x}) == 1


@given(st.integers(2, 6), st.integers(2, 6))
def test_grid_size_and_containment(r1, r2):
    box = ParamBox((0.0, -1.0), (1.0, 3.0))
    g = enumerate_grid(box, (r1, r2))
    assert g.shape == (r1 * r2, 2)
    assert all(box.contains(t) for t in g)


def test_grid_examples():
    assert {tuple(t) for t in enumerate_grid(ParamBox.unit(2), 2)} == {(0, 0), (0, 1), (1, 0), (1, 1)}
    g = enumerate_grid(ParamBox.unit(2), 100)
    assert len(g) == 10_000
    assert np.diff(np.unique(g[:, 0])) == pytest.approx(np.full(99, 1 / 99))
    g = enumerate_grid(ParamBox((0, 0), (1, 100)), (3, 2))
    assert len(g) == 6 and set(g[:, 1]) == {0.0, 100.0}
    assert tuple(g[1]) == (0.0, 100.0)  # first coordinate varies slowest
    with pytest.raises(ValueError):
        enumerate_grid(ParamBox.unit(2), 1)


def test_box_validation_and_json():
    with pytest.raises(ValueError):
        ParamBox((1.0,), (0.0,))
    for p in (ThresholdPolicy(0.1, 0.9), TwoFeaturePolicy(0.23, 89.8)):
        assert policy_from_json(policy_to_json(p)) == p

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtrgp.dgp import (
    DgpSpec,
    generate_dataset,
    oracle_value,
    oracle_value_quadrature,
    outcome,
    true_optimum,
)
from dtrgp.policy import ThresholdPolicy


def test_outcome_formula_examples():
    assert outcome(DgpSpec(setting=2), 0.25, 1) == pytest.approx(0.25, abs=1e-15)
    assert outcome(DgpSpec(setting=3), 0.25, 1) == pytest.approx(-0.75)
    xs = np.linspace(0.01, 0.99, 25)
    assert outcome(DgpSpec(setting=1), xs, 1) == pytest.approx(xs + 1)


def test_dataset_is_deterministic_and_well_formed():
    spec = DgpSpec(setting=3, w=1.25, n=300)
    a, b = generate_dataset(spec, 4), generate_dataset(spec, 4)
    assert np.array_equal(a.y, b.y)
    assert np.all((a.x > 0) & (a.x < 1.25))
    assert np.all(a.propensity == 0.5)
    with pytest.raises(ValueError):
        DgpSpec(w=0)
    with pytest.raises(ValueError):
        DgpSpec(setting=4)


def test_oracle_examples():
    s2 = DgpSpec(setting=2, w=1.0)
    assert oracle_value(s2, ThresholdPolicy(1, 1)).value == pytest.approx(0.5, abs=1e-15)
    assert oracle_value(s2, ThresholdPolicy(0, 1)).value == pytest.approx(0.5, abs=1e-15)
    s3 = DgpSpec(setting=3, w=1.0)
    v = oracle_value(s3, ThresholdPolicy(0.125, 1)).value
    assert v == pytest.approx(0.5 + 1 / (4 * math.pi), abs=1e-14)
    assert v == pytest.approx(0.5796, abs=1e-4)


@given(
    st.sampled_from([1, 2, 3]),
    st.floats(0.3, 2.0),
    st.booleans(),
    st.floats(-0.2, 1.2),
    st.floats(-0.2, 1.2),
)
def test_closed_form_matches_quadrature(setting, w, corrected, b1, b2):
    spec = DgpSpec(setting=setting, w=w, setting1_corrected=corrected)
    pol = ThresholdPolicy(b1, b2)
    assert oracle_value(spec, pol).value == pytest.approx(oracle_value_quadrature(spec, pol).value, abs=1e-8)


def test_oracle_matches_monte_carlo():
    spec = DgpSpec(setting=1, w=1.0, setting1_corrected=True, n=400_000)
    data = generate_dataset(spec, 0)
    pol = ThresholdPolicy(0.4, 0.8)
    d = pol.decide({"x": data.x})
    mc = outcome(spec, data.x, d).mean()
    assert mc == pytest.approx(oracle_value(spec, pol).value, abs=3e-3)


def test_true_optimum_setting1_as_written_is_treat_all():
    spec = DgpSpec(setting=1, w=0.75, gamma0=-0.5)
    opt = true_optimum(spec)
    assert opt.value == pytest.approx(-0.5 + 0.375 + 1.0)

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polygrid.defaults import default_params
from polygrid.model import (
    CostCoefficients,
    curtailed_pv_output,
    pv_available_from_irradiance,
    soc_step,
    stage_cost,
    validate,
)

TABLE_COEFFS = CostCoefficients()


# ---------------------------------------------------------------------------
# pv availability
# ---------------------------------------------------------------------------


def test_pv_available_negative_irradiance_gives_zero():
    assert pv_available_from_irradiance(-5.0, 4.5) == 0.0


def test_pv_available_saturates_above_1000():
    assert pv_available_from_irradiance(1200.0, 4.5) == 4.5


def test_pv_available_linear_mid_range():
    assert pv_available_from_irradiance(500.0, 4.5) == pytest.approx(2.25)


@settings(max_examples=60, deadline=None)
@given(st.floats(-500.0, 2000.0), st.floats(-500.0, 2000.0))
def test_pv_available_monotone_and_bounded(i1, i2):
    lo, hi = sorted((i1, i2))
    a, b = (pv_available_from_irradiance(v, 4.5) for v in (lo, hi))
    assert 0.0 <= a <= b <= 4.5


# ---------------------------------------------------------------------------
# curtailment and SoC dynamics
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "u,w,expected", [(2.0, 3.0, 2.0), (3.0, 1.2, 1.2), (0.0, 5.0, 0.0)]
)
def test_curtailed_pv_output(u, w, expected):
    assert curtailed_pv_output(u, w) == expected


@pytest.mark.parametrize(
    "x,p,dt,expected",
    [(1.5, 0.0, 0.5, 1.5), (1.5, 1.0, 0.5, 1.0), (1.0, -0.5, 1.0 / 60.0, 1.0 + 0.5 / 60.0)],
)
def test_soc_step_values(x, p, dt, expected):
    assert soc_step(x, p, dt) == pytest.approx(expected, abs=1e-15)


@settings(max_examples=80, deadline=None)
@given(
    st.floats(-10.0, 10.0),
    st.floats(-5.0, 5.0),
    st.floats(1e-4, 2.0),
)
def test_soc_step_conserves_energy(x, p, dt):
    assert soc_step(x, p, dt) + dt * p == pytest.approx(x, abs=1e-12)


def test_thirty_plant_steps_equal_one_mpc_step():
    params = default_params()
    p = 0.73
    x = 1.5
    for _ in range(params.plant_steps_per_mpc):
        x = soc_step(x, p, params.dt_plant_h)
    assert x == pytest.approx(soc_step(1.5, p, params.dt_mpc_h), abs=1e-12)


# ---------------------------------------------------------------------------
# stage cost
# ---------------------------------------------------------------------------


def test_stage_cost_idle_system_pays_for_spilled_potential():
    cost = stage_cost(0.0, 0.0, 0.0, 0, 0, TABLE_COEFFS, 4.5)
    assert cost == pytest.approx(20.25)


def test_stage_cost_term_by_term():
    cost = stage_cost(2.0, 0.5, 3.0, 1, 0, TABLE_COEFFS, 4.5)
    assert cost == pytest.approx(9.25 + 0.2 + 2.25 + 0.025)


def test_stage_cost_switch_penalty_is_isolated():
    on_on = stage_cost(1.0, 0.2, 2.0, 1, 1, TABLE_COEFFS, 4.5)
    off_on = stage_cost(1.0, 0.2, 2.0, 1, 0, TABLE_COEFFS, 4.5)
    assert off_on - on_on == pytest.approx(0.2)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.0, 4.5),
    st.floats(-2.0, 2.0),
    st.floats(0.0, 4.5),
    st.integers(0, 1),
    st.integers(0, 1),
)
def test_stage_cost_nonnegative(p_fc, p_b, p_pv, d, dp):
    assert stage_cost(p_fc, p_b, p_pv, d, dp, TABLE_COEFFS, 4.5) >= 0.0


def test_stage_cost_minimised_at_full_pv():
    costs = [
        stage_cost(0.0, 0.0, p_pv, 0, 0, TABLE_COEFFS, 4.5)
        for p_pv in np.linspace(0.0, 4.5, 19)
    ]
    assert np.argmin(costs) == len(costs) - 1


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def test_validate_accepts_shipped_defaults():
    assert validate(default_params()) == []


def test_validate_rejects_non_multiple_sample_times():
    params = dataclasses.replace(default_params(), dt_mpc_h=0.5, dt_plant_h=0.07)
    problems = validate(params)
    assert any("integer multiple" in p for p in problems)


def test_validate_rejects_gamma_at_one():
    params = default_params()
    params = dataclasses.replace(params, cost=dataclasses.replace(params.cost, gamma=1.0))
    assert any("discount" in p for p in validate(params))


def test_validate_collects_all_problems_not_just_first():
    params = default_params()
    params = dataclasses.replace(
        params,
        cost=dataclasses.replace(params.cost, gamma=1.5, c_b_quad=-1.0),
        horizon_steps=0,
    )
    assert len(validate(params)) >= 3


def test_validate_warns_on_violation_prone_load_ordering():
    import types

    params = default_params()
    scenario = types.SimpleNamespace(load_pu=np.array([0.5, 2.0, 1.0]))
    with pytest.warns(UserWarning, match="peak load"):
        validate(params, scenario)

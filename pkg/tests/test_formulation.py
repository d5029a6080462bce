import dataclasses

import numpy as np
import pytest

from polygrid.defaults import default_params
from polygrid.formulation import (
    DecodeError,
    VariableLayout,
    build_mpc_problem,
    compute_big_m,
    decode_solution,
    first_control,
    format_program,
    recompute_objective,
)
from polygrid.polytope import contains
from polygrid.solver import INFEASIBLE, OPTIMAL, enumerate_miqp, solve_miqp, solve_qp

PARAMS = default_params()


def build(forecasts, x0=1.5, delta_prev=0, include_polytope=True, params=PARAMS):
    J = params.horizon_steps
    fc = np.asarray(forecasts, dtype=float)
    if fc.shape == (2,):
        fc = np.tile(fc, (J, 1))
    return build_mpc_problem(params, x0, delta_prev, fc, include_polytope)


def pin(program, name, j, value):
    """Return a copy of the program with one variable fixed by its bounds."""
    lb = program.lb.copy()
    ub = program.ub.copy()
    idx = program.layout.index(name, j)
    lb[idx] = ub[idx] = value
    return dataclasses.replace(program, lb=lb, ub=ub)


# ---------------------------------------------------------------------------
# layout and construction
# ---------------------------------------------------------------------------


def test_layout_counts():
    lay = VariableLayout(6)
    assert lay.n_variables == 10 * 6 + 7 == 67
    assert len(lay.binary_indices) == 12
    idx = [lay.index(name, 0) for name in ("u_fc", "u_b", "u_pv")]
    assert idx == [0, 1, 2]
    assert lay.index("x", 6) == 66
    assert len(set(lay.names())) == lay.n_variables


def test_layout_rejects_bad_indices():
    lay = VariableLayout(6)
    with pytest.raises(IndexError):
        lay.index("x", 7)
    with pytest.raises(IndexError):
        lay.index("p_b", 6)


def test_polytope_toggle_changes_only_inequality_rows():
    with_poly = build((2.0, 1.0), include_polytope=True)
    without = build((2.0, 1.0), include_polytope=False)
    planes = len(PARAMS.battery.polytope.planes)
    assert with_poly.h.size - without.h.size == planes * 4 * 6 == 72
    assert with_poly.b.size == without.b.size
    np.testing.assert_array_equal(with_poly.P, without.P)
    np.testing.assert_array_equal(with_poly.lb, without.lb)


def test_big_m_values():
    big = compute_big_m(PARAMS)
    assert big.pv_pos == pytest.approx(1.1 * 4.5)
    assert big.pv_neg == pytest.approx(-1.1 * 4.5)
    mu_max = 1.0 * (1.5 - (-0.59)) + 1.0 * 4.5
    assert big.fc_pos == pytest.approx(1.1 * (4.5 + mu_max))
    assert big.fc_neg == -big.fc_pos


def test_big_m_scales_with_power_bounds():
    doubled = dataclasses.replace(
        PARAMS, pv=dataclasses.replace(PARAMS.pv, p_min=0.0, p_max=9.0)
    )
    assert compute_big_m(doubled).pv_pos == pytest.approx(2 * compute_big_m(PARAMS).pv_pos)


def test_zero_scenario_admits_idle_point():
    program = build((0.0, 0.0))
    lay = program.layout
    z = np.zeros(lay.n_variables)
    for j in range(7):
        z[lay.index("x", j)] = 1.5
    assert np.max(np.abs(program.A @ z - program.b)) <= 1e-12
    assert np.max(program.G @ z - program.h) <= 1e-12
    assert np.all(z >= program.lb - 1e-12) and np.all(z <= program.ub + 1e-12)


def test_initial_energy_clamped_with_warning():
    with pytest.warns(UserWarning, match="clamping"):
        program = build((0.0, 0.0), x0=5.0)
    idx = program.layout.index("x", 0)
    assert program.lb[idx] == program.ub[idx] == PARAMS.battery.polytope.x_max


# ---------------------------------------------------------------------------
# decode and first_control
# ---------------------------------------------------------------------------


def test_decode_round_trips_idle_point():
    program = build((0.0, 0.0))
    lay = program.layout
    z = np.zeros(lay.n_variables)
    for j in range(7):
        z[lay.index("x", j)] = 1.5
    traj = decode_solution(program, z)
    assert traj.objective == pytest.approx(
        sum(0.9 ** (j + 1) * 20.25 for j in range(6))
    )
    np.testing.assert_array_equal(traj.p_b, np.zeros(6))
    np.testing.assert_array_equal(traj.x, np.full(7, 1.5))
    assert first_control(traj) == (0.0, 0.0, 0.0, 0)


def test_decode_rejects_fractional_binary():
    program = build((0.0, 0.0))
    lay = program.layout
    z = np.zeros(lay.n_variables)
    for j in range(7):
        z[lay.index("x", j)] = 1.5
    z[lay.index("delta_pv", 2)] = 0.5
    with pytest.raises(DecodeError, match="fractional"):
        decode_solution(program, z)


def test_decode_rejects_infeasible_point():
    program = build((0.0, 0.0))
    z = np.zeros(program.layout.n_variables)  # x rows all zero: dynamics violated
    with pytest.raises(DecodeError, match="violates"):
        decode_solution(program, z)


def test_decode_rejects_objective_mismatch():
    program = build((0.0, 0.0))
    lay = program.layout
    z = np.zeros(lay.n_variables)
    for j in range(7):
        z[lay.index("x", j)] = 1.5
    with pytest.raises(DecodeError, match="objective"):
        decode_solution(program, z, solver_objective=0.0)


def test_solver_objective_matches_stage_cost_recomputation():
    program = build((2.5, 1.8), x0=1.0, delta_prev=0)
    res = solve_miqp(program)
    assert res.status == OPTIMAL
    traj = decode_solution(program, res.x, res.objective)
    assert recompute_objective(PARAMS, traj, 0) == pytest.approx(traj.objective, abs=1e-6)


# ---------------------------------------------------------------------------
# big-M fidelity
# ---------------------------------------------------------------------------


def test_curtailment_rows_reproduce_min_law():
    rng = np.random.default_rng(5)
    one_step = dataclasses.replace(PARAMS, horizon_steps=1)
    for _ in range(60):
        u_bar = rng.uniform(0.0, 4.5)
        w_pv = rng.uniform(0.0, 4.5)
        program = build_mpc_problem(one_step, 1.0, 1, [(w_pv, 5.0)], False)
        program = pin(program, "u_pv", 0, u_bar)
        res = enumerate_miqp(program)
        assert res.status == OPTIMAL
        p_pv = res.x[program.layout.index("p_pv", 0)]
        assert p_pv == pytest.approx(min(u_bar, w_pv), abs=1e-6)


def test_share_rows_decouple_when_fc_off():
    # with the unit off, mu may take any value in its box
    one_step = dataclasses.replace(PARAMS, horizon_steps=1)
    for mu_probe in (-0.4, 0.0, 0.55):
        program = build_mpc_problem(one_step, 1.0, 0, [(0.5, 0.3)], True)
        program = pin(program, "delta_fc", 0, 0.0)
        program = pin(program, "mu", 0, mu_probe)
        res = solve_qp(program)
        assert res.status == OPTIMAL, mu_probe


def test_share_rows_couple_when_fc_on():
    one_step = dataclasses.replace(PARAMS, horizon_steps=1)

    def probe(mu_value):
        program = build_mpc_problem(one_step, 1.0, 1, [(0.0, 1.0)], True)
        program = pin(program, "delta_fc", 0, 1.0)
        program = pin(program, "p_fc", 0, 0.8)
        program = pin(program, "u_fc", 0, 0.5)
        program = pin(program, "mu", 0, mu_value)
        return solve_qp(program).status

    assert probe(1.0 * (0.8 - 0.5)) == OPTIMAL
    assert probe(0.3 + 0.2) == INFEASIBLE
    assert probe(0.3 - 0.2) == INFEASIBLE


def test_fc_box_logic():
    one_step = dataclasses.replace(PARAMS, horizon_steps=1)

    def probe(delta, p_fc, w_l):
        program = build_mpc_problem(one_step, 1.0, int(delta), [(0.0, w_l)], True)
        program = pin(program, "delta_fc", 0, delta)
        program = pin(program, "p_fc", 0, p_fc)
        return solve_qp(program).status

    assert probe(0.0, 0.3, 0.3) == INFEASIBLE  # off but producing
    assert probe(0.0, 0.0, 0.3) == OPTIMAL
    assert probe(1.0, 0.1, 0.3) == INFEASIBLE  # below the running floor
    assert probe(1.0, 0.2, 0.4) == OPTIMAL
    assert probe(1.0, 4.5, 4.6) == OPTIMAL  # at the cap, battery absorbs the rest
    assert probe(1.0, 4.7, 4.8) == INFEASIBLE


def test_switch_cost_linearisation_exact_on_all_combinations():
    one_step = dataclasses.replace(PARAMS, horizon_steps=1)
    for delta_prev in (0, 1):
        for delta in (0, 1):
            # load high enough to need the fuel cell only when delta = 1
            w_l = 1.2 if delta else 0.3
            program = build_mpc_problem(one_step, 1.0, delta_prev, [(0.0, w_l)], True)
            program = pin(program, "delta_fc", 0, float(delta))
            res = solve_qp(program)
            assert res.status == OPTIMAL
            s_sw = res.x[program.layout.index("s_sw", 0)]
            assert s_sw == pytest.approx((delta - delta_prev) ** 2, abs=1e-6)


def test_discount_weights_scale_stage_terms():
    lay = VariableLayout(6)
    for gamma in (0.5, 0.9):
        params = dataclasses.replace(
            PARAMS, cost=dataclasses.replace(PARAMS.cost, gamma=gamma)
        )
        program = build((1.0, 1.0), params=params)
        weights = np.array(
            [program.q[lay.index("delta_fc", j)] for j in range(6)]
        )
        expected = np.array([gamma ** (j + 1) * params.cost.c_fc_run_fixed for j in range(6)])
        np.testing.assert_allclose(weights, expected, rtol=1e-12)


def test_feasible_solutions_respect_polytope():
    poly = PARAMS.battery.polytope
    program = build((0.5, 0.9), x0=0.45, delta_prev=0, include_polytope=True)
    res = solve_miqp(program)
    assert res.status == OPTIMAL
    traj = decode_solution(program, res.x, res.objective)
    for j in range(6):
        for var in (traj.p_b[j], traj.u_b[j]):
            assert contains(poly, traj.x[j], var, tol=1e-6)
            assert contains(poly, traj.x[j + 1], var, tol=1e-6)


def test_format_program_lists_every_row():
    program = build((1.0, 1.0))
    text = format_program(program)
    assert text.count("\n") == 1 + program.b.size + program.h.size + program.lb.size
    assert "power_balance[0]" in text
    assert "storage_plane" in text

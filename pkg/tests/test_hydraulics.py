import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import DATA, load
from oracles import solve_step
from wdnrtr.bounds import initial_box
from wdnrtr.hydraulics import (HeadlossCoefficients, HydraulicInfeasible, HydraulicState,
                               assemble_hydraulic_rows, azp_value, eval_headloss,
                               fit_headloss_coefficients, hazen_williams, hydraulic_residuals,
                               network_analysis, recover_aux, solve_fixed_valve_nlp, valve_keys,
                               add_valve_set, state_within_bounds)
from wdnrtr.network import Link, azp_weights, load_network, network_from_dict, network_to_dict
from wdnrtr.solvers import LpBuilder, lp_solve


def make_link(length=1000.0, diameter=0.3, roughness=120.0):
    z = np.zeros(1)
    return Link("L", 0, 1, length, diameter, roughness, 0.0, 1, z, z, z, z)


def test_fit_matches_normal_equations():
    link = make_link()
    a, b = fit_headloss_coefficients(link, 50.0)
    q = np.linspace(0.0, 50.0, 100)
    X = np.column_stack([q ** 2, q])
    y = hazen_williams(1000.0, 0.3, 120.0, q)
    ref = np.linalg.solve(X.T @ X, X.T @ y)
    assert np.all(ref > 0)  # unconstrained optimum is interior, so it is the constrained one
    assert a == pytest.approx(ref[0], rel=1e-9)
    assert b == pytest.approx(ref[1], rel=1e-9)


def test_fit_is_linear_in_length_and_vanishes_at_zero():
    a1, b1 = fit_headloss_coefficients(make_link(length=500.0), 30.0)
    a2, b2 = fit_headloss_coefficients(make_link(length=1000.0), 30.0)
    assert a2 == pytest.approx(2 * a1, rel=1e-9) and b2 == pytest.approx(2 * b1, rel=1e-9)
    assert eval_headloss(a1, b1, 0.0) == 0.0
    with pytest.raises(ValueError):
        fit_headloss_coefficients(make_link(), 0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(70.0, 150.0), st.floats(1.0, 2000.0))
def test_fit_relative_error(diameter, roughness, q_ref):
    link = make_link(diameter=diameter, roughness=roughness)
    a, b = fit_headloss_coefficients(link, q_ref)
    q = np.linspace(0.1 * q_ref, q_ref, 400)
    hw = hazen_williams(link.length, diameter, roughness, q)
    err = np.linalg.norm(a * q ** 2 + b * q - hw) / np.linalg.norm(hw)
    assert err <= 0.05


def test_eval_headloss_values():
    assert eval_headloss(2.0, 3.0, 2.0) == 14.0
    q = np.linspace(-5, 5, 11)
    assert np.array_equal(eval_headloss(1.5, 0.5, -q), -eval_headloss(1.5, 0.5, q))
    with pytest.raises(ValueError):
        HeadlossCoefficients(np.array([0.0]), np.array([1.0]))


@pytest.mark.parametrize("q, th, expected", [
    (5.0, 3.0, (5, 0, 5, 3, 0, 1)),
    (-3.0, -2.0, (0, 3, 3, 0, 2, 0)),
    (0.0, 0.0, (0, 0, 0, 0, 0, 0)),
])
def test_recover_aux_examples(q, th, expected):
    assert tuple(float(v) for v in recover_aux(q, th)) == expected


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_recover_aux_identities(values):
    q = np.array(values)
    qp, qm, s, thp, thm, z = recover_aux(q, 2 * q)
    assert np.all(qp * qm == 0) and np.array_equal(s, qp + qm) and np.array_equal(qp - qm, q)
    assert np.array_equal(thp - thm, 2 * q) and np.all(z[q <= 0] == 0)


def test_tri_row_and_column_counts():
    net, co = load("tri")
    b = LpBuilder()
    keys = valve_keys(net.n_p)
    add_valve_set(b, net.n_p, 1, keys)
    assemble_hydraulic_rows(b, net, initial_box(net, co), 0, keys)
    # per step: energy n_p, mass n_n, valve 4 n_p, split 3 n_p, split bounds 4 n_p
    assert b.n_rows == (net.n_p + 1) + 12 * net.n_p + net.n_n
    assert b.n_vars == 2 * net.n_p + 9 * net.n_p + net.n_n


def test_closed_valves_force_zero_eta_and_single_pipe_mass():
    net, co = load("single_pipe")
    b = LpBuilder()
    keys = valve_keys(1)
    for key in keys:
        b.fix(key, 0.0)
    assemble_hydraulic_rows(b, net, initial_box(net, co), 0, keys)
    lp = b.build()
    for sgn in (1.0, -1.0):
        c = np.zeros(b.n_vars)
        c[b.index[("eta", 0, 0)]] = sgn
        sol = lp_solve(lp.with_objective(c))
        assert b.value(sol.x, ("eta", 0, 0)) == pytest.approx(0.0, abs=1e-12)
        assert b.value(sol.x, ("q", 0, 0)) == pytest.approx(net.demand[0, 0], abs=1e-12)


def test_network_analysis_matches_scipy_root():
    net, co = load("desk_b")
    st_ = network_analysis(net, co)
    for k in range(net.n_t):
        q, h = solve_step(net, co, np.zeros(net.n_p), k)
        assert np.allclose(st_.q[:, k], q, atol=1e-8) and np.allclose(st_.h[:, k], h, atol=1e-8)


def test_single_pipe_closed_form():
    net, co = load("single_pipe")
    out = solve_fixed_valve_nlp(net, co, np.zeros(2))
    d = net.demand[0]
    h = net.source_nodes[0].h0 - eval_headloss(co.a[0], co.b[0], d)
    assert np.allclose(out.state.q[0], d, atol=1e-9)
    assert np.allclose(out.state.h[0], h, atol=1e-7)
    w = azp_weights(net)[0]
    assert out.f_azp == pytest.approx(float(np.sum(w * (h - net.elevations[0]))), abs=1e-7)


def test_valve_lowers_pressure_to_bound():
    net, co = load("single_pipe")
    out = solve_fixed_valve_nlp(net, co, np.array([1.0, 0.0]))
    assert np.allclose(out.state.h[0], net.demand_nodes[0].h_min, atol=1e-7)
    assert np.all(out.state.eta[0] > 0)


def test_no_valve_nlp_equals_network_analysis():
    net, co = load("desk_a")
    out = solve_fixed_valve_nlp(net, co, np.zeros(2 * net.n_p))
    ref = network_analysis(net, co)
    assert np.all(out.state.eta == 0)
    assert np.allclose(out.state.q, ref.q, atol=1e-6) and np.allclose(out.state.h, ref.h, atol=1e-6)


def test_nlp_state_invariants():
    net, co = load("toy")
    v = np.zeros(2 * net.n_p)
    v[0] = 1
    out = solve_fixed_valve_nlp(net, co, v)
    assert max(hydraulic_residuals(net, co, out.state).values()) <= 1e-6
    assert state_within_bounds(net, out.state, v_hat=v, tol=1e-8)
    assert out.f_azp == pytest.approx(azp_value(net, out.state.h), abs=1e-12)


def test_more_valves_never_hurt_on_toy():
    net, co = load("toy")
    base = solve_fixed_valve_nlp(net, co, np.zeros(2 * net.n_p)).f_azp
    for l in range(net.n_p):
        v = np.zeros(2 * net.n_p)
        v[l] = 1
        try:
            val = solve_fixed_valve_nlp(net, co, v).f_azp
        except HydraulicInfeasible:
            continue
        assert val <= base + 1e-6


def test_unreachable_head_bounds_are_infeasible():
    doc = network_to_dict(load_network(DATA / "single_pipe.json"))
    doc["nodes"][0]["h_min"] = 65.0
    net = network_from_dict(doc)
    co = HeadlossCoefficients(*map(np.array, zip(fit_headloss_coefficients(net.links[0], 20.0))))
    with pytest.raises(HydraulicInfeasible):
        solve_fixed_valve_nlp(net, co, np.zeros(2))


def test_state_dict_round_trip():
    net, co = load("tri")
    st_ = network_analysis(net, co)
    back = HydraulicState.from_dict(st_.to_dict())
    assert np.array_equal(back.q, st_.q) and np.array_equal(back.theta, st_.theta)

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs

from conftest import DATA, load
from oracles import best_quality, enumerate_optimum
from wdnrtr.bounds import initial_box
from wdnrtr.heuristic import AUDIT_TOL, build_feasible_solution, round_valve_vector, try_hydraulics
from wdnrtr.hydraulics import HydraulicInfeasible, fit_network_coefficients
from wdnrtr.network import network_from_dict
from wdnrtr.quality import compute_atd, simulate_quality
from wdnrtr.relaxation import assemble_relaxation, solve_relaxation


def placements(n_p, n_v):
    """Every binary valve vector with ``n_v`` valves, at most one direction per link."""
    for links in itertools.combinations(range(n_p), n_v):
        for dirs in itertools.product((0, 1), repeat=n_v):
            v = np.zeros(2 * n_p)
            for l, d in zip(links, dirs):
                v[l + d * n_p] = 1.0
            yield v


def test_rounding_worked_example():
    v_hat = round_valve_vector([0.7, 0.2, 0.1, 0.5], 1)
    assert v_hat.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_rounding_prefers_negative_when_larger():
    v_hat = round_valve_vector([0.1, 0.2, 0.3, 0.4], 1)
    assert v_hat.tolist() == [0.0, 0.0, 0.0, 1.0]


def test_rounding_keeps_binary_points():
    for v in placements(4, 2):
        assert np.array_equal(round_valve_vector(v, 2), v)


def test_rounding_ties():
    v_hat = round_valve_vector(np.full(10, 0.2), 2)
    assert v_hat.tolist() == [1.0, 1.0, 0, 0, 0, 0, 0, 0, 0, 0]


@settings(max_examples=200, deadline=None)
@given(hs.integers(1, 6), hs.data())
def test_rounding_lands_in_valve_set(n_p, data):
    n_v = data.draw(hs.integers(0, n_p))
    raw = np.array(data.draw(hs.lists(hs.floats(0.0, 1.0), min_size=2 * n_p, max_size=2 * n_p)))
    v_hat = round_valve_vector(raw, n_v)
    assert set(np.unique(v_hat)) <= {0.0, 1.0}
    assert v_hat.sum() == n_v
    pos, neg = v_hat[:n_p], v_hat[n_p:]
    assert np.all(pos + neg <= 1)
    strength = np.maximum(raw[:n_p], raw[n_p:])
    chosen = (pos + neg) > 0
    if 0 < n_v < n_p:
        assert strength[chosen].min() >= strength[~chosen].max()
    for l in np.flatnonzero(chosen):
        assert (pos[l] == 1) == (raw[l] >= raw[n_p + l])


@pytest.mark.parametrize("name,n_v,n_b", [("toy", 1, 1), ("tri", 1, 0), ("desk_b", 2, 1)])
def test_feasible_solution_passes_audit(name, n_v, n_b):
    net, co = load(name)
    built = 0
    for v in placements(net.n_p, n_v):
        try:
            point = build_feasible_solution(net, co, v, n_b)
        except HydraulicInfeasible:
            continue
        built += 1
        assert max(point.audit.values()) <= AUDIT_TOL
        assert point.v_b.sum() == n_b
        assert point.ub == point.f_azp + point.f_atd
        if built == 3:
            break
    assert built > 0


def test_atd_matches_simulator_without_boosters():
    net, co = load("toy")
    point = build_feasible_solution(net, co, np.zeros(2 * net.n_p), 0)
    qs = simulate_quality(net, point.hydraulics, point.quality.c[net.n_n:])
    assert np.allclose(qs.c, point.quality.c, atol=1e-8)
    assert compute_atd(net, qs.c) == pytest.approx(point.f_atd, abs=1e-8)
    assert point.f_atd == pytest.approx(best_quality(net, point.hydraulics.q, None), abs=1e-6)


def test_booster_choice_matches_oracle_on_fixed_flows():
    net, co = load("toy")
    point = build_feasible_solution(net, co, np.zeros(2 * net.n_p), 1)
    oracle = min(best_quality(net, point.hydraulics.q, i) for i in range(net.n_n))
    assert point.f_atd == pytest.approx(oracle, abs=1e-6)


@pytest.fixture(scope="module")
def toy_no_booster_oracle():
    net, co = load("toy")
    return enumerate_optimum(net, co, n_b=0)


def test_best_rounded_point_near_enumeration(toy_no_booster_oracle):
    net, co = load("toy")
    opt, _ = toy_no_booster_oracle
    ubs = []
    for v in placements(net.n_p, 1):
        try:
            ubs.append(build_feasible_solution(net, co, v, 0).ub)
        except HydraulicInfeasible:
            pass
    best = min(ubs)
    assert best >= opt - 1e-6
    assert best <= 1.05 * opt


def test_upper_bound_dominates_relaxation():
    net, co = load("desk_a")
    box = initial_box(net, co)
    lb = solve_relaxation(assemble_relaxation(net, co, box, 5, 1, 1)).objective
    for v in placements(net.n_p, 1):
        try:
            assert build_feasible_solution(net, co, v, 1).ub >= lb - 1e-6
        except HydraulicInfeasible:
            pass


def test_construction_is_deterministic():
    net, co = load("desk_b")
    v = next(placements(net.n_p, 1))
    a = build_feasible_solution(net, co, v, 1)
    b = build_feasible_solution(net, co, v, 1)
    assert a.ub == b.ub
    assert np.array_equal(a.hydraulics.q, b.hydraulics.q)
    assert np.array_equal(a.quality.xi, b.quality.xi)


def test_failed_hydraulics_returns_none():
    doc = json.loads((DATA / "single_pipe.json").read_text())
    net, co = load("single_pipe")
    v = np.array([1.0, 0.0])
    assert try_hydraulics(net, co, v, 5, initial_box(net, co)) is not None
    doc["nodes"][0]["h_min"] = 65.0
    bad = network_from_dict(doc)
    co_bad = fit_network_coefficients(bad)
    assert try_hydraulics(bad, co_bad, v, 5, initial_box(bad, co_bad)) is None

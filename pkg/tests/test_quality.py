import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import load
from oracles import best_quality
from wdnrtr.hydraulics import network_analysis
from wdnrtr.network import Link, atd_weights, network_from_dict
from wdnrtr.quality import (QualitySingular, assemble_quality_milp, compute_atd, pde_coefficients,
                            quality_state_from_solution, simulate_quality,
                            warmup_initial_concentrations, write_trajectory_csv)
from wdnrtr.solvers import MilpProblem, lp_solve, milp_solve


class Flows:
    def __init__(self, q):
        self.q = np.asarray(q, dtype=float)


def pipe_network(n_t, decay=2e-5, segments=3, demand=5.0, length=1000.0, diameter=0.2, dt=3600.0):
    return network_from_dict({
        "meta": {"n_t": n_t, "dt": dt},
        "nodes": [{"id": "A", "elev": 0.0, "demand": demand, "h_min": 0.0, "h_max": 100.0}],
        "sources": [{"id": "S", "h0": 50.0}],
        "links": [{"id": "P", "from": "S", "to": "A", "length": length, "diameter": diameter,
                   "roughness": 120.0, "decay": decay, "segments": segments,
                   "q_min": -20.0, "q_max": 20.0}],
    })


def test_pde_coefficients_formula():
    z = np.zeros(1)
    link = Link("P", 0, 1, 1000.0, 0.2, 120.0, 0.0, 2, z, z, z, z)
    gamma, dx = pde_coefficients(link, 3600.0)
    assert dx == 500.0
    assert gamma == pytest.approx(4 * 3600 / (1000 * math.pi * 0.04 * 500), rel=1e-15)
    link4 = Link("P", 0, 1, 1000.0, 0.2, 120.0, 0.0, 4, z, z, z, z)
    g4, dx4 = pde_coefficients(link4, 3600.0)
    assert dx4 == dx / 2 and g4 == pytest.approx(2 * gamma, rel=1e-15)


def test_steady_segment_ratio():
    net = pipe_network(300)
    s = 5.0
    out = simulate_quality(net, Flows(np.full((1, 300), s)), 0.5)
    gamma, _ = pde_coefficients(net.links[0], net.dt)
    ratio = gamma * s / (net.links[0].decay * net.dt + gamma * s)
    r = out.r[0][:, -1]
    assert np.allclose(r[1:] / r[:-1], ratio, atol=1e-10, rtol=0)


def test_zero_decay_conserves_at_steady_state():
    net = pipe_network(300, decay=0.0)
    out = simulate_quality(net, Flows(np.full((1, 300), 5.0)), 0.5)
    assert abs(out.c[0, -1] - 0.5) <= 1e-10
    assert np.all(np.abs(out.r[0][:, -1] - 0.5) <= 1e-10)


def test_zero_flow_link_decays_in_place():
    net, co = load("tri")
    # flows S->A and S->B only, nothing on A-B
    q = np.array([net.demand[0], np.zeros(2), net.demand[1]])
    out = simulate_quality(net, Flows(q), 0.5, r_init=[np.full(2, 0.8)] * 3)
    alpha_dt = net.links[1].decay * net.dt
    r = out.r[1]
    for k in range(1, net.n_t + 1):
        assert abs(r[1, k] - r[1, k - 1] / (1 + alpha_dt)) <= 1e-12


def test_singular_node_is_named():
    doc_net = pipe_network(1, demand=0.0)
    with pytest.raises(QualitySingular, match="'A'"):
        simulate_quality(doc_net, Flows([[0.0]]), 0.5)


def test_warmup_flushed_network():
    net = pipe_network(2, decay=0.0, segments=1, demand=20.0, diameter=0.1)
    c0 = warmup_initial_concentrations(net, Flows(np.full((1, 2), 20.0)))
    assert np.allclose(c0, 0.5, atol=1e-9)


def test_warmup_single_pipe_geometric():
    net = pipe_network(2, segments=2, demand=20.0, diameter=0.1)
    c0 = warmup_initial_concentrations(net, Flows(np.full((1, 2), 20.0)))
    gamma, _ = pde_coefficients(net.links[0], net.dt)
    ratio = gamma * 20.0 / (net.links[0].decay * net.dt + gamma * 20.0)
    assert c0[0] == pytest.approx(0.5 * ratio ** 2, abs=1e-9)


def test_warmup_without_flow_stays_zero():
    net = pipe_network(2)
    assert np.all(warmup_initial_concentrations(net, Flows(np.zeros((1, 2))))[:1] == 0)


def test_atd_values():
    net, _ = load("desk_a")
    target = net.c_target[:, None]
    assert compute_atd(net, np.repeat(target, net.n_t, axis=1)) == 0.0
    assert compute_atd(net, np.repeat(target + 0.3, net.n_t, axis=1)) == pytest.approx(0.3, abs=1e-14)
    hyd = network_analysis(net, load("desk_a")[1])
    c = simulate_quality(net, hyd, 0.5).c
    d = net.demand
    manual = 0.0
    for i in range(net.n_n):
        for k in range(net.n_t):
            manual += d[i, k] / d.sum() * abs(c[i, k] - net.c_target[i])
    assert compute_atd(net, c) == pytest.approx(manual, abs=1e-14)


def milp_optimum(net, q, n_b):
    model = assemble_quality_milp(net, q, n_b)
    sol = milp_solve(model.problem, gap_tol=1e-12)
    return model, sol


@pytest.mark.parametrize("name", ["toy", "desk_a", "desk_c"])
def test_milp_without_boosters_matches_superposition_oracle(name):
    net, co = load(name)
    hyd = network_analysis(net, co)
    model, sol = milp_optimum(net, hyd.q, 0)
    assert sol.objective == pytest.approx(best_quality(net, hyd.q, None), abs=1e-8)
    qs, vb = quality_state_from_solution(net, model.builder, sol.x)
    again = simulate_quality(net, hyd, qs.source_c(net))
    assert np.allclose(again.c, qs.c, atol=1e-8)
    assert sol.objective == pytest.approx(compute_atd(net, again.c), abs=1e-8)
    # constant source levels can only do worse than a free per-step schedule
    for level in np.linspace(0.0, 0.5, 11):
        assert sol.objective <= compute_atd(net, simulate_quality(net, hyd, level).c) + 1e-9


def test_milp_with_one_booster_matches_oracle():
    net, co = load("toy")
    hyd = network_analysis(net, co)
    _, sol = milp_optimum(net, hyd.q, 1)
    ref = min(best_quality(net, hyd.q, i) for i in range(net.n_n))
    assert sol.objective == pytest.approx(ref, abs=1e-8)


def test_milp_structure_and_booster_monotonicity():
    net, co = load("desk_b")
    hyd = network_analysis(net, co)
    vals = []
    for n_b in range(net.n_n + 1):
        model, sol = milp_optimum(net, hyd.q, n_b)
        assert model.problem.binaries.size == net.n_n
        vals.append(sol.objective)
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))
    full = assemble_quality_milp(net, hyd.q, net.n_n)
    assert lp_solve(full.problem.lp).objective == pytest.approx(vals[-1], abs=1e-9)


@pytest.mark.parametrize("name", ["toy", "desk_b"])
def test_simulator_satisfies_assembled_rows(name):
    net, co = load(name)
    hyd = network_analysis(net, co)
    rng = np.random.default_rng(0)
    boost = [0, net.n_n - 1]
    xi = np.zeros((net.n_n, net.n_t))
    xi[boost] = rng.uniform(0.0, 2.0, (2, net.n_t))
    src = rng.uniform(0.0, 0.5, (net.n_0, net.n_t))
    qs = simulate_quality(net, hyd, src, xi=xi)
    model = assemble_quality_milp(net, hyd.q, 2)
    b = model.builder
    x = np.zeros(b.n_vars)
    for key, j in b.index.items():
        kind = key[0]
        if kind == "vb":
            x[j] = 1.0 if key[1] in boost else 0.0
        elif kind in ("c", "xi", "mu", "rho"):
            arr = {"c": qs.c, "xi": qs.xi, "mu": qs.mu, "rho": qs.rho}[kind]
            x[j] = arr[key[1], key[2]]
        elif kind == "r":
            x[j] = qs.r[key[2]][key[1], key[3] + 1]
        elif kind == "w":
            x[j] = qs.w[key[2]][key[1], key[3]]
    lp = model.problem.lp
    assert np.max(lp.row_violations(x)) <= 1e-8
    assert np.max(lp.bound_violations(x), initial=0.0) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 50.0), st.floats(0.0, 1e-3), st.floats(0.0, 2.0), st.integers(1, 5))
def test_upwind_scheme_never_overshoots(speed, decay, r0, segments):
    net = pipe_network(6, decay=decay, segments=segments, demand=speed)
    out = simulate_quality(net, Flows(np.full((1, 6), speed)), 0.5, r_init=[np.full(segments + 1, r0)])
    top = max(r0, 0.5)
    assert np.all(out.r[0] >= -1e-14) and np.all(out.r[0] <= top + 1e-12)
    assert np.all(out.c >= -1e-14) and np.all(out.c <= top + 1e-12)


def test_trajectory_csv(tmp_path):
    net, co = load("tri")
    qs = simulate_quality(net, network_analysis(net, co), 0.5)
    write_trajectory_csv(net, qs, tmp_path / "t.csv")
    with open(tmp_path / "t.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time", "entity_kind", "entity_id", "segment", "value"]
    kinds = {r[1] for r in rows[1:]}
    assert kinds == {"node", "source", "segment", "booster"}
    n_seg = sum(link.segments + 1 for link in net.links) * (net.n_t + 1)
    assert len(rows) - 1 == (net.n_n + net.n_0) * net.n_t + n_seg + net.n_n * net.n_t

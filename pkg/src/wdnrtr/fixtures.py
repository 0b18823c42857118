"""Seeded generator of small feasible networks for tests and desk studies.

Head bounds are placed around a valve-free network analysis, so the
all-open configuration is always hydraulically feasible; flow bounds are
``+/-`` total demand, which no acyclic potential flow can exceed.
"""

from __future__ import annotations

import numpy as np

from .hydraulics import fit_network_coefficients, network_analysis
from .network import NetworkGraph, network_from_dict


def _pattern(n_t: int, rng) -> np.ndarray:
    t = np.arange(n_t)
    return 1.0 + 0.3 * np.sin(2 * np.pi * t / max(n_t, 1) + rng.uniform(0, 2 * np.pi))


def random_network_dict(n_n: int, n_p: int, n_0: int = 1, n_t: int = 4, segments: int = 1,
                        seed: int = 0, dt: float = 3600.0, head_margin: float = 5.0) -> dict:
    """Network document with ``n_n`` demand nodes, ``n_p`` links and ``n_0`` sources."""
    if n_p < n_n:
        raise ValueError("need at least n_n links to connect every demand node")
    rng = np.random.default_rng(seed)
    node_ids = [f"N{i}" for i in range(n_n)]
    src_ids = [f"S{s}" for s in range(n_0)]
    edges = []
    for i in range(n_n):
        # attach to a source or an earlier node; the first n_0 nodes take one source each
        if i < n_0:
            edges.append((src_ids[i], node_ids[i]))
        else:
            pool = node_ids[:i] + src_ids
            edges.append((pool[rng.integers(len(pool))], node_ids[i]))
    present = set(edges) | {(b, a) for a, b in edges}
    pool = [(a, b) for i, a in enumerate(node_ids) for b in node_ids[i + 1:] + src_ids
            if (a, b) not in present]
    if n_p - len(edges) > len(pool):
        raise ValueError(f"at most {len(edges) + len(pool)} distinct links fit on {n_n} nodes")
    for j in rng.permutation(len(pool))[:n_p - len(edges)]:
        edges.append(pool[j])
    elev = rng.uniform(0.0, 15.0, n_n)
    base = rng.uniform(2.0, 10.0, n_n)
    demand = np.outer(base, _pattern(n_t, rng))
    q_bound = float(np.max(demand.sum(axis=0))) * 1.05
    src_head = rng.uniform(60.0, 75.0, n_0)
    links = []
    for e, (a, b) in enumerate(edges):
        links.append({"id": f"L{e}", "from": a, "to": b,
                      "length": float(rng.uniform(200.0, 1000.0)),
                      "diameter": float(rng.choice([0.2, 0.25, 0.3, 0.35])),
                      "roughness": float(rng.uniform(100.0, 130.0)),
                      "decay": float(rng.uniform(1e-5, 5e-5)),
                      "segments": segments, "q_min": -q_bound, "q_max": q_bound})
    doc = {
        "meta": {"n_t": n_t, "dt": dt},
        "nodes": [{"id": node_ids[i], "elev": float(elev[i]), "demand": demand[i].tolist(),
                   "h_min": 0.0, "h_max": 1e3} for i in range(n_n)],
        "sources": [{"id": src_ids[s], "h0": float(src_head[s])} for s in range(n_0)],
        "links": links,
    }
    net = network_from_dict(doc)
    st = network_analysis(net, fit_network_coefficients(net))
    h_lo = st.h.min(axis=1)
    for i, nd in enumerate(doc["nodes"]):
        nd["h_min"] = float(max(elev[i], h_lo[i] - head_margin))
        nd["h_max"] = float(max(src_head) + head_margin)
    span = float(max(src_head) + head_margin - min(d["h_min"] for d in doc["nodes"]))
    for ld in links:
        ld["eta_min"] = -span
        ld["eta_max"] = span
    return doc


def random_network(*args, **kw) -> NetworkGraph:
    return network_from_dict(random_network_dict(*args, **kw))

"""Network data model, JSON ingestion, objective weights and size accounting.

Nodes share one integer index space: demand nodes occupy ``0..n_n-1`` and
source nodes ``n_n..n_n+n_0-1``.  Units are L/s for flow, m for head, length
and diameter, mg/L for concentration and s for time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import jsonschema
import numpy as np

DEFAULT_SEGMENTS = 2
DEFAULT_NODE_CMAX = 2.0
DEFAULT_SOURCE_CMAX = 0.5
DEFAULT_TARGET = 1.0


class NetworkError(ValueError):
    """Invalid network input; ``location`` points at the offending entry."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


_series = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]}

NETWORK_SCHEMA = {
    "type": "object",
    "required": ["meta", "nodes", "sources", "links"],
    "properties": {
        "meta": {
            "type": "object",
            "required": ["n_t", "dt"],
            "properties": {"n_t": {"type": "integer", "minimum": 1},
                           "dt": {"type": "number", "exclusiveMinimum": 0}},
        },
        "nodes": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "elev", "demand", "h_min", "h_max"],
                "properties": {
                    "id": {"type": ["string", "integer"]}, "elev": {"type": "number"},
                    "demand": _series, "h_min": _series, "h_max": _series,
                    "c_max": {"type": "number"}, "c0": {"type": "number"},
                    "c_target": {"type": "number"},
                },
            },
        },
        "sources": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "h0"],
                "properties": {"id": {"type": ["string", "integer"]}, "h0": _series,
                               "c_max": {"type": "number"}, "c0": {"type": "number"}},
            },
        },
        "links": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "from", "to", "length", "diameter", "roughness", "decay",
                             "q_min", "q_max"],
                "properties": {
                    "id": {"type": ["string", "integer"]},
                    "from": {"type": ["string", "integer"]}, "to": {"type": ["string", "integer"]},
                    "length": {"type": "number"}, "diameter": {"type": "number"},
                    "roughness": {"type": "number"}, "decay": {"type": "number"},
                    "segments": {"type": "integer"},
                    "q_min": _series, "q_max": _series,
                    "eta_min": _series, "eta_max": _series,
                },
            },
        },
    },
}


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Node:
    id: str
    elev: float
    demand: np.ndarray
    h_min: np.ndarray
    h_max: np.ndarray
    c_max: float = DEFAULT_NODE_CMAX
    c0: float = 0.0
    c_target: float = DEFAULT_TARGET


@dataclass(frozen=True)
class SourceNode:
    id: str
    h0: np.ndarray
    c_max: float = DEFAULT_SOURCE_CMAX
    c0: float = 0.0


@dataclass(frozen=True)
class Link:
    """Pipe from ``start`` (head end, i1) to ``end`` (tail end, i2)."""

    id: str
    start: int
    end: int
    length: float
    diameter: float
    roughness: float
    decay: float
    segments: int
    q_min: np.ndarray
    q_max: np.ndarray
    eta_min: np.ndarray
    eta_max: np.ndarray


@dataclass(frozen=True)
class NetworkGraph:
    demand_nodes: tuple[Node, ...]
    source_nodes: tuple[SourceNode, ...]
    links: tuple[Link, ...]
    n_t: int
    dt: float
    _explicit_eta: tuple = field(default=(), repr=False, compare=False)

    @property
    def n_n(self) -> int:
        return len(self.demand_nodes)

    @property
    def n_0(self) -> int:
        return len(self.source_nodes)

    @property
    def n_p(self) -> int:
        return len(self.links)

    def is_source(self, i: int) -> bool:
        return i >= self.n_n

    def node_id(self, i: int) -> str:
        return self.demand_nodes[i].id if i < self.n_n else self.source_nodes[i - self.n_n].id

    def c_max(self, i: int) -> float:
        return self.demand_nodes[i].c_max if i < self.n_n else self.source_nodes[i - self.n_n].c_max

    def c0(self, i: int) -> float:
        return self.demand_nodes[i].c0 if i < self.n_n else self.source_nodes[i - self.n_n].c0

    def head_fixed(self, i: int, k: int) -> float:
        return float(self.source_nodes[i - self.n_n].h0[k])

    @cached_property
    def links_in(self) -> tuple[tuple[int, ...], ...]:
        """``links_in[i]``: links whose reference direction enters node ``i``."""
        acc = [[] for _ in range(self.n_n + self.n_0)]
        for l, link in enumerate(self.links):
            acc[link.end].append(l)
        return tuple(tuple(a) for a in acc)

    @cached_property
    def links_out(self) -> tuple[tuple[int, ...], ...]:
        acc = [[] for _ in range(self.n_n + self.n_0)]
        for l, link in enumerate(self.links):
            acc[link.start].append(l)
        return tuple(tuple(a) for a in acc)

    @cached_property
    def demand(self) -> np.ndarray:
        return _frozen([n.demand for n in self.demand_nodes])

    @cached_property
    def elevations(self) -> np.ndarray:
        return _frozen([n.elev for n in self.demand_nodes])

    @cached_property
    def c_target(self) -> np.ndarray:
        return _frozen([n.c_target for n in self.demand_nodes])

    def incidence(self) -> np.ndarray:
        """Demand-node x link matrix with +1 where the link enters, -1 where it leaves."""
        E = np.zeros((self.n_n, self.n_p))
        for l, link in enumerate(self.links):
            if link.end < self.n_n:
                E[link.end, l] += 1.0
            if link.start < self.n_n:
                E[link.start, l] -= 1.0
        return E


def _series_value(raw, n_t: int, where: str) -> np.ndarray:
    if isinstance(raw, (int, float)):
        return np.full(n_t, float(raw))
    if len(raw) != n_t:
        raise NetworkError(f"expected {n_t} values, got {len(raw)}", where)
    return np.array(raw, dtype=float)


def _check(cond: bool, message: str, where: str) -> None:
    if not cond:
        raise NetworkError(message, where)


def network_from_dict(data: dict) -> NetworkGraph:
    """Validate a parsed network document and build the graph."""
    try:
        jsonschema.validate(data, NETWORK_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise NetworkError(exc.message, where) from None
    n_t = int(data["meta"]["n_t"])
    dt = float(data["meta"]["dt"])
    ids: dict[str, int] = {}

    def register(raw_id, where):
        key = str(raw_id)
        _check(key not in ids, f"duplicate id {key!r}", where)
        ids[key] = len(ids)
        return key

    nodes = []
    for idx, nd in enumerate(data["nodes"]):
        where = f"nodes[{idx}]"
        nid = register(nd["id"], where + ".id")
        demand = _series_value(nd["demand"], n_t, where + ".demand")
        h_min = _series_value(nd["h_min"], n_t, where + ".h_min")
        h_max = _series_value(nd["h_max"], n_t, where + ".h_max")
        _check(bool(np.all(demand >= 0)), "negative demand", where + ".demand")
        _check(bool(np.all(h_min <= h_max)), "h_min exceeds h_max", where + ".h_min")
        c_max = float(nd.get("c_max", DEFAULT_NODE_CMAX))
        c0 = float(nd.get("c0", 0.0))
        _check(c_max > 0, "c_max must be positive", where + ".c_max")
        _check(c0 >= 0, "c0 must be nonnegative", where + ".c0")
        nodes.append(Node(nid, float(nd["elev"]), _frozen(demand), _frozen(h_min), _frozen(h_max),
                          c_max, c0, float(nd.get("c_target", DEFAULT_TARGET))))
    sources = []
    for idx, sd in enumerate(data["sources"]):
        where = f"sources[{idx}]"
        sid = register(sd["id"], where + ".id")
        c_max = float(sd.get("c_max", DEFAULT_SOURCE_CMAX))
        c0 = float(sd.get("c0", 0.0))
        _check(c_max > 0, "c_max must be positive", where + ".c_max")
        _check(c0 >= 0, "c0 must be nonnegative", where + ".c0")
        sources.append(SourceNode(sid, _frozen(_series_value(sd["h0"], n_t, where + ".h0")), c_max, c0))

    n_n = len(nodes)
    index = {}
    for i, nd in enumerate(nodes):
        index[nd.id] = i
    for s, sd in enumerate(sources):
        index[sd.id] = n_n + s

    all_heads_max = [nd.h_max for nd in nodes] + [sd.h0 for sd in sources]
    all_heads_min = [nd.h_min for nd in nodes] + [sd.h0 for sd in sources]
    span = np.max(all_heads_max, axis=0) - np.min(all_heads_min, axis=0)

    links = []
    link_ids = set()
    explicit = []
    for idx, ld in enumerate(data["links"]):
        where = f"links[{idx}]"
        lid = str(ld["id"])
        _check(lid not in link_ids, f"duplicate id {lid!r}", where + ".id")
        link_ids.add(lid)
        start = index.get(str(ld["from"]))
        end = index.get(str(ld["to"]))
        _check(start is not None, f"unknown node id {ld['from']!r}", where + ".from")
        _check(end is not None, f"unknown node id {ld['to']!r}", where + ".to")
        _check(start != end, "link endpoints must differ", where)
        _check(start < n_n or end < n_n, "link joins two source nodes", where)
        length, diameter = float(ld["length"]), float(ld["diameter"])
        _check(length > 0, "length must be positive", where + ".length")
        _check(diameter > 0, "diameter must be positive", where + ".diameter")
        _check(float(ld["roughness"]) > 0, "roughness must be positive", where + ".roughness")
        _check(float(ld["decay"]) >= 0, "decay must be nonnegative", where + ".decay")
        segments = int(ld.get("segments", DEFAULT_SEGMENTS))
        _check(segments >= 1, "segments must be >= 1", where + ".segments")
        q_min = _series_value(ld["q_min"], n_t, where + ".q_min")
        q_max = _series_value(ld["q_max"], n_t, where + ".q_max")
        _check(bool(np.all(q_min <= q_max)), "q_min exceeds q_max", where + ".q_min")
        has_eta = "eta_min" in ld or "eta_max" in ld
        eta_min = _series_value(ld["eta_min"], n_t, where + ".eta_min") if "eta_min" in ld else -span
        eta_max = _series_value(ld["eta_max"], n_t, where + ".eta_max") if "eta_max" in ld else span
        _check(bool(np.all(eta_min <= 0) and np.all(eta_max >= 0)),
               "valve headloss bounds must bracket zero", where)
        explicit.append(has_eta)
        links.append(Link(lid, start, end, length, diameter, float(ld["roughness"]),
                          float(ld["decay"]), segments, _frozen(q_min), _frozen(q_max),
                          _frozen(eta_min), _frozen(eta_max)))
    return NetworkGraph(tuple(nodes), tuple(sources), tuple(links), n_t, dt, tuple(explicit))


def load_network(path) -> NetworkGraph:
    """Read and validate a network JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise NetworkError(f"cannot read file: {exc.strerror}", str(path)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"JSON parse error: {exc.msg}", f"{path}:{exc.lineno}:{exc.colno}") from None
    return network_from_dict(data)


def _plain(arr):
    a = np.asarray(arr, dtype=float)
    if a.size and np.all(a == a[0]):
        return float(a[0])
    return [float(v) for v in a]


def network_to_dict(net: NetworkGraph) -> dict:
    nodes = [{"id": n.id, "elev": n.elev, "demand": _plain(n.demand), "h_min": _plain(n.h_min),
              "h_max": _plain(n.h_max), "c_max": n.c_max, "c0": n.c0, "c_target": n.c_target}
             for n in net.demand_nodes]
    sources = [{"id": s.id, "h0": _plain(s.h0), "c_max": s.c_max, "c0": s.c0} for s in net.source_nodes]
    links = []
    explicit = net._explicit_eta or (True,) * net.n_p
    for link, has_eta in zip(net.links, explicit):
        d = {"id": link.id, "from": net.node_id(link.start), "to": net.node_id(link.end),
             "length": link.length, "diameter": link.diameter, "roughness": link.roughness,
             "decay": link.decay, "segments": link.segments,
             "q_min": _plain(link.q_min), "q_max": _plain(link.q_max)}
        if has_eta:
            d["eta_min"] = _plain(link.eta_min)
            d["eta_max"] = _plain(link.eta_max)
        links.append(d)
    return {"meta": {"n_t": net.n_t, "dt": net.dt}, "nodes": nodes, "sources": sources, "links": links}


def save_network(net: NetworkGraph, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2) + "\n", encoding="utf-8")


def with_initial_concentrations(net: NetworkGraph, c0) -> NetworkGraph:
    """Copy of ``net`` with node initial concentrations replaced (one value per node, all kinds)."""
    from dataclasses import replace
    c0 = np.asarray(c0, dtype=float)
    nodes = tuple(replace(n, c0=float(c0[i])) for i, n in enumerate(net.demand_nodes))
    sources = tuple(replace(s, c0=float(c0[net.n_n + j])) for j, s in enumerate(net.source_nodes))
    return replace(net, demand_nodes=nodes, source_nodes=sources)


@dataclass(frozen=True)
class ProblemConfig:
    n_v: int = 0
    n_b: int = 0
    m: int = 5
    eps_tol: float = 1e-2
    i_max: int = 10

    def validate(self, net: NetworkGraph) -> None:
        # one direction per link caps the budget at n_p
        if not 0 <= self.n_v <= net.n_p:
            raise ValueError(f"n_v={self.n_v} outside [0, {net.n_p}]")
        if not 0 <= self.n_b <= net.n_n:
            raise ValueError(f"n_b={self.n_b} outside [0, {net.n_n}]")
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive")
        if self.i_max < 1:
            raise ValueError("i_max must be at least 1")


def azp_weights(net: NetworkGraph) -> np.ndarray:
    """Per-demand-node pressure weights: incident pipe length share, divided by n_t."""
    incident = np.zeros(net.n_n)
    for link in net.links:
        for i in (link.start, link.end):
            if i < net.n_n:
                incident[i] += link.length
    return incident / (net.n_t * incident.sum())


def atd_weights(net: NetworkGraph) -> np.ndarray:
    """Demand-share weights ``d[i,k] / sum(d)`` for the target-deviation term."""
    d = np.asarray(net.demand, dtype=float)
    total = d.sum()
    if total <= 0:
        raise NetworkError("total demand is zero; target-deviation weights are undefined")
    return d / total


def problem_size(net: NetworkGraph) -> tuple[int, int, int]:
    """(continuous, binary, nonconvex) counts of the full MINLP."""
    jbar = sum(1 + link.segments for link in net.links)
    n_t, n_p, n_n, n_0 = net.n_t, net.n_p, net.n_n, net.n_0
    return (n_t * (8 * n_p + 4 * n_n + 2 * jbar + n_0),
            n_t * n_p + 2 * n_p + n_n,
            n_t * (2 * n_p + jbar))

"""Combined gas/power network graph and the global unknown-vector layout."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .gas import BAR, CouplingKind, GasConstants
from .powerflow import BusType, LoadProfile, check_slack_per_component


class NetworkError(ValueError):
    """Invalid topology or cross reference."""


class NodeKind(str, Enum):
    SOURCE = "source"
    SINK = "sink"
    INNER = "inner"


class EdgeKind(str, Enum):
    PIPE = "pipe"
    SHORT_PIPE = "short_pipe"
    VALVE = "valve"
    COMPRESSOR = "compressor"


@dataclass(frozen=True)
class TimeSeries:
    """Piecewise-linear series; constant outside the sampled range."""

    times: tuple  # s
    values: tuple

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("time series needs matching, non-empty times and values")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("time series times must be strictly increasing")

    @classmethod
    def constant(cls, value: float) -> "TimeSeries":
        return cls((0.0,), (float(value),))

    def __call__(self, t: float) -> float:
        if len(self.times) == 1:
            return self.values[0]
        return float(np.interp(t, self.times, self.values))

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) == 1


@dataclass(frozen=True)
class GasNode:
    """Gas node; ``boundary_flow`` is inflow at sources and outflow at sinks [m^3/s]."""

    id: str
    kind: NodeKind
    boundary_flow: TimeSeries | None = None
    coupling: CouplingKind | None = None  # per-node override

    def withdrawal(self, t: float) -> float:
        """Net flow leaving the network here (negative at sources)."""
        if self.boundary_flow is None:
            return 0.0
        value = self.boundary_flow(t)
        return -value if self.kind is NodeKind.SOURCE else value


@dataclass(frozen=True)
class GasEdge:
    id: str
    kind: EdgeKind
    from_node: str
    to_node: str
    length: float | None = None  # m
    diameter: float | None = None  # m
    roughness: float | None = None  # m
    cross_section: float | None = None  # m^2, non-pipes only

    @property
    def area(self) -> float | None:
        if self.kind is EdgeKind.PIPE:
            return math.pi * self.diameter**2 / 4.0
        return self.cross_section

    @property
    def is_pipe(self) -> bool:
        return self.kind is EdgeKind.PIPE


@dataclass(frozen=True)
class Network:
    gas_nodes: tuple
    gas_edges: tuple
    buses: tuple
    lines: tuple
    conversions: tuple
    constants: GasConstants = GasConstants()
    base_mva: float = 100.0
    load_profile: LoadProfile = LoadProfile()
    anchor_node: str | None = None
    anchor_pressure: float = 60.0 * BAR  # Pa
    incidence: dict = field(default_factory=dict, compare=False, repr=False)
    _node_map: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_node_map", {n.id: n for n in self.gas_nodes})

    def node(self, node_id: str) -> GasNode:
        return self._node_map[node_id]

    def degree(self, node_id: str) -> int:
        return len(self.incidence[node_id])

    @property
    def pipes(self):
        return tuple(e for e in self.gas_edges if e.is_pipe)

    def effective_coupling(self, node_id: str, kind: CouplingKind) -> CouplingKind:
        """Coupling rule actually used at a node for a run configured with ``kind``.

        Bernoulli needs a cross section on every incident edge; nodes touching
        an edge without one fall back to pressure equality.
        """
        node = self.node(node_id)
        if node.coupling is not None:
            kind = node.coupling
        kind = CouplingKind(kind)
        if kind is CouplingKind.BERNOULLI:
            for e_idx, _ in self.incidence[node_id]:
                if self.gas_edges[e_idx].area is None:
                    return CouplingKind.PRESSURE
        return kind


def inherit_cross_sections(nodes: Sequence[GasNode], edges: Sequence[GasEdge]) -> list:
    """Give inactive valves and compressors the cross section of their attached pipe.

    A compressor takes the pipe ending at its inlet, a valve the pipe
    starting at its outlet; in both cases that side must carry exactly one
    pipe.  Edges with an explicit cross section are left unchanged.
    """
    pipes_at = defaultdict(list)
    for e in edges:
        if e.is_pipe:
            pipes_at[e.from_node].append(e)
            pipes_at[e.to_node].append(e)
    out = []
    for e in edges:
        if e.kind in (EdgeKind.VALVE, EdgeKind.COMPRESSOR) and e.cross_section is None:
            side = e.from_node if e.kind is EdgeKind.COMPRESSOR else e.to_node
            attached = pipes_at.get(side, [])
            if len(attached) != 1:
                raise NetworkError(
                    f"{e.kind.value} {e.id}: expected exactly one pipe at node {side}, found {len(attached)}"
                )
            e = GasEdge(e.id, e.kind, e.from_node, e.to_node, cross_section=attached[0].area)
        out.append(e)
    return out


def build_network(scenario) -> Network:
    """Validate cross references and topology of a scenario and build the graph.

    ``scenario`` is a :class:`gaspower.io.scenario.ScenarioDescription` (any
    object with the same attributes works).
    """
    nodes = tuple(scenario.gas_nodes)
    node_ids = [n.id for n in nodes]
    if len(set(node_ids)) != len(node_ids):
        raise NetworkError("duplicate gas node id")
    node_set = set(node_ids)

    for e in scenario.gas_edges:
        for end in (e.from_node, e.to_node):
            if end not in node_set:
                raise NetworkError(f"edge {e.id} references unknown gas node {end}")
        if e.from_node == e.to_node:
            raise NetworkError(f"edge {e.id} is a self loop")
        if e.is_pipe:
            for name in ("length", "diameter", "roughness"):
                v = getattr(e, name)
                if v is None or not v > 0:
                    raise NetworkError(f"pipe {e.id}: {name} must be positive")
    edge_ids = [e.id for e in scenario.gas_edges]
    if len(set(edge_ids)) != len(edge_ids):
        raise NetworkError("duplicate gas edge id")
    edges = tuple(inherit_cross_sections(nodes, scenario.gas_edges))

    incidence = {nid: [] for nid in node_ids}
    for i, e in enumerate(edges):
        incidence[e.from_node].append((i, "from"))
        incidence[e.to_node].append((i, "to"))
    for n in nodes:
        if not incidence[n.id]:
            raise NetworkError(f"gas node {n.id} has no attached edge")
        if n.kind is NodeKind.INNER and n.boundary_flow is not None:
            raise NetworkError(f"inner node {n.id} must not carry a boundary flow")
        if n.kind is not NodeKind.INNER and n.boundary_flow is None:
            raise NetworkError(f"{n.kind.value} node {n.id} needs a boundary flow")
    _check_gas_sources(nodes, edges)

    buses = tuple(scenario.buses)
    bus_map = {b.id: b for b in buses}
    if len(bus_map) != len(buses):
        raise NetworkError("duplicate bus id")
    for ln in scenario.lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in bus_map:
                raise NetworkError(f"line {ln.id or ''} references unknown bus {end}")
    check_slack_per_component(buses, scenario.lines)

    node_map = {n.id: n for n in nodes}
    seen_nodes = set()
    for c in scenario.conversions:
        if c.gas_node not in node_map:
            raise NetworkError(f"conversion {c.id} references unknown gas node {c.gas_node}")
        if node_map[c.gas_node].kind is not NodeKind.SINK:
            raise NetworkError(f"conversion {c.id} must attach to a gas sink, {c.gas_node} is not")
        if c.bus not in bus_map:
            raise NetworkError(f"conversion {c.id} references unknown bus {c.bus}")
        if bus_map[c.bus].type is not BusType.SLACK:
            raise NetworkError(f"conversion {c.id} must attach to a slack bus, {c.bus} is not")
        if c.gas_node in seen_nodes:
            raise NetworkError(f"gas node {c.gas_node} carries more than one conversion edge")
        seen_nodes.add(c.gas_node)

    anchor = scenario.anchor_node
    if anchor is None:
        sources = [n.id for n in nodes if n.kind is NodeKind.SOURCE]
        anchor = sources[0] if sources else None
    elif anchor not in node_map:
        raise NetworkError(f"pressure anchor {anchor} is not a gas node")

    return Network(
        gas_nodes=nodes,
        gas_edges=edges,
        buses=buses,
        lines=tuple(scenario.lines),
        conversions=tuple(scenario.conversions),
        constants=scenario.constants,
        base_mva=scenario.base_mva,
        load_profile=scenario.load_profile,
        anchor_node=anchor,
        anchor_pressure=scenario.anchor_pressure,
        incidence=incidence,
    )


def _check_gas_sources(nodes, edges):
    parent = {n.id: n.id for n in nodes}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in edges:
        parent[find(e.from_node)] = find(e.to_node)
    with_source = {find(n.id) for n in nodes if n.kind is NodeKind.SOURCE}
    with_pipe = {find(e.from_node) for e in edges if e.is_pipe}
    for n in nodes:
        if find(n.id) not in with_source:
            raise NetworkError(f"gas component containing {n.id} is not connected to any source")
        if find(n.id) not in with_pipe:
            # without a pipe nothing stores gas and the pressure level is undetermined
            raise NetworkError(f"gas component containing {n.id} has no pipe")


# --------------------------------------------------------------------------
# unknown layout


@dataclass(frozen=True)
class PipeBlock:
    edge: int  # index into Network.gas_edges
    start: int
    cells: int

    @property
    def points(self) -> int:
        return self.cells + 1

    def rho(self, j: int) -> int:
        return self.start + 2 * j

    def q(self, j: int) -> int:
        return self.start + 2 * j + 1

    @property
    def stop(self) -> int:
        return self.start + 2 * self.points


@dataclass(frozen=True)
class UnknownLayout:
    """Positions of every unknown in the global vector.

    Pipe blocks interleave (rho, q) per grid point; non-pipe gas edges hold
    (rho_in, q_in, rho_out, q_out); buses hold (V, phi, P, Q); conversion
    edges hold their sink outflow.
    """

    pipe_blocks: tuple
    edge_starts: dict  # edge index -> start for non-pipe edges
    bus_start: int
    conv_start: int
    n: int
    unknown_counts: dict
    equation_counts: dict
    _pipe_by_edge: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_pipe_by_edge", {b.edge: b for b in self.pipe_blocks})

    def end_index(self, edge_idx: int, end: str) -> tuple[int, int]:
        """(rho, q) positions of the given end ("from"/"to") of a gas edge."""
        if edge_idx in self.edge_starts:
            s = self.edge_starts[edge_idx]
            return (s, s + 1) if end == "from" else (s + 2, s + 3)
        blk = self._pipe_by_edge[edge_idx]
        j = 0 if end == "from" else blk.cells
        return blk.rho(j), blk.q(j)

    def pipe_block(self, edge_idx: int) -> PipeBlock:
        return self._pipe_by_edge[edge_idx]

    def bus(self, i: int) -> int:
        return self.bus_start + 4 * i

    def conversion(self, i: int) -> int:
        return self.conv_start + i

    @property
    def n_gas(self) -> int:
        return self.bus_start

    @property
    def n_equations(self) -> int:
        return sum(self.equation_counts.values())


def cells_for(length: float, dx_target: float) -> int:
    return max(1, int(round(length / dx_target)))


def build_layout(network: Network, dx_target: float = 1000.0) -> UnknownLayout:
    if not dx_target > 0:
        raise ValueError("dx_target must be positive")
    pos = 0
    blocks = []
    edge_starts = {}
    scheme_eqs = 0
    for i, e in enumerate(network.gas_edges):
        if e.is_pipe:
            m = cells_for(e.length, dx_target)
            blk = PipeBlock(i, pos, m)
            blocks.append(blk)
            pos = blk.stop
            scheme_eqs += 2 * m
    n_pipe_unknowns = pos
    for i, e in enumerate(network.gas_edges):
        if not e.is_pipe:
            edge_starts[i] = pos
            pos += 4
    n_edge_unknowns = pos - n_pipe_unknowns
    bus_start = pos
    pos += 4 * len(network.buses)
    conv_start = pos
    pos += len(network.conversions)

    unknowns = {
        "pipe": n_pipe_unknowns,
        "non_pipe_edge": n_edge_unknowns,
        "bus": 4 * len(network.buses),
        "conversion": len(network.conversions),
    }
    node_eqs = sum(network.degree(n.id) for n in network.gas_nodes)
    equations = {
        "scheme": scheme_eqs,
        "edge_identity": 2 * len(edge_starts),
        "node": node_eqs,
        "power_flow": 2 * len(network.buses),
        "bus_spec": 2 * len(network.buses),
        "conversion": len(network.conversions),
    }
    if sum(equations.values()) != pos:
        raise NetworkError(
            f"system is not square: {sum(equations.values())} equations {equations} "
            f"vs {pos} unknowns {unknowns}"
        )
    return UnknownLayout(tuple(blocks), edge_starts, bus_start, conv_start, pos, unknowns, equations)

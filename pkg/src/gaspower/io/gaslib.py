"""GasLib network (.net) and nomination (.scn) import.

Only the element subset needed for passive transport networks is
understood: sources, sinks, inner nodes, pipes, short pipes and inactive
valves/compressor stations (both turned into short-pipe-like edges).  Any
other connection type is rejected.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import replace

from ..network import EdgeKind, GasEdge, GasNode, NetworkError, NodeKind, TimeSeries, inherit_cross_sections
from .scenario import ScenarioDescription, ScenarioError

LENGTH = {"m": 1.0, "km": 1e3, "mm": 1e-3, "cm": 1e-2}
FLOW = {
    "1000m_cube_per_hour": 1000.0 / 3600.0,
    "m_cube_per_hour": 1.0 / 3600.0,
    "m_cube_per_s": 1.0,
}

NODE_TAGS = {"source": NodeKind.SOURCE, "sink": NodeKind.SINK, "innode": NodeKind.INNER}
EDGE_TAGS = {
    "pipe": EdgeKind.PIPE,
    "shortPipe": EdgeKind.SHORT_PIPE,
    "valve": EdgeKind.VALVE,
    "compressorStation": EdgeKind.COMPRESSOR,
}


class GasLibError(ScenarioError):
    pass


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _child(elem, name):
    for c in elem:
        if _local(c.tag) == name:
            return c
    return None


def _measure(elem, name, table, where):
    c = _child(elem, name)
    if c is None:
        raise GasLibError(where, f"missing {name}")
    unit = c.get("unit", "")
    if unit not in table:
        raise GasLibError(where, f"unsupported unit {unit!r} for {name}")
    return float(c.get("value")) * table[unit]


def _parse(xml) -> ET.Element:
    try:
        if isinstance(xml, ET.Element):
            return xml
        if isinstance(xml, bytes):
            return ET.fromstring(xml)
        if isinstance(xml, str) and xml.lstrip().startswith("<"):
            return ET.fromstring(xml)
        return ET.parse(xml).getroot()
    except ET.ParseError as exc:
        raise GasLibError("", f"malformed XML: {exc}") from None


def import_gaslib(net_xml, nominations=None, roughness=None) -> ScenarioDescription:
    """Gas section of a scenario from a GasLib network document.

    ``nominations`` is an optional ``.scn`` document (or a dict node id ->
    flow in m^3/s) supplying the constant boundary flows; sinks without one
    withdraw nothing.  ``roughness`` [m] overrides the per-pipe values of
    the file.
    """
    root = _parse(net_xml)
    nodes, edges = [], []
    for section in root:
        name = _local(section.tag)
        if name == "nodes":
            for el in section:
                tag = _local(el.tag)
                if tag not in NODE_TAGS:
                    raise GasLibError(f"nodes/{el.get('id')}", f"unsupported node type {tag!r}")
                nodes.append((el.get("id"), NODE_TAGS[tag]))
        elif name == "connections":
            for el in section:
                tag = _local(el.tag)
                eid = el.get("id")
                if tag not in EDGE_TAGS:
                    raise GasLibError(f"connections/{eid}", f"unsupported connection type {tag!r}")
                kind = EDGE_TAGS[tag]
                frm, to = el.get("from"), el.get("to")
                if kind is EdgeKind.PIPE:
                    where = f"connections/{eid}"
                    length = _measure(el, "length", LENGTH, where)
                    diameter = _measure(el, "diameter", LENGTH, where)
                    rough = roughness if roughness is not None else _measure(el, "roughness", LENGTH, where)
                    edges.append(GasEdge(eid, kind, frm, to, length, diameter, rough))
                else:
                    edges.append(GasEdge(eid, kind, frm, to))
        # framework:information and similar metadata are inert

    flows = {}
    if nominations is not None:
        flows = nominations if isinstance(nominations, dict) else read_nominations(nominations)
    gas_nodes = []
    known = {nid for nid, _ in nodes}
    for nid in flows:
        if nid not in known:
            raise GasLibError(f"nominations/{nid}", "unknown node")
    for nid, kind in nodes:
        flow = None
        if kind is NodeKind.SINK:
            flow = TimeSeries.constant(flows.get(nid, 0.0))
        elif kind is NodeKind.SOURCE:
            flow = TimeSeries.constant(flows.get(nid, 0.0))
        elif nid in flows and flows[nid] != 0.0:
            raise GasLibError(f"nominations/{nid}", "flow nominated at an inner node")
        gas_nodes.append(GasNode(nid, kind, flow))
    try:
        edges = inherit_cross_sections(gas_nodes, edges)
    except NetworkError as exc:
        raise GasLibError("connections", str(exc)) from None
    return ScenarioDescription(gas_nodes=tuple(gas_nodes), gas_edges=tuple(edges), roughness=roughness or 8e-6)


def read_nominations(scn_xml) -> dict:
    """Constant flows [m^3/s] per node from a GasLib ``.scn`` document (magnitudes)."""
    root = _parse(scn_xml)
    flows = {}
    for el in root.iter():
        if _local(el.tag) != "node":
            continue
        nid = el.get("id")
        bounds = {}
        for c in el:
            if _local(c.tag) != "flow":
                continue
            unit = c.get("unit", "")
            if unit not in FLOW:
                raise GasLibError(f"nominations/{nid}", f"unsupported flow unit {unit!r}")
            bounds[c.get("bound", "both")] = float(c.get("value")) * FLOW[unit]
        if not bounds:
            continue
        if "both" in bounds:
            value = bounds["both"]
        elif bounds.get("lower") == bounds.get("upper"):
            value = bounds["lower"]
        else:
            raise GasLibError(f"nominations/{nid}", "only fixed nominations (lower == upper) are supported")
        flows[nid] = abs(value)
    return flows


def with_flows(sc: ScenarioDescription, flows: dict) -> ScenarioDescription:
    """Replace boundary flows [m^3/s] of the named source/sink nodes."""
    nodes = []
    for n in sc.gas_nodes:
        if n.id in flows:
            if n.kind is NodeKind.INNER:
                raise GasLibError(f"flows/{n.id}", "flow given for an inner node")
            n = replace(n, boundary_flow=TimeSeries.constant(flows[n.id]))
        nodes.append(n)
    missing = set(flows) - {n.id for n in sc.gas_nodes}
    if missing:
        raise GasLibError("flows", f"unknown gas nodes {sorted(missing)}")
    return replace(sc, gas_nodes=tuple(nodes))

"""Native scenario format.

A scenario is a YAML document.  Every physical quantity is written as a
string ``"<number> <unit>"`` (``"30 km"``, ``"60 bar"``, ``"0.01 pu"``);
bare numbers are only accepted for dimensionless values.  Parsing converts
to the internal units (m, Pa, m^3/s, s, MW, p.u., rad) and
:func:`serialize_scenario` writes those units back, so a parse/serialize
round trip is exact.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from ..conversion import ConversionEdge, ConversionFactors
from ..gas import BAR, CouplingKind, GasConstants
from ..network import EdgeKind, GasEdge, GasNode, NodeKind, TimeSeries
from ..powerflow import Bus, BusType, Line, LoadProfile
from ..solver import ConfigError, SolverConfig

FORMAT = "gaspower-scenario"
VERSION = 1
DEFAULT_ROUGHNESS = 8e-6  # m
DEFAULT_ANCHOR_PRESSURE = 60.0 * BAR


class ScenarioError(ValueError):
    """Invalid scenario document; ``path`` locates the offending entry."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# dimension -> unit -> factor to the internal unit (first entry is canonical)
UNITS = {
    "length": {"m": 1.0, "km": 1e3, "cm": 1e-2, "mm": 1e-3},
    "area": {"m2": 1.0, "m^2": 1.0, "cm2": 1e-4, "mm2": 1e-6},
    "pressure": {"Pa": 1.0, "bar": BAR, "kPa": 1e3, "MPa": 1e6},
    "flow": {"m3/s": 1.0, "m^3/s": 1.0, "m3/h": 1 / 3600, "1000m3/h": 1000 / 3600},
    "density": {"kg/m3": 1.0, "kg/m^3": 1.0},
    "temperature": {"K": 1.0},
    "inverse_pressure": {"1/bar": 1.0, "1/Pa": BAR},  # stored per bar
    "viscosity": {"kg/(m*s)": 1.0, "Pa*s": 1.0},
    "time": {"s": 1.0, "min": 60.0, "h": 3600.0},
    "power": {"MW": 1.0, "kW": 1e-3, "GW": 1e3},
    "reactive_power": {"MVAr": 1.0, "kVAr": 1e-3},
    "apparent_power": {"MVA": 1.0},
    "specific_energy": {"MJ/kg": 1.0, "kJ/kg": 1e-3},
    "volume_per_energy": {"m3/MJ": 1.0, "m^3/MJ": 1.0},
    "angle": {"rad": 1.0, "deg": math.pi / 180},
    "per_unit": {"pu": 1.0, "p.u.": 1.0},
}
CANONICAL = {dim: next(iter(table)) for dim, table in UNITS.items()}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s+(\S+(?:\s\S+)?)\s*$")


def parse_quantity(text, dimension: str, path: str = "") -> float:
    """Convert ``"<number> <unit>"`` to the internal unit of ``dimension``."""
    if not isinstance(text, str):
        raise ScenarioError(path, f"expected a quantity with unit ({dimension}), got {text!r}")
    m = _QUANTITY.match(text)
    if not m:
        raise ScenarioError(path, f"malformed quantity {text!r}")
    value, unit = float(m.group(1)), m.group(2)
    table = UNITS[dimension]
    if unit not in table:
        raise ScenarioError(path, f"unit {unit!r} does not measure {dimension} (use one of {', '.join(table)})")
    return value * table[unit]


def format_quantity(value: float, dimension: str) -> str:
    return f"{float(value)!r} {CANONICAL[dimension]}"


# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioDescription:
    name: str = ""
    constants: GasConstants = GasConstants()
    roughness: float = DEFAULT_ROUGHNESS
    gas_nodes: tuple = ()
    gas_edges: tuple = ()
    anchor_node: str | None = None
    anchor_pressure: float = DEFAULT_ANCHOR_PRESSURE
    base_mva: float = 100.0
    load_profile: LoadProfile = LoadProfile()
    buses: tuple = ()
    lines: tuple = ()
    factors: ConversionFactors = ConversionFactors()
    conversions: tuple = ()
    solver: SolverConfig = SolverConfig()
    coupling: CouplingKind = CouplingKind.PRESSURE
    # raw conversion overrides, kept for lossless serialization
    conversion_overrides: tuple = field(default=(), compare=False, repr=False)


def load_schema() -> dict:
    return json.loads(resources.files("gaspower").joinpath("data/scenario.schema.json").read_text())


def _schema_error_path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def parse_scenario(document) -> ScenarioDescription:
    """Validate and convert a scenario document (dict or YAML text).

    Omitted constants take the benchmark defaults (gas constants, pipe
    roughness 8e-6 m, viscosity 1e-5 kg/(m s), efficiencies 0.4/0.8, lower
    heating value 40 MJ/kg, upper = 1.11 * lower).  Sinks without a flow
    entry withdraw nothing.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise ScenarioError("", f"not valid YAML: {exc}") from None
    if not isinstance(document, dict):
        raise ScenarioError("", "scenario document must be a mapping")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ScenarioError(_schema_error_path(err), err.message)

    const_doc = document.get("constants", {})
    q = lambda d, key, dim, default, path: parse_quantity(d[key], dim, f"{path}/{key}") if key in d else default
    base = GasConstants()
    try:
        constants = GasConstants(
            rho0=q(const_doc, "rho0", "density", base.rho0, "constants"),
            p0=q(const_doc, "p0", "pressure", base.p0 * BAR, "constants") / BAR,
            z0=float(const_doc.get("z0", base.z0)),
            T0=q(const_doc, "T0", "temperature", base.T0, "constants"),
            T=q(const_doc, "T", "temperature", base.T, "constants"),
            alpha=q(const_doc, "alpha", "inverse_pressure", base.alpha, "constants"),
            eta=q(const_doc, "viscosity", "viscosity", base.eta, "constants"),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError("constants", str(exc)) from None
    roughness = q(const_doc, "roughness", "length", DEFAULT_ROUGHNESS, "constants")

    gas = document["gas"]
    nodes = []
    for i, nd in enumerate(gas["nodes"]):
        path = f"gas/nodes/{i}"
        kind = NodeKind(nd["kind"])
        flow = None
        if "flow" in nd:
            if kind is NodeKind.INNER:
                raise ScenarioError(path, "inner nodes take no boundary flow")
            flow = _parse_series(nd["flow"], f"{path}/flow")
        elif kind is NodeKind.SINK:
            flow = TimeSeries.constant(0.0)
        elif kind is NodeKind.SOURCE:
            raise ScenarioError(path, "source node needs a flow")
        coupling = CouplingKind(nd["coupling"]) if "coupling" in nd else None
        nodes.append(GasNode(nd["id"], kind, flow, coupling))

    edges = []
    for i, ed in enumerate(gas["edges"]):
        path = f"gas/edges/{i}"
        kind = EdgeKind(ed["kind"])
        if kind is EdgeKind.PIPE:
            for key in ("length", "diameter"):
                if key not in ed:
                    raise ScenarioError(path, f"pipe needs {key}")
            length = parse_quantity(ed["length"], "length", f"{path}/length")
            diameter = parse_quantity(ed["diameter"], "length", f"{path}/diameter")
            rough = q(ed, "roughness", "length", roughness, path)
            for key, v in (("length", length), ("diameter", diameter), ("roughness", rough)):
                if not v > 0:
                    raise ScenarioError(f"{path}/{key}", "must be positive")
            edges.append(GasEdge(ed["id"], kind, ed["from"], ed["to"], length, diameter, rough))
        else:
            cs = q(ed, "cross_section", "area", None, path)
            if cs is not None and not cs > 0:
                raise ScenarioError(f"{path}/cross_section", "must be positive")
            edges.append(GasEdge(ed["id"], kind, ed["from"], ed["to"], cross_section=cs))

    anchor = gas.get("anchor", {})
    anchor_node = anchor.get("node")
    anchor_pressure = q(anchor, "pressure", "pressure", DEFAULT_ANCHOR_PRESSURE, "gas/anchor")
    if not anchor_pressure > 0:
        raise ScenarioError("gas/anchor/pressure", "must be positive")

    power = document.get("power", {})
    base_mva = q(power, "base_mva", "apparent_power", 100.0, "power")
    lp = power.get("load_profile", {})
    profile = LoadProfile(
        base=float(lp.get("base", 0.9)),
        amplitude=float(lp.get("amplitude", 0.4)),
        period=q(lp, "period", "time", 86400.0, "power/load_profile"),
    )
    buses = []
    for i, bd in enumerate(power.get("buses", [])):
        path = f"power/buses/{i}"
        buses.append(Bus(
            id=str(bd["id"]),
            type=BusType(bd["type"]),
            p_load=q(bd, "p_load", "power", 0.0, path),
            q_load=q(bd, "q_load", "reactive_power", 0.0, path),
            p_gen=q(bd, "p_gen", "power", 0.0, path),
            q_gen=q(bd, "q_gen", "reactive_power", 0.0, path),
            g_shunt=q(bd, "g_shunt", "power", 0.0, path),
            b_shunt=q(bd, "b_shunt", "reactive_power", 0.0, path),
            v_set=q(bd, "voltage", "per_unit", 1.0, path),
            angle=q(bd, "angle", "angle", 0.0, path),
        ))
    lines = []
    for i, ld in enumerate(power.get("lines", [])):
        path = f"power/lines/{i}"
        lines.append(Line(
            from_bus=str(ld["from"]),
            to_bus=str(ld["to"]),
            r=parse_quantity(ld["r"], "per_unit", f"{path}/r"),
            x=parse_quantity(ld["x"], "per_unit", f"{path}/x"),
            b=q(ld, "b", "per_unit", 0.0, path),
            tap=float(ld.get("tap", 0.0)),
            shift=q(ld, "shift", "angle", 0.0, path),
            id=ld.get("id"),
        ))

    cpl = document.get("coupling", {})
    fd = cpl.get("factors", {})
    factors = ConversionFactors(
        eta_gtp=float(fd.get("eta_gtp", 0.4)),
        eta_ptg=float(fd.get("eta_ptg", 0.8)),
        lower_heating_value=q(fd, "lower_heating_value", "specific_energy", 40.0, "coupling/factors"),
        upper_heating_ratio=float(fd.get("upper_heating_ratio", 1.11)),
    )
    conversions, overrides = [], []
    for i, cd in enumerate(cpl.get("edges", [])):
        path = f"coupling/edges/{i}"
        e_gtp = q(cd, "e_gtp", "volume_per_energy", None, path)
        e_ptg = q(cd, "e_ptg", "volume_per_energy", None, path)
        overrides.append((e_gtp, e_ptg))
        try:
            conversions.append(ConversionEdge(
                id=cd.get("id", f"conv_{cd['gas_node']}"),
                gas_node=cd["gas_node"],
                bus=str(cd["bus"]),
                e_gtp=e_gtp if e_gtp is not None else factors.e_gtp(constants.rho0),
                e_ptg=e_ptg if e_ptg is not None else factors.e_ptg(constants.rho0),
                epsilon=q(cd, "epsilon", "power", 1.0, path),
            ))
        except ValueError as exc:
            raise ScenarioError(path, str(exc)) from None

    sd = document.get("solver", {})
    try:
        solver = SolverConfig(
            horizon=q(sd, "horizon", "time", 86400.0, "solver"),
            dt=q(sd, "dt", "time", 900.0, "solver"),
            dx=q(sd, "dx", "length", 1000.0, "solver"),
            newton_tol=float(sd.get("tol", 1e-8)),
            max_newton_iters=int(sd.get("max_newton_iters", 50)),
            max_halvings=int(sd.get("max_halvings", 30)),
        )
    except ConfigError as exc:
        raise ScenarioError("solver", str(exc)) from None

    return ScenarioDescription(
        name=document.get("name", ""),
        constants=constants,
        roughness=roughness,
        gas_nodes=tuple(nodes),
        gas_edges=tuple(edges),
        anchor_node=anchor_node,
        anchor_pressure=anchor_pressure,
        base_mva=base_mva,
        load_profile=profile,
        buses=tuple(buses),
        lines=tuple(lines),
        factors=factors,
        conversions=tuple(conversions),
        solver=solver,
        coupling=CouplingKind(sd.get("coupling", "pressure")),
        conversion_overrides=tuple(overrides),
    )


def _parse_series(doc, path) -> TimeSeries:
    if isinstance(doc, str):
        return TimeSeries.constant(parse_quantity(doc, "flow", path))
    times = [parse_quantity(t, "time", f"{path}/times/{i}") for i, t in enumerate(doc["times"])]
    values = [parse_quantity(v, "flow", f"{path}/values/{i}") for i, v in enumerate(doc["values"])]
    try:
        return TimeSeries(tuple(times), tuple(values))
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from None


def _series_doc(ts: TimeSeries):
    if len(ts.times) == 1 and ts.times[0] == 0.0:
        return format_quantity(ts.values[0], "flow")
    return {
        "times": [format_quantity(t, "time") for t in ts.times],
        "values": [format_quantity(v, "flow") for v in ts.values],
    }


def scenario_to_document(sc: ScenarioDescription) -> dict:
    """Inverse of :func:`parse_scenario` with every default written out."""
    c = sc.constants
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "name": sc.name,
        "constants": {
            "rho0": format_quantity(c.rho0, "density"),
            "p0": format_quantity(c.p0 * BAR, "pressure"),
            "z0": c.z0,
            "T0": format_quantity(c.T0, "temperature"),
            "T": format_quantity(c.T, "temperature"),
            "alpha": format_quantity(c.alpha, "inverse_pressure"),
            "viscosity": format_quantity(c.eta, "viscosity"),
            "roughness": format_quantity(sc.roughness, "length"),
        },
    }
    nodes = []
    for n in sc.gas_nodes:
        nd = {"id": n.id, "kind": n.kind.value}
        if n.boundary_flow is not None:
            nd["flow"] = _series_doc(n.boundary_flow)
        if n.coupling is not None:
            nd["coupling"] = n.coupling.value
        nodes.append(nd)
    edges = []
    for e in sc.gas_edges:
        ed = {"id": e.id, "kind": e.kind.value, "from": e.from_node, "to": e.to_node}
        if e.is_pipe:
            ed["length"] = format_quantity(e.length, "length")
            ed["diameter"] = format_quantity(e.diameter, "length")
            ed["roughness"] = format_quantity(e.roughness, "length")
        elif e.cross_section is not None:
            ed["cross_section"] = format_quantity(e.cross_section, "area")
        edges.append(ed)
    gas = {"nodes": nodes, "edges": edges, "anchor": {"pressure": format_quantity(sc.anchor_pressure, "pressure")}}
    if sc.anchor_node is not None:
        gas["anchor"]["node"] = sc.anchor_node
    doc["gas"] = gas

    lp = sc.load_profile
    doc["power"] = {
        "base_mva": format_quantity(sc.base_mva, "apparent_power"),
        "load_profile": {"base": lp.base, "amplitude": lp.amplitude, "period": format_quantity(lp.period, "time")},
        "buses": [
            {
                "id": b.id,
                "type": b.type.value,
                "p_load": format_quantity(b.p_load, "power"),
                "q_load": format_quantity(b.q_load, "reactive_power"),
                "p_gen": format_quantity(b.p_gen, "power"),
                "q_gen": format_quantity(b.q_gen, "reactive_power"),
                "g_shunt": format_quantity(b.g_shunt, "power"),
                "b_shunt": format_quantity(b.b_shunt, "reactive_power"),
                "voltage": format_quantity(b.v_set, "per_unit"),
                "angle": format_quantity(b.angle, "angle"),
            }
            for b in sc.buses
        ],
        "lines": [
            {
                **({"id": ln.id} if ln.id is not None else {}),
                "from": ln.from_bus,
                "to": ln.to_bus,
                "r": format_quantity(ln.r, "per_unit"),
                "x": format_quantity(ln.x, "per_unit"),
                "b": format_quantity(ln.b, "per_unit"),
                "tap": ln.tap,
                "shift": format_quantity(ln.shift, "angle"),
            }
            for ln in sc.lines
        ],
    }
    f = sc.factors
    conv_docs = []
    overrides = sc.conversion_overrides or ((None, None),) * len(sc.conversions)
    for cv, (og, op) in zip(sc.conversions, overrides):
        cd = {"id": cv.id, "gas_node": cv.gas_node, "bus": cv.bus,
              "epsilon": format_quantity(cv.epsilon, "power")}
        if og is not None:
            cd["e_gtp"] = format_quantity(og, "volume_per_energy")
        if op is not None:
            cd["e_ptg"] = format_quantity(op, "volume_per_energy")
        conv_docs.append(cd)
    doc["coupling"] = {
        "factors": {
            "eta_gtp": f.eta_gtp,
            "eta_ptg": f.eta_ptg,
            "lower_heating_value": format_quantity(f.lower_heating_value, "specific_energy"),
            "upper_heating_ratio": f.upper_heating_ratio,
        },
        "edges": conv_docs,
    }
    s = sc.solver
    doc["solver"] = {
        "horizon": format_quantity(s.horizon, "time"),
        "dt": format_quantity(s.dt, "time"),
        "dx": format_quantity(s.dx, "length"),
        "tol": s.newton_tol,
        "max_newton_iters": s.max_newton_iters,
        "max_halvings": s.max_halvings,
        "coupling": sc.coupling.value,
    }
    return doc


def serialize_scenario(sc: ScenarioDescription) -> str:
    return yaml.safe_dump(scenario_to_document(sc), sort_keys=False, default_flow_style=None, width=100)


def load_scenario(path) -> ScenarioDescription:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(str(path), f"cannot read scenario: {exc.strerror}") from None
    return parse_scenario(text)


def save_scenario(sc: ScenarioDescription, path) -> None:
    Path(path).write_text(serialize_scenario(sc))


def with_solver(sc: ScenarioDescription, **changes) -> ScenarioDescription:
    """Copy of ``sc`` with selected :class:`SolverConfig` fields replaced."""
    return replace(sc, solver=replace(sc.solver, **changes))


def bundled_scenario(name: str = "toy") -> ScenarioDescription:
    res = resources.files("gaspower").joinpath(f"data/{name}.yaml")
    if not res.is_file():
        raise ScenarioError("", f"no bundled scenario named {name!r}")
    return parse_scenario(res.read_text())

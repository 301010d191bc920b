"""The coupled gaslib-134 / IEEE 300-bus benchmark and scenario merging.

The upstream network files are not bundled; :func:`benchmark_scenario`
combines user-supplied copies with the benchmark's boundary flows and
conversion table.
"""

from __future__ import annotations

from dataclasses import replace

from .conversion import ConversionEdge, ConversionFactors
from .io.gaslib import import_gaslib, with_flows
from .io.matpower import import_matpower
from .io.scenario import DEFAULT_ROUGHNESS, ScenarioDescription, ScenarioError

# power bus -> gas sink hosting the conversion plant
CONVERSION_TABLE = (
    ("213", "node_ld31"),
    ("221", "node_ld24"),
    ("230", "node_ld13"),
    ("7001", "node_ld36"),
    ("7017", "node_ld2"),
    ("7024", "node_ld12"),
    ("7039", "node_ld42"),
    ("7057", "node_ld6"),
    ("7061", "node_ld29"),
    ("7071", "node_ld10"),
)

# m^3/s
INFLOW = {"node_1": 58.993631, "node_20": 190.815287, "node_80": 61.866242}
OUTFLOW = {
    "node_ld1": 0.0, "node_ld3": 0.0, "node_ld4": 0.121019, "node_ld5": 0.0,
    "node_ld7": 1.490446, "node_ld8": 2.089172, "node_ld9": 0.0, "node_ld11": 5.490446,
    "node_ld14": 0.452229, "node_ld15": 0.280255, "node_ld16": 0.076433, "node_ld17": 4.617834,
    "node_ld18": 4.617834, "node_ld19": 0.802548, "node_ld20": 0.445860, "node_ld21": 0.286624,
    "node_ld22": 7.592357, "node_ld23": 0.082803, "node_ld25": 0.802548, "node_ld26": 0.0,
    "node_ld27": 0.012739, "node_ld28": 0.0, "node_ld30": 1.426752, "node_ld32": 0.0,
    "node_ld33": 1.101911, "node_ld34": 0.0, "node_ld35": 0.0, "node_ld37": 7.732484,
    "node_ld38": 0.0, "node_ld39": 0.0, "node_ld40": 7.732484, "node_ld41": 1.528662,
    "node_ld43": 0.0, "node_ld44": 0.0, "node_ld45": 0.0,
}


def merge_scenario(gas: ScenarioDescription, power: ScenarioDescription, table, *,
                   factors: ConversionFactors = ConversionFactors(), epsilon: float = 1.0,
                   name: str = "") -> ScenarioDescription:
    """Gas section of ``gas`` + power section of ``power`` + conversion plants.

    ``table`` lists (bus id, gas node id) pairs; each becomes a conversion
    edge with factors derived from ``factors`` and the gas constants.
    """
    rho0 = gas.constants.rho0
    conversions = []
    for i, (bus, node) in enumerate(table):
        try:
            conversions.append(ConversionEdge(f"conv_{node}", node, str(bus), factors.e_gtp(rho0),
                                              factors.e_ptg(rho0), epsilon))
        except ValueError as exc:
            raise ScenarioError(f"coupling/{i}", str(exc)) from None
    return replace(
        gas,
        name=name or gas.name,
        base_mva=power.base_mva,
        load_profile=power.load_profile,
        buses=power.buses,
        lines=power.lines,
        factors=factors,
        conversions=tuple(conversions),
        conversion_overrides=((None, None),) * len(conversions),
    )


def benchmark_scenario(net_xml, case, *, anchor_pressure: float | None = None) -> ScenarioDescription:
    """Assemble the coupled benchmark from a gaslib-134 network file and the IEEE 300 case.

    Pipe roughness is set to the benchmark value; valve and compressor are
    inactive connectors with inherited cross sections.  Sinks absent from
    the outflow table (conversion sinks included) have no fixed withdrawal.
    """
    gas = import_gaslib(net_xml, roughness=DEFAULT_ROUGHNESS)
    gas = with_flows(gas, {**INFLOW, **OUTFLOW})
    if anchor_pressure is not None:
        gas = replace(gas, anchor_pressure=anchor_pressure)
    power = import_matpower(case, slack_buses=[b for b, _ in CONVERSION_TABLE])
    return merge_scenario(gas, power, CONVERSION_TABLE, name="gaslib134-ieee300")

"""Scenario format, importers, result files and the coupling comparison."""

import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest
import yaml
from conftest import gaslib_xml
from hypothesis import given, settings
from hypothesis import strategies as st

from gaspower.benchmark import CONVERSION_TABLE, INFLOW, OUTFLOW, benchmark_scenario, merge_scenario
from gaspower.gas import CouplingKind
from gaspower.io import ScenarioError, bundled_scenario, load_scenario, parse_scenario, save_scenario, serialize_scenario
from gaspower.io.gaslib import GasLibError, import_gaslib, read_nominations
from gaspower.io.matpower import MatpowerError, bus_type_counts, import_matpower, read_case
from gaspower.io.results import (
    FLOW_BINS,
    ResultsError,
    ResultSet,
    compare_couplings,
    flow_totals,
    from_simulation,
    read_results,
    summary,
    write_results,
)
from gaspower.io.scenario import format_quantity, parse_quantity
from gaspower.network import EdgeKind, NodeKind, build_network
from gaspower.powerflow import BusType

MINIMAL = {
    "format": "gaspower-scenario",
    "version": 1,
    "gas": {
        "nodes": [{"id": "a", "kind": "source", "flow": "2 m3/s"}, {"id": "b", "kind": "sink", "flow": "2 m3/s"}],
        "edges": [{"id": "p", "kind": "pipe", "from": "a", "to": "b", "length": "10 km", "diameter": "0.5 m"}],
    },
}


# ---------------------------------------------------------------- native format


def test_minimal_document_gets_defaults():
    sc = parse_scenario(MINIMAL)
    assert sc.constants.alpha == -0.00224
    assert sc.roughness == 8e-6
    assert sc.constants.eta == 1e-5
    assert sc.factors.eta_gtp == 0.4 and sc.factors.eta_ptg == 0.8
    assert sc.factors.lower_heating_value == 40.0
    assert sc.factors.upper_heating_value == pytest.approx(44.4)
    (pipe,) = sc.gas_edges
    assert pipe.length == 10_000.0 and pipe.roughness == 8e-6
    assert sc.anchor_node is None and sc.anchor_pressure == pytest.approx(60e5)
    assert build_network(sc).anchor_node == "a"


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d["gas"]["edges"][0].update(length="10 kg"), "gas/edges/0/length"),
        (lambda d: d["gas"]["edges"][0].update(diameter="-0.5 m"), "gas/edges/0/diameter"),
        (lambda d: d["gas"]["nodes"][0].update(kind="well"), "gas/nodes/0/kind"),
        (lambda d: d.update(version=7), "version"),
    ],
)
def test_invalid_documents_name_the_path(mutate, path):
    doc = json.loads(json.dumps(MINIMAL))
    mutate(doc)
    with pytest.raises(ScenarioError) as info:
        parse_scenario(doc)
    assert info.value.path == path


def test_quantities_and_units():
    assert parse_quantity("30 km", "length") == 30_000.0
    assert parse_quantity("15 min", "time") == 900.0
    assert parse_quantity("60 bar", "pressure") == 6e6
    with pytest.raises(ScenarioError):
        parse_quantity("30", "length")
    with pytest.raises(ScenarioError):
        parse_quantity("30 bar", "length")


@given(st.floats(min_value=-1e12, max_value=1e12, allow_nan=False))
@settings(max_examples=200)
def test_quantity_formatting_is_lossless(v):
    assert parse_quantity(format_quantity(v, "length"), "length") == v


def test_toy_round_trip(toy_scenario, tmp_path):
    text = serialize_scenario(toy_scenario)
    assert parse_scenario(text) == toy_scenario
    save_scenario(toy_scenario, tmp_path / "toy.yaml")
    assert load_scenario(tmp_path / "toy.yaml") == toy_scenario
    assert serialize_scenario(parse_scenario(text)) == text


def test_conversion_table_round_trip():
    doc = json.loads(json.dumps(MINIMAL))
    doc["gas"]["nodes"].append({"id": "node_ld36", "kind": "sink"})
    doc["gas"]["edges"].append({"id": "q", "kind": "short_pipe", "from": "b", "to": "node_ld36"})
    doc["power"] = {"buses": [{"id": "7001", "type": "slack", "voltage": "1 pu"}]}
    doc["coupling"] = {"edges": [{"id": "c", "gas_node": "node_ld36", "bus": "7001"}]}
    sc = parse_scenario(doc)
    again = parse_scenario(serialize_scenario(sc))
    assert again == sc
    (conv,) = again.conversions
    assert (conv.bus, conv.gas_node) == ("7001", "node_ld36")
    assert yaml.safe_load(serialize_scenario(sc))["coupling"]["edges"][0]["bus"] == "7001"


def test_bundled_toy_matches_fixture_description():
    sc = bundled_scenario("toy")
    assert sc.solver.dt == 900.0 and sc.solver.horizon == 86_400.0
    with pytest.raises(ScenarioError):
        bundled_scenario("nope")


# ---------------------------------------------------------------- gaslib


def test_one_pipe_document():
    xml = gaslib_xml([("a", "source"), ("b", "sink")], [("pipe", "p", "a", "b", 12.5, 600)])
    sc = import_gaslib(xml)
    (pipe,) = sc.gas_edges
    assert pipe.kind is EdgeKind.PIPE
    assert pipe.length == pytest.approx(12_500.0)
    assert pipe.diameter == pytest.approx(0.6)
    assert pipe.roughness == pytest.approx(1.2e-5)
    assert pipe.area == pytest.approx(math.pi * 0.36 / 4)
    assert import_gaslib(xml, roughness=8e-6).gas_edges[0].roughness == 8e-6


def test_connector_inherits_single_pipe_cross_section():
    xml = gaslib_xml(
        [("a", "source"), ("m", "innode"), ("n", "innode"), ("b", "sink")],
        [("pipe", "p", "a", "m", 5, 700), ("compressorStation", "cs", "m", "n", 0, 0),
         ("valve", "v", "n", "b", 0, 0), ("pipe", "q", "b", "c", 5, 400)],
    )
    xml = xml.replace('<sink id="b"/>', '<innode id="b"/><sink id="c"/>')
    edges = {e.id: e for e in import_gaslib(xml).gas_edges}
    assert edges["cs"].kind is EdgeKind.COMPRESSOR and edges["v"].kind is EdgeKind.VALVE
    assert edges["cs"].cross_section == pytest.approx(math.pi * 0.49 / 4)
    assert edges["v"].cross_section == pytest.approx(math.pi * 0.16 / 4)


def test_compressor_fed_by_two_pipes_rejected():
    xml = gaslib_xml(
        [("a", "source"), ("r", "source"), ("m", "innode"), ("b", "sink")],
        [("pipe", "p1", "a", "m", 5, 700), ("pipe", "p2", "r", "m", 5, 700),
         ("compressorStation", "cs", "m", "b", 0, 0)],
    )
    with pytest.raises(GasLibError, match="exactly one pipe"):
        import_gaslib(xml)


@pytest.mark.parametrize("kind", ["resistor", "controlValve"])
def test_unsupported_elements_rejected(kind):
    xml = gaslib_xml([("a", "source"), ("b", "sink")], [(kind, "r", "a", "b", 0, 0)])
    with pytest.raises(GasLibError, match="unsupported"):
        import_gaslib(xml)


def test_missing_geometry_and_bad_xml():
    xml = gaslib_xml([("a", "source"), ("b", "sink")], [("pipe", "p", "a", "b", 1, 100)])
    with pytest.raises(GasLibError, match="missing diameter"):
        import_gaslib(xml.replace('<diameter unit="mm" value="100"/>', ""))
    with pytest.raises(GasLibError, match="malformed"):
        import_gaslib("<network><oops></network>")


SCN = """<?xml version="1.0"?>
<boundaryValue xmlns="http://gaslib.zib.de/Gas">
 <scenario id="s">
  <node type="entry" id="a"><flow bound="lower" value="36" unit="1000m_cube_per_hour"/>
                            <flow bound="upper" value="36" unit="1000m_cube_per_hour"/></node>
  <node type="exit" id="b"><flow bound="both" value="-7.2" unit="1000m_cube_per_hour"/></node>
 </scenario>
</boundaryValue>"""


def test_nominations():
    assert read_nominations(SCN) == {"a": pytest.approx(10.0), "b": pytest.approx(2.0)}
    xml = gaslib_xml([("a", "source"), ("b", "sink"), ("c", "sink")],
                     [("pipe", "p", "a", "b", 1, 100), ("pipe", "q", "a", "c", 1, 100)])
    sc = import_gaslib(xml, nominations=SCN)
    flows = {n.id: n.boundary_flow(0.0) for n in sc.gas_nodes}
    assert flows == {"a": pytest.approx(10.0), "b": pytest.approx(2.0), "c": 0.0}
    with pytest.raises(GasLibError, match="fixed"):
        read_nominations(SCN.replace('bound="upper" value="36"', 'bound="upper" value="40"'))
    with pytest.raises(GasLibError, match="unknown"):
        import_gaslib(xml, nominations={"zz": 1.0})


def test_import_is_pure(synthetic_benchmark_xml):
    assert import_gaslib(synthetic_benchmark_xml) == import_gaslib(synthetic_benchmark_xml.encode())


# ---------------------------------------------------------------- matpower

TWO_BUS_CASE = """function mpc = two
mpc.version = '2';
mpc.baseMVA = 100;
%  bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
  1 3 0  0  0 0 1 1.02 0 230 1 1.1 0.9;
  2 1 50 20 0 5 1 1.00 -3 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 300 -300 1.02 100 1 250 10;
];
mpc.branch = [
  1 2 0.0123 0.0987 0.0456 250 250 250 0.975 1.5 1;
];
"""


def test_two_bus_case_parsed_exactly():
    sc = import_matpower(TWO_BUS_CASE)
    (line,) = sc.lines
    assert (line.r, line.x, line.b) == (0.0123, 0.0987, 0.0456)
    assert line.tap == 0.975
    assert line.shift == math.radians(1.5)
    b1, b2 = sc.buses
    assert b1.type is BusType.SLACK and b1.v_set == 1.02
    assert (b2.p_load, b2.q_load, b2.b_shunt) == (50.0, 20.0, 5.0)
    assert b2.angle == math.radians(-3.0)


def test_matpower_errors():
    with pytest.raises(MatpowerError, match="malformed row"):
        read_case(TWO_BUS_CASE.replace("2 1 50 20", "2 1 5x0 20"))
    with pytest.raises(MatpowerError, match="bus type"):
        import_matpower(TWO_BUS_CASE.replace("2 1 50 20", "2 4 50 20"))
    with pytest.raises(MatpowerError, match="columns"):
        read_case(TWO_BUS_CASE.replace("1 2 0.0123 0.0987 0.0456 250 250 250 0.975 1.5 1;", "1 2 0.01 0.1;"))
    with pytest.raises(MatpowerError, match="unknown buses"):
        import_matpower(TWO_BUS_CASE, slack_buses=["9"])


def test_ieee300_bus_types(case300_text):
    counts = bus_type_counts(import_matpower(case300_text))
    assert (counts[BusType.SLACK], counts[BusType.PV], counts[BusType.PQ]) == (1, 68, 231)
    modified = import_matpower(case300_text, slack_buses=[b for b, _ in CONVERSION_TABLE])
    counts = bus_type_counts(modified)
    assert (counts[BusType.SLACK], counts[BusType.PV], counts[BusType.PQ]) == (10, 59, 231)
    assert len(modified.buses) == 300


# ---------------------------------------------------------------- results


@pytest.fixture(scope="module")
def toy_results(toy_runs):
    return {k: from_simulation(r, "full") for k, r in toy_runs.items()}


def test_empty_conversion_set(tmp_path):
    rs = ResultSet(np.array([0.0, 900.0]), [], np.zeros((2, 0)), np.zeros((2, 0)), np.zeros((2, 0)))
    write_results(rs, tmp_path)
    for name in ("pressure.csv", "flow.csv", "power.csv"):
        assert (tmp_path / name).read_text().splitlines()[0] == "time_s,time_h"
    totals = json.loads((tmp_path / "summary.json").read_text())["totals"]
    assert totals["consumed_m3"] == 0.0 and totals["generated_m3"] == 0.0


def test_constant_flow_total():
    t = np.linspace(0.0, 86_400.0, 97)
    tot = flow_totals(t, np.ones((97, 1)))
    assert tot["consumed"][0] == pytest.approx(86_400.0, rel=1e-15)
    assert tot["generated"][0] == 0.0


def test_totals_split_by_sign():
    t = np.array([0.0, 1.0, 2.0])
    tot = flow_totals(t, np.array([[1.0], [-1.0], [-1.0]]))
    # clipped trapezoids: 0.5, 0 then 0, 0.5 + 1
    assert tot["consumed"][0] == pytest.approx(0.5)
    assert tot["generated"][0] == pytest.approx(1.5)


def test_written_tables(toy_results, tmp_path):
    rs = toy_results[CouplingKind.PRESSURE]
    write_results(rs, tmp_path)
    with (tmp_path / "flow.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time_s", "time_h", "plant"]
    assert len(rows) == 98
    assert rows[5][1] == "1.000000"
    assert all(len(v.split(".")[1]) == 6 for r in rows[1:] for v in r)


def test_totals_recompute_from_csv(toy_results, tmp_path):
    rs = toy_results[CouplingKind.PRESSURE]
    write_results(rs, tmp_path)
    data = np.loadtxt(tmp_path / "flow.csv", delimiter=",", skiprows=1)
    t, q = data[:, 0], data[:, 2]
    consumed = sum(0.5 * (max(a, 0.0) + max(b, 0.0)) * (t1 - t0) for t0, t1, a, b in zip(t, t[1:], q, q[1:]))
    generated = sum(0.5 * (max(-a, 0.0) + max(-b, 0.0)) * (t1 - t0) for t0, t1, a, b in zip(t, t[1:], q, q[1:]))
    totals = json.loads((tmp_path / "summary.json").read_text())["totals"]
    assert totals["consumed_m3"] == pytest.approx(consumed, rel=1e-9)
    assert totals["generated_m3"] == pytest.approx(generated, rel=1e-9)
    assert consumed > 0 and generated > 0


def test_tables_reparse_exactly(toy_results, tmp_path):
    rs = toy_results[CouplingKind.BERNOULLI]
    write_results(rs, tmp_path)
    back = read_results(tmp_path)
    np.testing.assert_array_equal(back.pressure, np.round(rs.pressure, 6))
    np.testing.assert_array_equal(back.flow, np.round(rs.flow, 6))
    np.testing.assert_array_equal(back.power, np.round(rs.power, 6))
    np.testing.assert_array_equal(back.pipe_pressure, rs.pipe_pressure)
    assert back.pipe_points == rs.pipe_points
    assert summary(back)["totals"] == summary(rs)["totals"]


def test_snapshot_modes(toy_runs):
    res = toy_runs[CouplingKind.PRESSURE]
    assert from_simulation(res, "none").power is None
    assert not from_simulation(res, "conversion").has_snapshots
    with pytest.raises(ResultsError, match="snapshot mode"):
        from_simulation(res, "some")


def test_write_failure_names_path(toy_results, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ResultsError, match="file"):
        write_results(toy_results[CouplingKind.PRESSURE], blocker / "out")


def test_compare_identical_runs_is_zero(toy_results):
    rs = toy_results[CouplingKind.PRESSURE]
    stats = compare_couplings(rs, rs)
    assert stats["pressure"] == {"max_abs_bar": 0.0, "max_rel": 0.0}
    assert [(b["lower"], b["upper"]) for b in stats["flow_bins"]] == [(lo, None if math.isinf(hi) else hi)
                                                                     for lo, hi in FLOW_BINS]
    assert all(b["max_abs"] in (0.0, None) for b in stats["flow_bins"])


def test_compare_toy_couplings(toy_results):
    stats = compare_couplings(toy_results[CouplingKind.PRESSURE], toy_results[CouplingKind.BERNOULLI])
    assert 0.0 < stats["pressure"]["max_rel"] < 1e-2
    populated = [b for b in stats["flow_bins"] if b["count"]]
    assert populated and sum(b["count"] for b in stats["flow_bins"]) > 0
    # hand check of the pressure statistic against the raw fields
    a, b = toy_results[CouplingKind.PRESSURE], toy_results[CouplingKind.BERNOULLI]
    assert stats["pressure"]["max_abs_bar"] == np.max(np.abs(a.pipe_pressure - b.pipe_pressure))


def test_compare_requires_snapshots_and_matching_grids(toy_results, toy_runs):
    full = toy_results[CouplingKind.PRESSURE]
    with pytest.raises(ResultsError, match="--snapshots full"):
        compare_couplings(full, from_simulation(toy_runs[CouplingKind.BERNOULLI], "conversion"))
    short = replace(full, times=full.times[:-1], pipe_pressure=full.pipe_pressure[:-1], pipe_flow=full.pipe_flow[:-1])
    with pytest.raises(ResultsError, match="time grids"):
        compare_couplings(full, short)
    moved = replace(full, pipe_points=full.pipe_points[1:] + full.pipe_points[:1])
    with pytest.raises(ResultsError, match="spatial grids"):
        compare_couplings(full, moved)


# ---------------------------------------------------------------- benchmark assembly


def test_benchmark_tables():
    assert len(CONVERSION_TABLE) == 10
    assert ("7001", "node_ld36") in CONVERSION_TABLE
    assert len(OUTFLOW) == 35
    assert INFLOW["node_1"] == 58.993631


def test_benchmark_assembly(synthetic_benchmark_xml, case300_text):
    sc = benchmark_scenario(synthetic_benchmark_xml, case300_text)
    flows = {n.id: n.boundary_flow(0.0) for n in sc.gas_nodes if n.boundary_flow is not None}
    assert flows["node_1"] == 58.993631
    assert flows["node_ld37"] == 7.732484
    assert flows["node_ld36"] == 0.0
    assert all(e.roughness == 8e-6 for e in sc.gas_edges)
    assert {(c.bus, c.gas_node) for c in sc.conversions} == set(CONVERSION_TABLE)
    assert sum(b.type is BusType.SLACK for b in sc.buses) == 10
    again = parse_scenario(serialize_scenario(sc))
    assert again == sc
    net = build_network(again)
    assert sum(n.kind is NodeKind.SOURCE for n in net.gas_nodes) == 3


def test_merge_rejects_bad_plant(synthetic_benchmark_xml, case300_text):
    gas = import_gaslib(synthetic_benchmark_xml)
    power = import_matpower(case300_text)
    sc = merge_scenario(gas, power, [("9001", "node_ld36")])
    from gaspower.network import NetworkError
    with pytest.raises(NetworkError):
        build_network(sc)


def test_synthetic_benchmark_runs(synthetic_benchmark_xml, case300_text):
    from gaspower.solver import SolverConfig, run_simulation

    sc = benchmark_scenario(synthetic_benchmark_xml, case300_text)
    net = build_network(sc)
    res = run_simulation(net, SolverConfig(horizon=2 * 3600.0), CouplingKind.PRESSURE)
    assert len(res.conversion_nodes) == 10
    assert res.conversion_nodes == sorted(res.conversion_nodes)
    assert max(res.newton_iterations[1:]) <= 8
    assert np.all(np.isfinite(res.conversion_pressure))

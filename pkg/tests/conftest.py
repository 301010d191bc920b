from pathlib import Path

import numpy as np
import pytest

from gaspower.gas import CouplingKind
from gaspower.io import bundled_scenario
from gaspower.network import build_layout, build_network
from gaspower.solver import run_simulation

DATA = Path(__file__).parent / "data"
ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(n, title, ok, detail)`` records and asserts one acceptance verdict."""
    log = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n, title, ok, detail="", skipped=False):
        verdict = "SKIP" if skipped else ("PASS" if ok else "FAIL")
        line = f"criterion {str(n):>2} {verdict}: {title}" + (f" ({detail})" if detail else "")
        log[n] = line
        print(line)
        if skipped:
            pytest.skip(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE, {})
    if log:
        terminalreporter.section("acceptance criteria")
        for n in sorted(log, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
            terminalreporter.write_line(log[n])


@pytest.fixture(scope="session")
def toy_scenario():
    return bundled_scenario("toy")


@pytest.fixture(scope="session")
def toy_network(toy_scenario):
    return build_network(toy_scenario)


@pytest.fixture(scope="session")
def toy_layout(toy_network, toy_scenario):
    return build_layout(toy_network, toy_scenario.solver.dx)


@pytest.fixture(scope="session")
def toy_runs(toy_network, toy_scenario):
    """24 h runs of the toy fixture with both coupling conditions (full states kept)."""
    return {
        kind: run_simulation(toy_network, toy_scenario.solver, kind, keep_states=True)
        for kind in (CouplingKind.PRESSURE, CouplingKind.BERNOULLI)
    }


@pytest.fixture(scope="session")
def case300_text():
    return (DATA / "case300.m").read_text()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def gaslib_xml(nodes, connections):
    """GasLib-style network document; ``connections`` holds (kind, id, from, to, length_km, diameter_mm)."""
    x = ['<?xml version="1.0"?>',
         '<network xmlns="http://gaslib.zib.de/Gas" xmlns:framework="http://gaslib.zib.de/Framework">',
         "<framework:nodes>"]
    x += [f'<{kind} id="{nid}"/>' for nid, kind in nodes]
    x += ["</framework:nodes>", "<framework:connections>"]
    for kind, cid, a, b, length, diameter in connections:
        if kind == "pipe":
            x.append(f'<pipe id="{cid}" from="{a}" to="{b}"><length unit="km" value="{length:.3f}"/>'
                     f'<diameter unit="mm" value="{diameter:.0f}"/><roughness unit="mm" value="0.012"/></pipe>')
        else:
            x.append(f'<{kind} id="{cid}" from="{a}" to="{b}"/>')
    x += ["</framework:connections>", "</network>"]
    return "\n".join(x)


@pytest.fixture(scope="session")
def synthetic_benchmark_xml():
    """Tree network carrying every node named by the benchmark tables (not the real topology)."""
    from gaspower.benchmark import CONVERSION_TABLE, INFLOW, OUTFLOW

    gen = np.random.default_rng(7)
    sinks = list(OUTFLOW) + [n for _, n in CONVERSION_TABLE]
    chain = [f"node_{i}" for i in range(100, 140)]
    nodes = [(s, "source") for s in INFLOW] + [(s, "sink") for s in sinks] + [(s, "innode") for s in chain]
    conns = [("pipe", f"c{i}", a, b, gen.uniform(10, 40), 900) for i, (a, b) in enumerate(zip(chain, chain[1:]))]
    conns += [("pipe", f"s{i}", s, chain[15 * i], 20.0, 1000) for i, s in enumerate(INFLOW)]
    conns += [("pipe", f"d{i}", chain[int(gen.integers(len(chain)))], s, gen.uniform(3, 15), 500)
              for i, s in enumerate(sinks)]
    return gaslib_xml(nodes, conns)

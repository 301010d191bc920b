"""Result files: conversion-node time series, summary and optional snapshots.

A result directory holds

    pressure.csv     time_s, time_h and one pressure column [bar] per conversion node
    flow.csv         same layout, conversion flow [m^3/s] (positive: gas consumed)
    power.csv        same layout, conversion power [MW] (not with ``snapshots="none"``)
    summary.json     run metadata, Newton statistics, consumed/generated totals
    snapshots.npz    pipe grid fields at every step (``snapshots="full"`` only)

Columns are sorted by node id and numbers are written with six fractional
digits.  Totals are computed from the written (rounded) series so they can
be recomputed from the CSV files alone.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

DIGITS = 6
SNAPSHOT_MODES = ("none", "conversion", "full")
FLOW_BINS = ((1e-3, 1e-2), (1e-2, 1e-1), (1e-1, 1.0), (1.0, 10.0), (10.0, np.inf))


class ResultsError(ValueError):
    pass


@dataclass
class ResultSet:
    times: np.ndarray  # s
    nodes: list
    pressure: np.ndarray  # bar, (n_times, n_nodes)
    flow: np.ndarray  # m^3/s
    power: np.ndarray | None  # MW
    meta: dict = field(default_factory=dict)
    pipe_points: list | None = None  # (pipe id, grid index) per snapshot column
    pipe_pressure: np.ndarray | None = None  # bar, (n_times, n_points)
    pipe_flow: np.ndarray | None = None

    @property
    def has_snapshots(self) -> bool:
        return self.pipe_pressure is not None


def _round(a):
    return np.round(np.asarray(a, dtype=float), DIGITS)


def flow_totals(times, flow) -> dict:
    """Consumed and generated gas volume [m^3] per column via the trapezoidal rule.

    The positive part of each flow series counts as consumed, the negative
    part (reported as a positive number) as generated.
    """
    times = np.asarray(times, dtype=float)
    flow = np.atleast_2d(np.asarray(flow, dtype=float).T).T
    consumed = trapezoid(np.clip(flow, 0.0, None), times, axis=0)
    generated = trapezoid(np.clip(-flow, 0.0, None), times, axis=0)
    return {"consumed": consumed, "generated": generated}


def from_simulation(result, snapshots: str = "conversion") -> ResultSet:
    """Collect a :class:`~gaspower.solver.SimulationResult` for writing."""
    if snapshots not in SNAPSHOT_MODES:
        raise ResultsError(f"unknown snapshot mode {snapshots!r} (use one of {', '.join(SNAPSHOT_MODES)})")
    meta = {
        "coupling": result.coupling.value,
        "dt": float(result.times[1] - result.times[0]) if len(result.times) > 1 else None,
        "steps": len(result.times) - 1,
        "newton_iterations": [int(i) for i in result.newton_iterations],
        "residual_norms": [float(r) for r in result.residual_norms],
    }
    if result.layout is not None:
        meta["unknowns"] = int(result.layout.n)
        meta["dx"] = {result.network.gas_edges[b.edge].id: result.network.gas_edges[b.edge].length / b.cells
                      for b in result.layout.pipe_blocks}
    rs = ResultSet(np.asarray(result.times, float), list(result.conversion_nodes), result.conversion_pressure,
                   result.conversion_flow, None if snapshots == "none" else result.conversion_power, meta)
    if snapshots == "full":
        if result.states is None:
            raise ResultsError("full snapshots need a run with keep_states=True")
        p, q = result.pipe_fields()
        rs.pipe_pressure, rs.pipe_flow = p, q
        rs.pipe_points = [(result.network.gas_edges[b.edge].id, j)
                          for b in result.layout.pipe_blocks for j in range(b.points)]
    return rs


def _write_table(path: Path, times, nodes, values):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "time_h", *nodes])
        for t, row in zip(times, values):
            w.writerow([f"{t:.{DIGITS}f}", f"{t / 3600.0:.{DIGITS}f}", *(f"{v:.{DIGITS}f}" for v in row)])


def _read_table(path: Path):
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["time_s", "time_h"]:
        raise ResultsError(f"{path}: not a result table")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(rows[0]))
    return data[:, 0], rows[0][2:], data[:, 2:]


def summary(rs: ResultSet) -> dict:
    tot = flow_totals(_round(rs.times), _round(rs.flow))
    per_node = {n: {"consumed_m3": float(c), "generated_m3": float(g)}
                for n, c, g in zip(rs.nodes, tot["consumed"], tot["generated"])}
    return {
        **rs.meta,
        "conversion_nodes": rs.nodes,
        "totals": {
            "consumed_m3": float(np.sum(tot["consumed"])),
            "generated_m3": float(np.sum(tot["generated"])),
            "per_node": per_node,
        },
        "snapshots": rs.has_snapshots,
    }


def write_results(rs: ResultSet, directory) -> Path:
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_table(out / "pressure.csv", rs.times, rs.nodes, rs.pressure)
        _write_table(out / "flow.csv", rs.times, rs.nodes, rs.flow)
        if rs.power is not None:
            _write_table(out / "power.csv", rs.times, rs.nodes, rs.power)
        if rs.has_snapshots:
            np.savez_compressed(
                out / "snapshots.npz", times=rs.times, pressure=rs.pipe_pressure, flow=rs.pipe_flow,
                pipe=np.array([p for p, _ in rs.pipe_points]), index=np.array([j for _, j in rs.pipe_points]),
            )
        (out / "summary.json").write_text(json.dumps(summary(rs), indent=2) + "\n")
    except OSError as exc:
        raise ResultsError(f"{exc.filename or out}: {exc.strerror}") from None
    return out


def read_results(directory) -> ResultSet:
    d = Path(directory)
    if not d.is_dir():
        raise ResultsError(f"{d}: no such result directory")
    for name in ("pressure.csv", "flow.csv", "summary.json"):
        if not (d / name).exists():
            raise ResultsError(f"{d}: missing {name}")
    times, nodes, pres = _read_table(d / "pressure.csv")
    t2, nodes2, flow = _read_table(d / "flow.csv")
    if nodes2 != nodes or not np.array_equal(times, t2):
        raise ResultsError(f"{d}: pressure.csv and flow.csv disagree")
    power = _read_table(d / "power.csv")[2] if (d / "power.csv").exists() else None
    meta = json.loads((d / "summary.json").read_text())
    rs = ResultSet(times, nodes, pres, flow, power, meta)
    snap = d / "snapshots.npz"
    if snap.exists():
        with np.load(snap) as z:
            rs.pipe_pressure, rs.pipe_flow = z["pressure"], z["flow"]
            rs.pipe_points = list(zip(z["pipe"].tolist(), z["index"].tolist()))
    return rs


def compare_couplings(a: ResultSet, b: ResultSet) -> dict:
    """Differences between two runs on the same discretization (``b`` relative to ``a``).

    Both runs need full pipe snapshots.  Flow differences are binned by
    the magnitude of the flow in ``a``; flows below 1e-3 m^3/s are left out.
    """
    for name, rs in (("first", a), ("second", b)):
        if not rs.has_snapshots:
            raise ResultsError(f"{name} run has no pipe snapshots; rerun simulate with --snapshots full")
    if len(a.times) != len(b.times) or not np.allclose(a.times, b.times, rtol=0, atol=1e-6):
        raise ResultsError("runs use different time grids")
    if a.pipe_points != b.pipe_points:
        raise ResultsError("runs use different spatial grids")
    pa, pb, qa, qb = a.pipe_pressure, b.pipe_pressure, a.pipe_flow, b.pipe_flow
    dp = np.abs(pa - pb)
    out = {
        "pressure": {
            "max_abs_bar": float(dp.max(initial=0.0)),
            "max_rel": float((dp / np.abs(pa)).max(initial=0.0)),
        },
        "flow_bins": [],
    }
    mag = np.abs(qa)
    dq = np.abs(qa - qb)
    for lo, hi in FLOW_BINS:
        mask = (mag >= lo) & (mag < hi)
        entry = {"lower": lo, "upper": None if np.isinf(hi) else hi, "count": int(mask.sum())}
        if mask.any():
            entry["max_abs"] = float(dq[mask].max())
            entry["max_rel"] = float((dq[mask] / mag[mask]).max())
        else:
            entry["max_abs"] = entry["max_rel"] = None
        out["flow_bins"].append(entry)
    return out

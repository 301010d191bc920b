"""Matpower case files (the ``mpc.*`` text format, version 2)."""

from __future__ import annotations

import math
import re
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..powerflow import Bus, BusType, Line
from .scenario import ScenarioDescription, ScenarioError

# column positions (0-based) of the standard tables
BUS_I, BUS_TYPE, PD, QD, GS, BS, VM, VA = 0, 1, 2, 3, 4, 5, 7, 8
GEN_BUS, PG, QG, VG, GEN_STATUS = 0, 1, 2, 5, 7
F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10

BUS_TYPES = {1: BusType.PQ, 2: BusType.PV, 3: BusType.SLACK}
MIN_COLS = {"bus": 13, "gen": 10, "branch": 11}

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")


class MatpowerError(ScenarioError):
    pass


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def read_case(text: str) -> dict:
    """Parse ``mpc.baseMVA`` and every ``mpc.<name> = [ ... ];`` numeric table."""
    text = _strip_comments(text)
    out = {}
    pos = 0
    while True:
        m = _ASSIGN.search(text, pos)
        if not m:
            break
        name = m.group(1)
        start = m.end()
        if text.startswith("[", start):
            end = text.find("]", start)
            if end < 0:
                raise MatpowerError(f"mpc.{name}", "unterminated matrix")
            body = text[start + 1:end]
            rows = []
            for lineno, chunk in enumerate(re.split(r"[;\n]", body)):
                chunk = chunk.strip()
                if not chunk:
                    continue
                try:
                    rows.append([float(v) for v in chunk.replace(",", " ").split()])
                except ValueError:
                    raise MatpowerError(f"mpc.{name}", f"malformed row {chunk!r}") from None
            widths = {len(r) for r in rows}
            if len(widths) > 1:
                raise MatpowerError(f"mpc.{name}", f"rows of unequal length {sorted(widths)}")
            out[name] = np.array(rows, dtype=float).reshape(len(rows), widths.pop() if widths else 0)
            pos = end + 1
        else:
            end = text.find(";", start)
            value = text[start:end if end >= 0 else None].strip()
            try:
                out[name] = float(value)
            except ValueError:
                out[name] = value.strip("'\"")
            pos = end + 1 if end >= 0 else len(text)
    for key in ("baseMVA", "bus", "gen", "branch"):
        if key not in out:
            raise MatpowerError(f"mpc.{key}", "missing from case file")
    for key, ncol in MIN_COLS.items():
        if out[key].shape[1] < ncol:
            raise MatpowerError(f"mpc.{key}", f"expected at least {ncol} columns, found {out[key].shape[1]}")
    return out


def _bus_id(v: float) -> str:
    return str(int(v))


def import_matpower(case, slack_buses=None) -> ScenarioDescription:
    """Power section of a scenario from a Matpower case.

    ``case`` is the case text, a path, or an already parsed dict.  With
    ``slack_buses`` the case is modified so that exactly these buses are
    slack buses and every original slack bus becomes a PV bus keeping its
    scheduled generation.
    """
    if isinstance(case, dict):
        mpc = case
    else:
        text = case
        if isinstance(case, Path) or (isinstance(case, str) and "mpc" not in case):
            try:
                text = Path(case).read_text()
            except OSError as exc:
                raise MatpowerError(str(case), f"cannot read case file: {exc.strerror}") from None
        mpc = read_case(text)

    base = float(mpc["baseMVA"])
    gen_p, gen_q = defaultdict(float), defaultdict(float)
    gen_v = {}
    for row in np.asarray(mpc["gen"], dtype=float).tolist():
        if row[GEN_STATUS] <= 0:
            continue
        b = _bus_id(row[GEN_BUS])
        gen_p[b] += row[PG]
        gen_q[b] += row[QG]
        gen_v.setdefault(b, row[VG])

    slack_set = {str(s) for s in slack_buses} if slack_buses is not None else None
    buses = []
    seen = set()
    for row in np.asarray(mpc["bus"], dtype=float).tolist():
        bid = _bus_id(row[BUS_I])
        code = int(row[BUS_TYPE])
        if code not in BUS_TYPES:
            raise MatpowerError(f"mpc.bus/{bid}", f"unknown bus type code {code}")
        btype = BUS_TYPES[code]
        if slack_set is not None:
            if bid in slack_set:
                btype = BusType.SLACK
            elif btype is BusType.SLACK:
                btype = BusType.PV
        seen.add(bid)
        buses.append(Bus(
            id=bid,
            type=btype,
            p_load=row[PD],
            q_load=row[QD],
            p_gen=gen_p.get(bid, 0.0),
            q_gen=gen_q.get(bid, 0.0),
            g_shunt=row[GS],
            b_shunt=row[BS],
            v_set=gen_v.get(bid, row[VM]) if btype is not BusType.PQ else row[VM],
            angle=math.radians(row[VA]),
        ))
    if slack_set is not None and not slack_set <= seen:
        raise MatpowerError("slack_buses", f"unknown buses {sorted(slack_set - seen)}")

    lines = []
    for i, row in enumerate(np.asarray(mpc["branch"], dtype=float).tolist()):
        if row[BR_STATUS] <= 0:
            continue
        f, t = _bus_id(row[F_BUS]), _bus_id(row[T_BUS])
        for b in (f, t):
            if b not in seen:
                raise MatpowerError(f"mpc.branch/{i + 1}", f"unknown bus {b}")
        lines.append(Line(f, t, row[BR_R], row[BR_X], row[BR_B], row[TAP], math.radians(row[SHIFT]),
                          id=f"branch_{i + 1}"))
    return ScenarioDescription(base_mva=base, buses=tuple(buses), lines=tuple(lines))


def bus_type_counts(sc: ScenarioDescription) -> dict:
    counts = {t: 0 for t in BusType}
    for b in sc.buses:
        counts[b.type] += 1
    return {t.value: n for t, n in counts.items()}

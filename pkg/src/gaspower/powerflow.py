"""AC power flow in polar form.

Every bus carries four quantities (V, phi, P, Q); P and Q are net injections
in p.u. on ``base_mva``.  The power flow equations supply two relations per
bus and the bus specification fixes two more:

    PQ     P, Q    (loads, scaled over the day by the load profile)
    PV     P, V
    slack  phi, V
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

DAY = 86400.0  # s


class PowerNetworkError(ValueError):
    pass


class BusType(str, Enum):
    PQ = "PQ"
    PV = "PV"
    SLACK = "slack"


@dataclass(frozen=True)
class Bus:
    """One bus of the electrical grid.

    Powers are in MW/MVAr, voltages in p.u., angles in rad.  ``p_load`` and
    ``q_load`` are the base demands that the load profile scales at PQ
    buses; ``p_gen`` and ``q_gen`` are scheduled generation.  ``v_set`` and
    ``angle`` are the magnitude/angle setpoints where the bus type fixes them.
    """

    id: str
    type: BusType
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0
    q_gen: float = 0.0
    g_shunt: float = 0.0  # MW at V = 1 p.u.
    b_shunt: float = 0.0  # MVAr at V = 1 p.u.
    v_set: float = 1.0
    angle: float = 0.0


@dataclass(frozen=True)
class Line:
    """Pi-model branch; impedances in p.u., ``shift`` in rad, ``tap = 0`` means 1."""

    from_bus: str
    to_bus: str
    r: float
    x: float
    b: float = 0.0
    tap: float = 0.0
    shift: float = 0.0
    id: str | None = None


@dataclass(frozen=True)
class LoadProfile:
    base: float = 0.9
    amplitude: float = 0.4
    period: float = DAY  # s

    def factor(self, t: float) -> float:
        # reduce the phase first so quarter periods give exact factors
        frac = math.fmod(t, self.period) / self.period
        return self.base + self.amplitude * math.sin(2.0 * math.pi * frac)


def load_at(t: float, bus: Bus, profile: LoadProfile = LoadProfile()) -> tuple[float, float]:
    """Demand (P, Q) [MW, MVAr] of a load bus at time ``t`` [s]."""
    if t < 0:
        raise ValueError("time must be non-negative")
    f = profile.factor(t)
    return bus.p_load * f, bus.q_load * f


@dataclass(frozen=True)
class AdmittanceMatrix:
    Y: sp.csr_matrix
    base_mva: float
    bus_index: dict = field(default_factory=dict)

    @property
    def G(self):
        return self.Y.real

    @property
    def B(self):
        return self.Y.imag


def build_admittance(buses: Sequence[Bus], lines: Sequence[Line], base_mva: float = 100.0) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix from Pi-model branches and bus shunts."""
    index = {b.id: i for i, b in enumerate(buses)}
    n = len(buses)
    rows, cols, vals = [], [], []
    for ln in lines:
        try:
            f, t = index[ln.from_bus], index[ln.to_bus]
        except KeyError as exc:
            raise PowerNetworkError(f"line {ln.id or (ln.from_bus, ln.to_bus)} references unknown bus {exc}") from None
        z = complex(ln.r, ln.x)
        if z == 0:
            raise PowerNetworkError(f"line {ln.id or (ln.from_bus, ln.to_bus)} has zero series impedance")
        ys = 1.0 / z
        tap = (ln.tap if ln.tap else 1.0) * complex(math.cos(ln.shift), math.sin(ln.shift))
        ytt = ys + 0.5j * ln.b
        yff = ytt / (tap * tap.conjugate())
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, -ys / tap.conjugate(), -ys / tap, ytt]
    for i, b in enumerate(buses):
        if b.g_shunt or b.b_shunt:
            rows.append(i)
            cols.append(i)
            vals.append(complex(b.g_shunt, b.b_shunt) / base_mva)
    Y = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
    Y.sum_duplicates()
    return AdmittanceMatrix(Y, base_mva, index)


def injections(V, phi, Y):
    """Computed injections (P, Q) in p.u. from the power flow equations."""
    u = V * np.exp(1j * phi)
    s = u * np.conj(Y @ u)
    return s.real, s.imag


def injection_jacobian(V, phi, Y):
    """Partials of the computed injections: (dS/dphi, dS/dV) as sparse complex matrices."""
    u = V * np.exp(1j * phi)
    ibus = Y @ u
    diag_u = sp.diags(u)
    diag_i = sp.diags(ibus)
    diag_un = sp.diags(u / V)
    ds_dphi = 1j * diag_u @ (diag_i - Y @ diag_u).conj()
    ds_dv = diag_u @ (Y @ diag_un).conj() + diag_i.conj() @ diag_un
    return sp.csr_matrix(ds_dphi), sp.csr_matrix(ds_dv)


def pf_residual(V, phi, P, Q, Y):
    """Power flow mismatch per bus: ``(P - P_calc, Q - Q_calc)`` stacked bus-wise.

    Returns an array of length 2*n_bus ordered ``[P_0, Q_0, P_1, Q_1, ...]``.
    """
    pc, qc = injections(np.asarray(V, float), np.asarray(phi, float), Y)
    out = np.empty(2 * len(pc))
    out[0::2] = np.asarray(P, float) - pc
    out[1::2] = np.asarray(Q, float) - qc
    return out


def spec_values(bus: Bus, t: float, base_mva: float, profile: LoadProfile = LoadProfile()):
    """The two fixed quantities of ``bus`` at time ``t`` in p.u./rad.

    Returns ``((name, value), (name, value))`` with names among V, phi, P, Q.
    """
    if bus.type is BusType.PQ:
        pd, qd = load_at(t, bus, profile)
        return (("P", (bus.p_gen - pd) / base_mva), ("Q", (bus.q_gen - qd) / base_mva))
    if bus.type is BusType.PV:
        return (("P", (bus.p_gen - bus.p_load) / base_mva), ("V", bus.v_set))
    return (("phi", bus.angle), ("V", bus.v_set))


def check_slack_per_component(buses: Sequence[Bus], lines: Sequence[Line]) -> None:
    """Every connected component of the grid needs a slack bus."""
    index = {b.id: i for i, b in enumerate(buses)}
    n = len(buses)
    if n == 0:
        return
    rows = [index[ln.from_bus] for ln in lines]
    cols = [index[ln.to_bus] for ln in lines]
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, labels = csgraph.connected_components(adj, directed=False)
    has_slack = np.zeros(ncomp, dtype=bool)
    for b, lab in zip(buses, labels):
        if b.type is BusType.SLACK:
            has_slack[lab] = True
    if not has_slack.all():
        missing = [buses[i].id for i in range(n) if not has_slack[labels[i]]]
        raise PowerNetworkError(f"grid component without slack bus (contains bus {missing[0]})")


@dataclass
class PowerFlowSolution:
    V: np.ndarray
    phi: np.ndarray
    P: np.ndarray  # p.u., net injection
    Q: np.ndarray
    iterations: int
    mismatch: float


def solve_power_flow(buses: Sequence[Bus], lines: Sequence[Line], base_mva: float = 100.0, t: float = 0.0,
                     profile: LoadProfile = LoadProfile(), tol: float = 1e-10, max_iter: int = 30,
                     V0=None, phi0=None) -> PowerFlowSolution:
    """Stand-alone Newton-Raphson power flow at time ``t``.

    Unknowns are the angles of non-slack buses and the magnitudes of PQ
    buses; the mismatch equations are P at non-slack and Q at PQ buses.
    """
    check_slack_per_component(buses, lines)
    Y = build_admittance(buses, lines, base_mva).Y.tocsr()
    n = len(buses)
    V = np.ones(n) if V0 is None else np.array(V0, dtype=float)
    phi = np.zeros(n) if phi0 is None else np.array(phi0, dtype=float)
    P = np.zeros(n)
    Q = np.zeros(n)
    for i, b in enumerate(buses):
        for name, value in spec_values(b, t, base_mva, profile):
            if name == "V":
                V[i] = value
            elif name == "phi":
                phi[i] = value
            elif name == "P":
                P[i] = value
            else:
                Q[i] = value
    ang = np.array([i for i, b in enumerate(buses) if b.type is not BusType.SLACK], dtype=int)
    mag = np.array([i for i, b in enumerate(buses) if b.type is BusType.PQ], dtype=int)

    def mismatch():
        pc, qc = injections(V, phi, Y)
        return np.concatenate([P[ang] - pc[ang], Q[mag] - qc[mag]])

    f = mismatch()
    it = 0
    while f.size and np.max(np.abs(f)) > tol:
        if it >= max_iter:
            raise PowerNetworkError(f"power flow did not converge in {max_iter} iterations "
                                    f"(mismatch {np.max(np.abs(f)):.3e})")
        ds_dphi, ds_dv = injection_jacobian(V, phi, Y)
        J = sp.bmat([
            [ds_dphi.real[ang][:, ang], ds_dv.real[ang][:, mag]],
            [ds_dphi.imag[mag][:, ang], ds_dv.imag[mag][:, mag]],
        ], format="csc")
        dx = spla.spsolve(J, f)
        phi[ang] += dx[: ang.size]
        V[mag] += dx[ang.size:]
        f = mismatch()
        it += 1
    pc, qc = injections(V, phi, Y)
    return PowerFlowSolution(V, phi, pc, qc, it, float(np.max(np.abs(f))) if f.size else 0.0)

"""Monolithic residual assembly, damped Newton and the time loop.

Per time step one square nonlinear system holds every pipe grid state, the
end states of non-pipe gas edges, all bus quantities and the conversion
flows.  Residual rows are scaled per category so that all of them are O(1)
quantities of a familiar unit:

    box scheme, mass row        kg/m^3 (steady: kg/(m^2 s))
    box scheme, momentum row    bar
    edge identities             kg/m^3 and m^3/s
    node balance                m^3/s
    node invariants             bar (Bernoulli: bar-equivalent at the anchor pressure)
    power flow, bus specs       p.u. / rad
    conversion                  m^3/s
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .conversion import check_monotone, conversion_flow
from .gas import (
    BAR,
    CouplingKind,
    GasModelError,
    bernoulli_in_density,
    box_scheme_cells,
    density,
    dpressure,
    pressure,
)
from .network import Network, NodeKind, UnknownLayout, build_layout
from .powerflow import BusType, build_admittance, injection_jacobian, injections, spec_values

log = logging.getLogger(__name__)

HOUR = 3600.0

CATEGORIES = ("scheme", "edge_identity", "node", "power_flow", "bus_spec", "conversion")


class SolverError(RuntimeError):
    """Newton failure; ``diagnostics`` holds the worst residual entries per category."""

    def __init__(self, message, diagnostics=None, history=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.history = history or []


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    horizon: float = 24 * HOUR  # s
    dt: float = 900.0  # s
    dx: float = 1000.0  # m
    newton_tol: float = 1e-8
    max_newton_iters: int = 50
    max_halvings: int = 30
    jacobian_mode: str = "analytic_sparse"

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.dx > 0:
            raise ConfigError("dx must be positive")
        if not self.newton_tol > 0:
            raise ConfigError("newton tolerance must be positive")
        if not self.horizon >= 0:
            raise ConfigError("horizon must be non-negative")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(f"horizon {self.horizon} s is not an integer multiple of dt {self.dt} s")
        if self.jacobian_mode not in ("analytic_sparse", "finite_difference"):
            raise ConfigError(f"unknown jacobian mode {self.jacobian_mode!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


class ResidualSystem:
    """Global residual and sparse Jacobian of one time step.

    ``steady=True`` drops the time difference of the box scheme and
    replaces the mass balance of the anchor node by a pressure condition;
    that system defines the initial state.
    """

    def __init__(self, network: Network, layout: UnknownLayout, coupling=CouplingKind.PRESSURE,
                 dt: float = 900.0, steady: bool = False):
        self.network = network
        self.layout = layout
        self.coupling = CouplingKind(coupling)
        self.dt = float(dt)
        self.steady = steady
        self.const = network.constants
        self.n = layout.n
        self.admittance = build_admittance(network.buses, network.lines, network.base_mva)
        self.Y = self.admittance.Y
        self.bernoulli_scale = density(network.anchor_pressure, self.const) / BAR
        self._prepare()

    # -- static structure -------------------------------------------------
    def _prepare(self):
        net, lay = self.network, self.layout
        il, ir, dx, area, dia, rough = [], [], [], [], [], []
        for blk in lay.pipe_blocks:
            e = net.gas_edges[blk.edge]
            j = np.arange(blk.cells)
            il.append(blk.start + 2 * j)
            ir.append(blk.start + 2 * (j + 1))
            ones = np.ones(blk.cells)
            dx.append(ones * e.length / blk.cells)
            area.append(ones * e.area)
            dia.append(ones * e.diameter)
            rough.append(ones * e.roughness)
        cat = lambda xs, dtype=float: np.concatenate(xs).astype(dtype) if xs else np.zeros(0, dtype)
        self.c_il, self.c_ir = cat(il, int), cat(ir, int)
        self.c_dx, self.c_area, self.c_d, self.c_k = cat(dx), cat(area), cat(dia), cat(rough)
        n_cells = self.c_il.size

        row = 2 * n_cells
        self.row_start = {"scheme": 0}
        self.row_start["edge_identity"] = row
        self.edge_rows = []
        for e_idx, s in lay.edge_starts.items():
            self.edge_rows.append((row, s))
            row += 2

        self.row_start["node"] = row
        conv_at = {c.gas_node: i for i, c in enumerate(net.conversions)}
        self.nodes = []
        for node in net.gas_nodes:
            ends = []
            for e_idx, end in net.incidence[node.id]:
                ir_, iq_ = lay.end_index(e_idx, end)
                sign = 1 if end == "to" else -1
                ends.append((ir_, iq_, sign, net.gas_edges[e_idx].area))
            kind = net.effective_coupling(node.id, self.coupling)
            anchor = self.steady and node.id == net.anchor_node
            self.nodes.append((row, node, ends, kind, conv_at.get(node.id), anchor))
            row += len(ends)

        self.row_start["power_flow"] = row
        nb = len(net.buses)
        row += 2 * nb
        self.row_start["bus_spec"] = row
        row += 2 * nb
        self.row_start["conversion"] = row
        row += len(net.conversions)
        if row != self.n:
            raise RuntimeError(f"residual rows {row} != unknowns {self.n}")

        self.bus_idx = {b.id: i for i, b in enumerate(net.buses)}
        self.conv_bus = np.array([self.bus_idx[c.bus] for c in net.conversions], dtype=int)
        for c in net.conversions:
            check_monotone(c)

    def row_category(self, row: int) -> str:
        best = "scheme"
        for name in CATEGORIES:
            if row >= self.row_start[name]:
                best = name
        return best

    # -- evaluation --------------------------------------------------------
    def evaluate(self, x, x_old, t, jacobian=True):
        """Scaled residual (and sparse Jacobian) at unknowns ``x`` for time ``t``."""
        x = np.asarray(x, dtype=float)
        x_old = np.asarray(x_old, dtype=float)
        r = np.zeros(self.n)
        rows, cols, vals = [], [], []

        def add(rr, cc, vv):
            rr = np.atleast_1d(rr)
            rows.append(rr)
            cols.append(np.broadcast_to(np.atleast_1d(cc), rr.shape))
            vals.append(np.broadcast_to(np.atleast_1d(vv).astype(float), rr.shape))

        self._scheme(x, x_old, r, add)
        self._edges(x, r, add)
        self._nodes(x, t, r, add)
        self._power(x, t, r, add)
        self._conversion(x, r, add)

        if not jacobian:
            return r
        J = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n, self.n)
        ).tocsc()
        return r, J

    def residual(self, x, x_old, t):
        return self.evaluate(x, x_old, t, jacobian=False)

    def newton_function(self, x_old, t, jacobian_mode="analytic_sparse"):
        """``x -> (r, J)`` for :func:`newton_solve` with the chosen Jacobian."""
        if jacobian_mode == "finite_difference":
            return lambda z: (self.residual(z, x_old, t), sp.csc_matrix(self.fd_jacobian(z, x_old, t)))
        return lambda z: self.evaluate(z, x_old, t)

    def _scheme(self, x, x_old, r, add):
        if self.c_il.size == 0:
            return
        il, ir = self.c_il, self.c_ir
        rl, ql, rr, qr = x[il], x[il + 1], x[ir], x[ir + 1]
        bad = np.flatnonzero((rl <= 0) | (rr <= 0))
        if bad.size:
            raise GasModelError(f"non-positive density at unknown {int(il[bad[0]])}")
        w = 0.0 if self.steady else 1.0
        r1, r2, jac = box_scheme_cells(
            (x_old[il], x_old[ir]), (x_old[il + 1], x_old[ir + 1]), (rl, rr), (ql, qr),
            self.dt, self.c_dx, self.c_area, self.c_d, self.c_k, self.const, time_weight=w,
        )
        s1 = self.c_dx / self.dt if self.steady else np.ones_like(self.c_dx)
        s2 = self.c_dx / (self.dt * BAR)
        n = il.size
        row1 = 2 * np.arange(n)
        row2 = row1 + 1
        r[row1] = s1 * r1
        r[row2] = s2 * r2
        cols = {"rl": il, "ql": il + 1, "rr": ir, "qr": ir + 1}
        for (k, var), v in jac.items():
            add(row1 if k == 1 else row2, cols[var], (s1 if k == 1 else s2) * v)

    def _edges(self, x, r, add):
        for row, s in self.edge_rows:
            r[row] = x[s] - x[s + 2]
            r[row + 1] = x[s + 1] - x[s + 3]
            add([row, row, row + 1, row + 1], [s, s + 2, s + 1, s + 3], [1.0, -1.0, 1.0, -1.0])

    def _invariant(self, x, end, kind):
        ir_, iq_, _, area = end
        rho = x[ir_]
        if rho <= 0:
            raise GasModelError(f"non-positive density at unknown {ir_}")
        if kind is CouplingKind.PRESSURE:
            return pressure(rho, self.const) / BAR, dpressure(rho, self.const) / BAR, 0.0
        h, dr, dq = bernoulli_in_density(rho, x[iq_], area, self.const)
        s = self.bernoulli_scale
        return s * h, s * dr, s * dq

    def _nodes(self, x, t, r, add):
        lay = self.layout
        for row, node, ends, kind, conv, anchor in self.nodes:
            if anchor:
                ir_ = ends[0][0]
                r[row] = (pressure(x[ir_], self.const) - self.network.anchor_pressure) / BAR
                add(row, ir_, dpressure(x[ir_], self.const) / BAR)
            else:
                bal = -node.withdrawal(t)
                for ir_, iq_, sign, _ in ends:
                    bal += sign * x[iq_]
                    add(row, iq_, float(sign))
                if conv is not None:
                    ic = lay.conversion(conv)
                    bal -= x[ic]
                    add(row, ic, -1.0)
                r[row] = bal
            prev = None
            for k, end in enumerate(ends):
                h, dr, dq = self._invariant(x, end, kind)
                if prev is not None:
                    hp, drp, dqp, endp = prev
                    rk = row + k
                    r[rk] = h - hp
                    add([rk, rk], [end[0], endp[0]], [dr, -drp])
                    if kind is CouplingKind.BERNOULLI:
                        add([rk, rk], [end[1], endp[1]], [dq, -dqp])
                prev = (h, dr, dq, end)

    def _power(self, x, t, r, add):
        net, lay = self.network, self.layout
        nb = len(net.buses)
        if nb == 0:
            return
        b0 = lay.bus_start
        iv = b0 + 4 * np.arange(nb)
        iphi, ip, iq = iv + 1, iv + 2, iv + 3
        V, phi, P, Q = x[iv], x[iphi], x[ip], x[iq]
        pc, qc = injections(V, phi, self.Y)
        pf0 = self.row_start["power_flow"]
        rp = pf0 + 2 * np.arange(nb)
        rq = rp + 1
        r[rp] = P - pc
        r[rq] = Q - qc
        add(rp, ip, 1.0)
        add(rq, iq, 1.0)
        ds_dphi, ds_dv = injection_jacobian(V, phi, self.Y)
        for mat, col_of in ((ds_dphi, iphi), (ds_dv, iv)):
            m = mat.tocoo()
            add(rp[m.row], col_of[m.col], -m.data.real)
            add(rq[m.row], col_of[m.col], -m.data.imag)

        sp0 = self.row_start["bus_spec"]
        offset = {"V": 0, "phi": 1, "P": 2, "Q": 3}
        for i, bus in enumerate(net.buses):
            for k, (name, value) in enumerate(spec_values(bus, t, net.base_mva, net.load_profile)):
                col = iv[i] + offset[name]
                r[sp0 + 2 * i + k] = x[col] - value
                add(sp0 + 2 * i + k, col, 1.0)

    def _conversion(self, x, r, add):
        net, lay = self.network, self.layout
        row0 = self.row_start["conversion"]
        for i, c in enumerate(net.conversions):
            ic = lay.conversion(i)
            ipw = lay.bus(self.conv_bus[i]) + 2
            power_mw = x[ipw] * net.base_mva
            q, dq = conversion_flow(power_mw, c, derivative=True)
            r[row0 + i] = x[ic] - q
            add([row0 + i, row0 + i], [ic, ipw], [1.0, -dq * net.base_mva])

    # -- helpers -------------------------------------------------------------
    def fd_jacobian(self, x, x_old, t, h=1e-6):
        """Central finite-difference Jacobian (dense); verification only."""
        x = np.asarray(x, dtype=float)
        J = np.zeros((self.n, self.n))
        for j in range(self.n):
            step = h * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += step
            xm[j] -= step
            J[:, j] = (self.residual(xp, x_old, t) - self.residual(xm, x_old, t)) / (2 * step)
        return J

    def diagnostics(self, r, top=3):
        """Worst residual entries per category."""
        out = {}
        for name in CATEGORIES:
            lo = self.row_start[name]
            hi = self._row_stop(name)
            if hi <= lo:
                continue
            seg = np.abs(r[lo:hi])
            order = np.argsort(seg)[::-1][:top]
            out[name] = [(int(lo + i), float(seg[i])) for i in order]
        return out

    def _row_stop(self, name):
        i = CATEGORIES.index(name)
        return self.row_start[CATEGORIES[i + 1]] if i + 1 < len(CATEGORIES) else self.n


# ------------------------------------------------------------------------------
# Newton


@dataclass
class NewtonResult:
    x: np.ndarray
    converged: bool
    iterations: int
    history: list = field(default_factory=list)


def newton_solve(fun, x0, tol=1e-8, max_iter=50, max_halvings=30, diagnose=None):
    """Damped Newton on ``fun(x) -> (r, J)``.

    Steps are halved until the residual 2-norm decreases and ``fun`` accepts
    the iterate (a :class:`GasModelError` marks an inadmissible state such as
    a non-positive density).  Converged when the infinity norm is below
    ``tol``.
    """
    x = np.array(x0, dtype=float)
    r, J = fun(x)
    history = [float(np.max(np.abs(r))) if r.size else 0.0]
    it = 0
    while history[-1] > tol:
        if it >= max_iter:
            raise SolverError(
                f"Newton did not converge in {max_iter} iterations (residual {history[-1]:.3e})",
                diagnose(r) if diagnose else None, history,
            )
        try:
            lu = spla.splu(sp.csc_matrix(J), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"singular Jacobian: {exc}", diagnose(r) if diagnose else None, history) from None
        delta = lu.solve(-r)
        if not np.all(np.isfinite(delta)):
            raise SolverError("singular Jacobian: non-finite Newton step", diagnose(r) if diagnose else None, history)
        norm0 = np.linalg.norm(r)
        step = 1.0
        for _ in range(max_halvings + 1):
            x_try = x + step * delta
            try:
                r_try, J_try = fun(x_try)
            except GasModelError:
                step *= 0.5
                continue
            if np.all(np.isfinite(r_try)) and np.linalg.norm(r_try) < norm0:
                break
            step *= 0.5
        else:
            raise SolverError(
                f"step damping failed after {max_halvings} halvings (residual {history[-1]:.3e})",
                diagnose(r) if diagnose else None, history,
            )
        x, r, J = x_try, r_try, J_try
        it += 1
        history.append(float(np.max(np.abs(r))))
    return NewtonResult(x, True, it, history)


# ------------------------------------------------------------------------------
# initial state and time loop


def initial_guess(network: Network, layout: UnknownLayout, t: float = 0.0):
    """Rest state at the anchor pressure plus a flat power flow start."""
    x = np.zeros(layout.n)
    rho = density(network.anchor_pressure, network.constants)
    x[: layout.n_gas : 2] = rho
    for i, bus in enumerate(network.buses):
        s = layout.bus(i)
        x[s] = 1.0
        for name, value in spec_values(bus, t, network.base_mva, network.load_profile):
            x[s + {"V": 0, "phi": 1, "P": 2, "Q": 3}[name]] = value
    # non-pipe edge blocks also hold (rho, q) pairs at even offsets
    return x


def stationary_initial_state(network: Network, layout: UnknownLayout, coupling=CouplingKind.PRESSURE,
                             config: SolverConfig = SolverConfig(), t: float = 0.0) -> NewtonResult:
    """Solve the time-independent system at time ``t``.

    The anchor node's pressure is fixed instead of its mass balance, so
    unbalanced boundary data is absorbed there.
    """
    system = ResidualSystem(network, layout, coupling, dt=config.dt, steady=True)
    x0 = initial_guess(network, layout, t)
    try:
        return newton_solve(
            system.newton_function(x0, t, config.jacobian_mode), x0, config.newton_tol,
            config.max_newton_iters, config.max_halvings, system.diagnostics,
        )
    except SolverError as exc:
        raise SolverError(f"stationary initialization failed: {exc}", exc.diagnostics, exc.history) from None


def anchor_flow(network: Network, layout: UnknownLayout, x, t: float = 0.0) -> float:
    """Boundary flow at the anchor node implied by state ``x`` (inflow positive at sources)."""
    node = network.node(network.anchor_node)
    bal = 0.0
    for e_idx, end in network.incidence[node.id]:
        _, iq = layout.end_index(e_idx, end)
        bal += (1 if end == "to" else -1) * x[iq]
    for i, c in enumerate(network.conversions):
        if c.gas_node == node.id:
            bal -= x[layout.conversion(i)]
    # bal equals the withdrawal at the node
    return -bal if node.kind is NodeKind.SOURCE else bal


@dataclass
class SimulationResult:
    times: np.ndarray  # s
    conversion_nodes: list  # gas node ids, sorted
    conversion_pressure: np.ndarray  # bar, (n_times, n_conv)
    conversion_flow: np.ndarray  # m^3/s, (n_times, n_conv)
    conversion_power: np.ndarray  # MW, (n_times, n_conv)
    newton_iterations: list
    residual_norms: list
    states: list | None = None
    network: Network | None = None
    layout: UnknownLayout | None = None
    coupling: CouplingKind = CouplingKind.PRESSURE

    def pipe_fields(self):
        """Pressure [bar] and flow [m^3/s] at every pipe grid point and time."""
        if self.states is None:
            raise ValueError("full states were not recorded")
        return pipe_fields(self.network, self.layout, np.asarray(self.states))


def pipe_fields(network: Network, layout: UnknownLayout, states):
    states = np.atleast_2d(states)
    idx = np.concatenate([np.arange(b.start, b.stop, 2) for b in layout.pipe_blocks]) if layout.pipe_blocks \
        else np.zeros(0, int)
    rho = states[:, idx]
    return pressure(rho, network.constants) / BAR if rho.size else rho, states[:, idx + 1]


def node_pressure(network: Network, layout: UnknownLayout, x, node_id: str) -> float:
    e_idx, end = network.incidence[node_id][0]
    ir, _ = layout.end_index(e_idx, end)
    return pressure(x[ir], network.constants) / BAR


def run_simulation(network: Network, config: SolverConfig = SolverConfig(), coupling=CouplingKind.PRESSURE,
                   keep_states: bool = False, x_init=None, t_start: float = 0.0, progress=None) -> SimulationResult:
    """Integrate the coupled network from ``t_start`` to ``config.horizon``.

    Without ``x_init`` the run starts from the stationary state at
    ``t_start``.  Raises :class:`SolverError` with the failing step on
    non-convergence.
    """
    coupling = CouplingKind(coupling)
    layout = build_layout(network, config.dx)
    c = network.constants.c_vac
    for blk in layout.pipe_blocks:
        dx = network.gas_edges[blk.edge].length / blk.cells
        if config.dt < dx / c:
            log.warning("dt=%g s is below dx/c_vac=%g s on pipe %s; the box scheme prefers larger steps",
                        config.dt, dx / c, network.gas_edges[blk.edge].id)
            break

    if x_init is None:
        init = stationary_initial_state(network, layout, coupling, config, t_start)
        x = init.x
        iters0, res0 = init.iterations, init.history[-1]
    else:
        x = np.array(x_init, dtype=float)
        iters0, res0 = 0, float("nan")

    system = ResidualSystem(network, layout, coupling, dt=config.dt)
    order = sorted(range(len(network.conversions)), key=lambda i: network.conversions[i].gas_node)
    conv_nodes = [network.conversions[i].gas_node for i in order]

    n_steps = int(round((config.horizon - t_start) / config.dt))
    times = t_start + config.dt * np.arange(n_steps + 1)
    pres = np.zeros((n_steps + 1, len(order)))
    flow = np.zeros_like(pres)
    power = np.zeros_like(pres)
    states = [] if keep_states else None
    iterations, norms = [iters0], [res0]

    def record(k, x):
        for col, i in enumerate(order):
            conv = network.conversions[i]
            pres[k, col] = node_pressure(network, layout, x, conv.gas_node)
            flow[k, col] = x[layout.conversion(i)]
            power[k, col] = x[layout.bus(system.bus_idx[conv.bus]) + 2] * network.base_mva
        if keep_states:
            states.append(x.copy())

    record(0, x)
    log.info("step=0 t=%.1f iters=%d residual=%.3e", times[0], iters0, res0)
    for k in range(1, n_steps + 1):
        t = float(times[k])
        x_old = x
        try:
            res = newton_solve(
                system.newton_function(x_old, t, config.jacobian_mode), x_old, config.newton_tol,
                config.max_newton_iters, config.max_halvings, system.diagnostics,
            )
        except SolverError as exc:
            raise SolverError(f"step {k} (t={t:.1f} s): {exc}", exc.diagnostics, exc.history) from None
        x = res.x
        iterations.append(res.iterations)
        norms.append(res.history[-1])
        record(k, x)
        log.info("step=%d t=%.1f iters=%d residual=%.3e", k, t, res.iterations, res.history[-1])
        if progress is not None:
            progress(k, t, res)

    return SimulationResult(times, conv_nodes, pres, flow, power, iterations, norms, states,
                            network, layout, coupling)

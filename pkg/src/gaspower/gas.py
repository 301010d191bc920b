"""Gas-side physics: pressure law, pipe friction, box scheme and node coupling.

Internally every pressure is in Pa.  The compressibility slope ``alpha`` is
stored per bar (as tabulated) and converted where it is used.  Pipe states
are carried as (density [kg/m^3], volumetric flow at standard conditions
[m^3/s]); the box scheme itself works on the mass flux ``m = rho0*q/A``
[kg/(m^2 s)] so that a pipe of constant cross section obeys

    rho_t + m_x = 0
    m_t + (p(rho) + m^2/rho)_x = -lambda/(2 d) * m|m|/rho

which is the line-density/mass-flow system divided by ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

BAR = 1.0e5  # Pa
LN10 = math.log(10.0)

# Reynolds numbers below this are clamped when evaluating Prandtl-Colebrook.
RE_MIN = 100.0
COLEBROOK_TOL = 1e-12
COLEBROOK_MAXITER = 50


class GasModelError(ValueError):
    """A state outside the validity range of the gas model."""


class CouplingKind(str, Enum):
    PRESSURE = "pressure"
    BERNOULLI = "bernoulli"


@dataclass(frozen=True)
class GasConstants:
    rho0: float = 0.785  # kg/m^3
    p0: float = 1.01325  # bar
    z0: float = 1.005
    T0: float = 273.15  # K
    T: float = 283.15  # K
    alpha: float = -0.00224  # 1/bar
    eta: float = 1e-5  # kg/(m s)

    def __post_init__(self):
        for name in ("rho0", "p0", "z0", "T0", "T", "eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"gas constant {name} must be positive")

    @property
    def beta(self) -> float:
        return -self.alpha

    @property
    def c_vac2(self) -> float:
        """Squared sound speed in the vacuum limit [m^2/s^2]."""
        return (self.p0 * BAR / self.z0) * (self.T / self.T0) / self.rho0

    @property
    def c_vac(self) -> float:
        return math.sqrt(self.c_vac2)

    @property
    def alpha_pa(self) -> float:
        return self.alpha / BAR


def z_factor(p, const: GasConstants = GasConstants()):
    """Compressibility factor ``1 + alpha*p`` for ``p`` in Pa."""
    return 1.0 + const.alpha_pa * np.asarray(p, dtype=float)


def pressure(rho, const: GasConstants = GasConstants()):
    """Pressure [Pa] of gas with density ``rho`` [kg/m^3]."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise GasModelError("density must be positive")
    c2 = const.c_vac2
    out = c2 * rho / (1.0 - const.alpha_pa * c2 * rho)
    return out if out.ndim else float(out)


def dpressure(rho, const: GasConstants = GasConstants()):
    """Derivative dp/drho [m^2/s^2]."""
    rho = np.asarray(rho, dtype=float)
    c2 = const.c_vac2
    den = 1.0 - const.alpha_pa * c2 * rho
    out = c2 / den**2
    return out if out.ndim else float(out)


def density(p, const: GasConstants = GasConstants()):
    """Inverse of :func:`pressure`; ``p`` in Pa.

    Raises :class:`GasModelError` outside ``p > 0, z(p) > 0`` (for the default
    constants that is roughly above 446 bar).
    """
    p = np.asarray(p, dtype=float)
    z = z_factor(p, const)
    if np.any(p <= 0) or np.any(z <= 0):
        raise GasModelError("pressure outside the validity range of the gas law")
    out = p / (const.c_vac2 * z)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# friction


def _colebrook_x(re, rel):
    """Solve x = -2 log10(2.51 x/Re + rel) by fixed-point iteration; x = 1/sqrt(lambda)."""
    x = -2.0 * np.log10(rel) * np.ones_like(re)
    for _ in range(COLEBROOK_MAXITER):
        x_new = -2.0 * np.log10(2.51 * x / re + rel)
        if np.all(np.abs(x_new - x) <= COLEBROOK_TOL * np.abs(x_new)):
            return x_new
        x = x_new
    raise GasModelError("Prandtl-Colebrook iteration did not converge")


def friction_lambda(mass_flux, d_pipe, roughness, eta: float = GasConstants.eta, derivative=False):
    """Darcy friction factor from the Prandtl-Colebrook formula.

    ``mass_flux`` is rho0*q/A in kg/(m^2 s), so that Re = d*|mass_flux|/eta is
    dimensionless.  Reynolds numbers below ``RE_MIN`` are clamped.  With
    ``derivative=True`` also returns d(lambda)/d(mass_flux).
    """
    m = np.asarray(mass_flux, dtype=float)
    d = np.broadcast_to(np.asarray(d_pipe, dtype=float), m.shape)
    k = np.broadcast_to(np.asarray(roughness, dtype=float), m.shape)
    re_raw = d * np.abs(m) / eta
    clamped = re_raw < RE_MIN
    re = np.where(clamped, RE_MIN, re_raw)
    rel = k / (3.71 * d)
    x = _colebrook_x(np.atleast_1d(re), np.atleast_1d(rel)).reshape(re.shape)
    lam = x**-2
    if not derivative:
        return lam if lam.ndim else float(lam)

    # implicit differentiation of x - g(x, Re) = 0
    arg = 2.51 * x / re + rel
    dg_dx = -2.0 / LN10 * (2.51 / re) / arg
    dg_dre = 2.0 / LN10 * (2.51 * x / re**2) / arg
    dx_dre = dg_dre / (1.0 - dg_dx)
    dlam_dre = -2.0 * x**-3 * dx_dre
    dre_dm = np.where(clamped, 0.0, d * np.sign(m) / eta)
    dlam = dlam_dre * dre_dm
    if lam.ndim:
        return lam, dlam
    return float(lam), float(dlam)


def friction_terms(rho, m, d_pipe, roughness, eta):
    """Momentum source S = -lambda/(2d) m|m|/rho and its partials (dS/drho, dS/dm)."""
    lam, dlam = friction_lambda(m, d_pipe, roughness, eta, derivative=True)
    mm = m * np.abs(m)
    coef = -1.0 / (2.0 * d_pipe)
    s = coef * lam * mm / rho
    ds_drho = -s / rho
    ds_dm = coef * (dlam * mm + lam * 2.0 * np.abs(m)) / rho
    return s, ds_drho, ds_dm


def friction_source(rho, q, pipe, const: GasConstants = GasConstants()):
    """Friction source [kg/(m^2 s^2)] for volumetric flow ``q`` in ``pipe``."""
    m = const.rho0 * np.asarray(q, dtype=float) / pipe.area
    s, _, _ = friction_terms(np.asarray(rho, dtype=float), m, pipe.diameter, pipe.roughness, const.eta)
    return s if np.ndim(s) else float(s)


# --------------------------------------------------------------------------
# box scheme


def box_scheme_cells(rho_old, q_old, rho_new, q_new, dt, dx, area, d_pipe, roughness,
                     const: GasConstants = GasConstants(), time_weight=1.0):
    """Residuals of the implicit box scheme on a batch of cells.

    Every argument is an array over cells (or broadcastable); ``*_old`` and
    ``*_new`` are pairs ``(left, right)`` of arrays.  Returns ``(r1, r2, jac)``
    where ``r1`` is in kg/m^3, ``r2`` in kg/(m^2 s) and ``jac`` maps
    ``(row, var)`` with row in {1, 2} and var in {"rl", "ql", "rr", "qr"}
    (derivatives w.r.t. the NEW density / volumetric flow at the left and
    right grid point).

    ``time_weight=0`` drops the time difference, which gives the steady
    discretization used for initialization.
    """
    (rl0, rr0), (ql0, qr0) = rho_old, q_old
    (rl, rr), (ql, qr) = rho_new, q_new
    if np.any(rl <= 0) or np.any(rr <= 0):
        raise GasModelError("non-positive density in box scheme")
    scale = const.rho0 / area
    ml, mr = scale * ql, scale * qr
    ml0, mr0 = scale * ql0, scale * qr0
    lam = dt / dx

    r1 = time_weight * (0.5 * (rl + rr) - 0.5 * (rl0 + rr0)) + lam * (mr - ml)

    pl, pr = pressure(rl, const), pressure(rr, const)
    dpl, dpr = dpressure(rl, const), dpressure(rr, const)
    f2l = pl + ml * ml / rl
    f2r = pr + mr * mr / rr
    sl, sl_r, sl_m = friction_terms(rl, ml, d_pipe, roughness, const.eta)
    sr, sr_r, sr_m = friction_terms(rr, mr, d_pipe, roughness, const.eta)
    r2 = (time_weight * (0.5 * (ml + mr) - 0.5 * (ml0 + mr0))
          + lam * (f2r - f2l) - 0.5 * dt * (sl + sr))

    half = 0.5 * time_weight
    jac = {
        (1, "rl"): half + 0.0 * rl,
        (1, "rr"): half + 0.0 * rr,
        (1, "ql"): -lam * scale + 0.0 * rl,
        (1, "qr"): lam * scale + 0.0 * rr,
        (2, "rl"): -lam * (dpl - ml * ml / rl**2) - 0.5 * dt * sl_r,
        (2, "rr"): lam * (dpr - mr * mr / rr**2) - 0.5 * dt * sr_r,
        (2, "ql"): scale * (half - lam * 2.0 * ml / rl - 0.5 * dt * sl_m),
        (2, "qr"): scale * (half + lam * 2.0 * mr / rr - 0.5 * dt * sr_m),
    }
    return r1, r2, jac


def box_scheme_residual(old, new, dt, pipe, const: GasConstants = GasConstants()):
    """Box scheme residual for every cell of one pipe.

    ``old`` and ``new`` are ``(rho, q)`` arrays over the M+1 grid points.
    Returns an (M, 2) array.
    """
    rho0_, q0_ = (np.asarray(a, dtype=float) for a in old)
    rho1, q1 = (np.asarray(a, dtype=float) for a in new)
    n_cells = rho1.size - 1
    dx = pipe.length / n_cells
    r1, r2, _ = box_scheme_cells(
        (rho0_[:-1], rho0_[1:]), (q0_[:-1], q0_[1:]),
        (rho1[:-1], rho1[1:]), (q1[:-1], q1[1:]),
        dt, dx, pipe.area, pipe.diameter, pipe.roughness, const,
    )
    return np.column_stack([r1, r2])


# --------------------------------------------------------------------------
# node coupling


def bernoulli_invariant(p, q, area, const: GasConstants = GasConstants()):
    """Bernoulli invariant [J/kg] at pressure ``p`` [Pa] and volumetric flow ``q``.

    The first term is half the squared flow velocity, the second the
    pressure potential, integrated in closed form from ``p0``.
    """
    if area is None or not area > 0:
        raise GasModelError("Bernoulli invariant needs a positive cross section")
    p = np.asarray(p, dtype=float)
    v = const.rho0 * np.asarray(q, dtype=float) / (density(p, const) * area)
    p_bar = p / BAR
    out = 0.5 * v * v + const.c_vac2 * (np.log(p_bar / const.p0) + const.alpha * (p_bar - const.p0))
    return out if np.ndim(out) else float(out)


def bernoulli_in_density(rho, q, area, const: GasConstants = GasConstants()):
    """Bernoulli invariant as a function of (rho, q) with partial derivatives."""
    p = pressure(rho, const)
    h = bernoulli_invariant(p, q, area, const)
    w = const.rho0 / area
    dh_drho = -(w * q) ** 2 / rho**3 + dpressure(rho, const) / rho
    dh_dq = w * w * q / rho**2
    return h, dh_drho, dh_dq


@dataclass(frozen=True)
class EndState:
    """State of one edge end attached to a node.

    ``sign`` is +1 if positive edge flow enters the node, -1 otherwise.
    """

    rho: float
    q: float
    area: float | None
    sign: int


def invariant(end: EndState, kind: CouplingKind, const: GasConstants = GasConstants()):
    """Coupling invariant of one end with its (rho, q) partials."""
    if kind is CouplingKind.PRESSURE:
        return pressure(end.rho, const), dpressure(end.rho, const), 0.0
    if end.area is None:
        raise GasModelError("Bernoulli coupling requested at an edge without cross section")
    h, dr, dq = bernoulli_in_density(end.rho, end.q, end.area, const)
    return float(h), float(dr), float(dq)


def coupling_residual(ends: Sequence[EndState], withdrawal: float, kind: CouplingKind,
                      const: GasConstants = GasConstants()):
    """Mass balance plus invariant equalities at a node with ``l`` ends.

    ``withdrawal`` is the net flow leaving the network at the node (sink
    outflow positive, source inflow negative).  Returns a length-``l`` array:
    ``sum(sign*q) - withdrawal`` followed by ``H_k - H_{k-1}``.
    """
    if not ends:
        raise GasModelError("node without attached edges")
    kind = CouplingKind(kind)
    out = np.empty(len(ends))
    out[0] = sum(e.sign * e.q for e in ends) - withdrawal
    values = [invariant(e, kind, const)[0] for e in ends]
    for k in range(1, len(ends)):
        out[k] = values[k] - values[k - 1]
    return out

"""Gas-power conversion plants.

A plant links a gas sink to a slack bus.  The active power ``P`` [MW] the
slack bus injects into the grid is covered by burning gas (``P > 0``, gas
to power) or surplus power is turned into gas (``P < 0``, power to gas).
The resulting sink outflow ``q`` [m^3/s] follows a piecewise-linear law
whose kink at ``P = 0`` is replaced by a quartic on ``[-eps, eps]``.
Since 1 MW = 1 MJ/s, ``q = E*P`` with ``E`` in m^3/MJ needs no further
unit conversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConversionConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConversionFactors:
    eta_gtp: float = 0.4
    eta_ptg: float = 0.8
    lower_heating_value: float = 40.0  # MJ/kg
    upper_heating_ratio: float = 1.11

    @property
    def upper_heating_value(self) -> float:
        return self.upper_heating_ratio * self.lower_heating_value

    def e_gtp(self, rho0: float) -> float:
        """Gas volume burnt per MJ of electricity [m^3/MJ]."""
        return 1.0 / (rho0 * self.lower_heating_value * self.eta_gtp)

    def e_ptg(self, rho0: float) -> float:
        """Gas volume produced per MJ of electricity [m^3/MJ]."""
        return self.eta_ptg / (rho0 * self.upper_heating_value)


@dataclass(frozen=True)
class ConversionEdge:
    id: str
    gas_node: str
    bus: str
    e_gtp: float  # m^3/MJ
    e_ptg: float  # m^3/MJ
    epsilon: float = 1.0  # MW

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConversionConfigError(f"conversion edge {self.id}: epsilon must be positive")
        if not (self.e_gtp > 0 and self.e_ptg > 0):
            raise ConversionConfigError(f"conversion edge {self.id}: factors must be positive")


def smoothing_s(x, a, b, eps):
    """Quartic blend with S(0)=0, S(eps)=a*eps, S(-eps)=-b*eps, S'(eps)=a, S'(-eps)=b."""
    x = np.asarray(x, dtype=float)
    r = x / eps
    out = x * (0.5 * (a + b) - 0.75 * (b - a) * r + 0.25 * (b - a) * r**3)
    return out if out.ndim else float(out)


def smoothing_ds(x, a, b, eps):
    """Derivative of :func:`smoothing_s` with respect to ``x``."""
    x = np.asarray(x, dtype=float)
    r = x / eps
    out = 0.5 * (a + b) - 1.5 * (b - a) * r + (b - a) * r**3
    return out if out.ndim else float(out)


def conversion_flow(power, edge: ConversionEdge, derivative=False):
    """Sink outflow [m^3/s] for slack-bus power ``power`` [MW]; C^1 in ``power``."""
    p = np.asarray(power, dtype=float)
    a, b, eps = edge.e_gtp, edge.e_ptg, edge.epsilon
    q = np.where(p > eps, a * p, np.where(p < -eps, b * p, smoothing_s(p, a, b, eps)))
    if not derivative:
        return q if q.ndim else float(q)
    dq = np.where(p > eps, a, np.where(p < -eps, b, smoothing_ds(p, a, b, eps)))
    if q.ndim:
        return q, dq
    return float(q), float(dq)


def conversion_residual(q, power, edge: ConversionEdge):
    """Residual ``q - conversion_flow(power)``; ``power`` in MW, ``q`` in m^3/s."""
    return q - conversion_flow(power, edge)


def check_monotone(edge: ConversionEdge, samples: int = 2001) -> None:
    """Reject factor/epsilon combinations whose smoothed segment is not increasing."""
    # S' is a cubic in x; its minimum over [-eps, eps] sits at an endpoint or
    # at r = +-1/sqrt(2).
    a, b, eps = edge.e_gtp, edge.e_ptg, edge.epsilon
    r = np.concatenate([np.linspace(-1.0, 1.0, samples), [-(0.5**0.5), 0.5**0.5]])
    slope = smoothing_ds(r * eps, a, b, eps)
    if np.min(slope) <= 0:
        raise ConversionConfigError(
            f"conversion edge {edge.id}: smoothed conversion law is not monotone "
            f"(min slope {np.min(slope):.3g})"
        )

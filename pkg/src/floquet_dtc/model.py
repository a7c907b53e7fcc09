"""Model constants, the Floquet drive schedule and observable conventions."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np


class ParameterError(ValueError):
    """Raised for physically invalid model or protocol parameters."""


@dataclass(frozen=True)
class SystemParams:
    """All model constants, in units where ``hbar = 1``.

    Only ``omega_T`` and ``epsilon`` are stored for the two frequencies; the
    cavity frequency ``omega = (1 - epsilon) * omega_T`` and the spin
    frequency ``omega0 = (1 + epsilon) * omega_T`` are derived on access so
    they can never drift out of sync.

    ``lam`` is the spin-cavity coupling during the "on" half of the drive
    (``lambda`` is a Python keyword).
    """

    omega_T: float = 1.0
    epsilon: float = 0.0
    lam: float = 1.0
    h: float = 0.0
    gamma: float = 0.0
    Gamma: float = 0.0
    Gamma_tilde: float = 0.0
    n_spins: int = 2

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ParameterError(f"{f.name} must be finite, got {value!r}")
        if self.omega_T <= 0:
            raise ParameterError(f"omega_T must be positive, got {self.omega_T}")
        if abs(self.epsilon) >= 1:
            raise ParameterError(f"|epsilon| must be < 1, got {self.epsilon}")
        for name in ("gamma", "Gamma", "Gamma_tilde", "lam"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative, got {getattr(self, name)}")
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise ParameterError(f"n_spins must be a positive integer, got {self.n_spins}")

    @property
    def omega(self) -> float:
        return (1.0 - self.epsilon) * self.omega_T

    @property
    def omega0(self) -> float:
        return (1.0 + self.epsilon) * self.omega_T

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega_T

    def replace(self, **changes) -> SystemParams:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return SystemParams(**values)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["omega"] = self.omega
        out["omega0"] = self.omega0
        out["period"] = self.period
        return out


def make_params(
    omega_T: float = 1.0,
    epsilon: float = 0.0,
    lam: float = 1.0,
    h: float = 0.0,
    gamma: float = 0.0,
    Gamma: float = 0.0,
    Gamma_tilde: float = 0.0,
    n_spins: int = 2,
) -> SystemParams:
    """Build a validated :class:`SystemParams`.

    >>> p = make_params(omega_T=1.0, epsilon=0.05)
    >>> round(p.omega, 12), round(p.omega0, 12)
    (0.95, 1.05)
    """
    return SystemParams(
        omega_T=float(omega_T),
        epsilon=float(epsilon),
        lam=float(lam),
        h=float(h),
        gamma=float(gamma),
        Gamma=float(Gamma),
        Gamma_tilde=float(Gamma_tilde),
        n_spins=int(n_spins),
    )


@dataclass(frozen=True)
class DriveProtocol:
    """Square-wave coupling: ``lambda_on`` for the first half of every period, 0 after."""

    period: float
    lambda_on: float
    n_periods: int

    def __post_init__(self):
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ParameterError(f"period must be positive, got {self.period}")
        if self.n_periods < 1:
            raise ParameterError(f"n_periods must be >= 1, got {self.n_periods}")
        if self.lambda_on < 0:
            raise ParameterError(f"lambda_on must be non-negative, got {self.lambda_on}")

    @classmethod
    def from_params(cls, params: SystemParams, n_periods: int) -> DriveProtocol:
        return cls(period=params.period, lambda_on=params.lam, n_periods=int(n_periods))

    def bind(self, steps_per_period: int) -> float:
        """Return the step size for ``steps_per_period``, checking switch alignment."""
        if steps_per_period < 2 or steps_per_period % 2:
            raise ParameterError(
                f"steps_per_period must be a positive even integer, got {steps_per_period}"
            )
        return self.period / steps_per_period


def lambda_at(t: float, protocol: DriveProtocol) -> float:
    """Coupling at time ``t`` on the half-open schedule ``[nT, nT + T/2)`` on.

    Periodicity is exact away from float rounding at the switch instants.
    """
    phase = math.fmod(t, protocol.period)
    if phase < 0:
        phase += protocol.period
    return protocol.lambda_on if phase < 0.5 * protocol.period else 0.0


def critical_coupling(params: SystemParams) -> float:
    """Coupling above which the undriven semiclassical flow breaks Z2 symmetry."""
    omega, omega0, gamma = params.omega, params.omega0, params.gamma
    if omega <= 0:
        raise ParameterError(f"cavity frequency must be positive, got {omega}")
    return 0.5 * math.sqrt((omega0 / omega) * (omega**2 + 0.25 * gamma**2))


OBSERVABLE_NAMES = ("jx", "jy", "jz", "x", "p")


@dataclass(frozen=True)
class ScaledObservables:
    """Scaled collective spin components and cavity quadratures.

    ``j_mu = <J_mu> / (N/2)``, ``x = <a + a^dag> / sqrt(2 N omega)`` and
    ``p = i <a^dag - a> / sqrt(2 N / omega)``.
    """

    jx: float
    jy: float
    jz: float
    x: float
    p: float

    @classmethod
    def from_array(cls, values) -> ScaledObservables:
        jx, jy, jz, x, p = (float(v) for v in values)
        return cls(jx, jy, jz, x, p)

    def as_array(self) -> np.ndarray:
        return np.array([self.jx, self.jy, self.jz, self.x, self.p])

    @property
    def spin_norm_sq(self) -> float:
        return self.jx**2 + self.jy**2 + self.jz**2

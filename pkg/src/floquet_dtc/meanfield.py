"""Thermodynamic-limit semiclassical flow of the driven spin-cavity system.

The state is the 5-vector ``(jx, jy, jz, x, p)``: scaled collective spin
components and scaled cavity quadratures. The equations of motion are

    jx' = -w0 jy - h jy jz + (G/2) jx jz - Gt jx
    jy' =  w0 jx - c x jz + h jx jz + (G/2) jy jz - Gt jy
    jz' =  c x jy + (G/2) (jz^2 - 1)
    x'  =  p - (g/2) x
    p'  = -w^2 x - (g/2) p - c jx

with ``c = 2 lambda sqrt(2 w)``, cavity loss ``g``, collective spin damping
``G`` and dephasing ``Gt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from floquet_dtc.diagnostics import (
    SteadyState,
    SteadyStateClass,
    StroboscopicRecord,
    alternates,
)
from floquet_dtc.integrator import IntegrationError, StepperConfig, integrate_interval
from floquet_dtc.model import (
    DriveProtocol,
    ParameterError,
    ScaledObservables,
    SystemParams,
    critical_coupling,
)

MeanFieldState = ScaledObservables

#: Spins along +x, cavity at the origin.
INITIAL_STATE = np.array([1.0, 0.0, 0.0, 0.0, 0.0])

DEFAULT_STEPS_PER_PERIOD = 1000
BLOWUP_BOUND = 1e6
OSCILLATION_WINDOW = 50


@numba.njit(cache=True)
def flow(t, y, args):
    """Numba-compiled right-hand side; ``args = (w0, w, h, lam, g, G, Gt)``."""
    w0, w, h, lam, g, G, Gt = args
    jx, jy, jz, x, p = y[0], y[1], y[2], y[3], y[4]
    c = 2.0 * lam * math.sqrt(2.0 * w)
    out = np.empty(5)
    out[0] = -w0 * jy - h * jy * jz + 0.5 * G * jx * jz - Gt * jx
    out[1] = w0 * jx - c * x * jz + h * jx * jz + 0.5 * G * jy * jz - Gt * jy
    out[2] = c * x * jy + 0.5 * G * (jz * jz - 1.0)
    out[3] = p - 0.5 * g * x
    out[4] = -w * w * x - 0.5 * g * p - c * jx
    return out


def flow_args(params: SystemParams, lambda_now: float) -> tuple:
    return (
        float(params.omega0), float(params.omega), float(params.h), float(lambda_now),
        float(params.gamma), float(params.Gamma), float(params.Gamma_tilde),
    )


def mean_field_rhs(state, params: SystemParams, lambda_now: float) -> np.ndarray:
    """Time derivative of ``(jx, jy, jz, x, p)`` at coupling ``lambda_now``."""
    if lambda_now < 0:
        raise ParameterError(f"lambda_now must be non-negative, got {lambda_now}")
    y = _as_vector(state)
    return flow(0.0, y, flow_args(params, lambda_now))


def _as_vector(state) -> np.ndarray:
    if isinstance(state, ScaledObservables):
        y = state.as_array()
    else:
        y = np.asarray(state, dtype=float).reshape(5).copy()
    if not np.all(np.isfinite(y)):
        raise ValueError(f"state must be finite, got {y}")
    return y


@dataclass(frozen=True)
class Attractors:
    """The two symmetry-broken fixed points at ``h = 0``.

    ``plus`` has ``jx > 0`` (cavity at ``x < 0``), ``minus`` is its Z2 image.
    ``residual`` is the largest ``|rhs|`` component over both points,
    evaluated on the flow with the spin loss channels switched off.
    """

    mu: float
    plus: np.ndarray
    minus: np.ndarray
    residual: float


def stable_attractors(params: SystemParams, validate: bool = True) -> Attractors | None:
    """Closed-form symmetry-broken fixed points of the undriven flow.

    With ``mu = (lambda_c / lambda)**2`` the fixed points on the unit sphere
    are ``jx = +-sqrt(1 - mu**2 / 4)``, ``jy = 0``, ``jz = -mu / 2`` with
    ``x = -c jx / (w**2 + g**2/4)`` and ``p = g x / 2``. They exist for
    ``mu <= 2``; ``None`` is returned below that threshold.

    The spin damping and dephasing rates are ignored: both channels pull
    ``jz`` away from ``-mu/2`` so no closed form survives them. With
    ``validate`` the points are substituted back into the flow and a
    residual above 1e-9 raises ``RuntimeError``.
    """
    if params.h != 0:
        raise ParameterError("closed-form attractors only exist for h = 0")
    if params.lam <= 0:
        raise ParameterError(f"lambda must be positive, got {params.lam}")

    lam_c = critical_coupling(params)
    mu = (lam_c / params.lam) ** 2
    if mu > 2.0:
        return None
    w, g = params.omega, params.gamma
    c = 2.0 * params.lam * math.sqrt(2.0 * w)
    jx = math.sqrt(max(0.0, 1.0 - 0.25 * mu * mu))
    jz = -0.5 * mu
    x = -c * jx / (w * w + 0.25 * g * g)
    p = 0.5 * g * x
    plus = np.array([jx, 0.0, jz, x, p])
    minus = np.array([-jx, 0.0, jz, -x, -p])

    lossless = params.replace(Gamma=0.0, Gamma_tilde=0.0)
    residual = max(
        float(np.max(np.abs(mean_field_rhs(pt, lossless, params.lam)))) for pt in (plus, minus)
    )
    if validate and residual > 1e-9:
        raise RuntimeError(f"attractor residual {residual:.3e} exceeds 1e-9")
    return Attractors(mu=mu, plus=plus, minus=minus, residual=residual)


@dataclass
class MeanFieldRun:
    """Result of :func:`run_floquet`.

    ``times``/``states`` hold the full-resolution trajectory (including
    ``t = 0``) at the requested stride; ``record`` holds the samples at
    ``t = n T``.
    """

    params: SystemParams
    protocol: DriveProtocol
    steps_per_period: int
    times: np.ndarray
    states: np.ndarray
    record: StroboscopicRecord

    @property
    def final(self) -> np.ndarray:
        return self.record.values[-1]


def run_floquet(
    params: SystemParams,
    protocol: DriveProtocol | None = None,
    initial=None,
    steps_per_period: int = DEFAULT_STEPS_PER_PERIOD,
    record_stride: int = 1,
    n_periods: int | None = None,
) -> MeanFieldRun:
    """Integrate the semiclassical flow under the square-wave drive.

    Each period is integrated as two constant-coupling halves, so the RK4
    stages never see the switch. Raises
    :class:`~floquet_dtc.integrator.IntegrationError` if any component
    exceeds 1e6 or turns non-finite; the run up to the last completed
    period is attached to the exception as ``partial``.
    """
    if protocol is None:
        protocol = DriveProtocol.from_params(params, n_periods or 500)
    y = _as_vector(INITIAL_STATE if initial is None else initial)
    dt = protocol.bind(steps_per_period)
    half = steps_per_period // 2
    if record_stride < 1 or half % record_stride:
        raise ParameterError(
            f"record_stride ({record_stride}) must divide half a period ({half} steps)"
        )
    config = StepperConfig(dt=dt, record_stride=record_stride, bound=BLOWUP_BOUND)
    on_args = flow_args(params, protocol.lambda_on)
    off_args = flow_args(params, 0.0)

    T = protocol.period
    times, states = [np.zeros(1)], [y[None, :]]
    strobe = [y]

    def build():
        record = StroboscopicRecord(n=np.arange(len(strobe)), values=np.array(strobe), period=T)
        return MeanFieldRun(
            params=params,
            protocol=protocol,
            steps_per_period=steps_per_period,
            times=np.concatenate(times),
            states=np.concatenate(states),
            record=record,
        )

    try:
        for n in range(protocol.n_periods):
            t0 = n * T
            for args, a, b in ((on_args, 0, half), (off_args, half, 2 * half)):
                y, ts, recs = integrate_interval(y, flow, t0 + a * dt, t0 + b * dt, config, args)
                times.append(ts)
                states.append(recs)
            strobe.append(y)
    except IntegrationError as err:
        if len(getattr(err, "records", ())):
            times.append(err.times)
            states.append(err.records)
        err.partial = build()
        raise
    return build()


def known_fixed_points(params: SystemParams) -> dict:
    points = {
        SteadyState.TRIVIAL_UP: np.array([0.0, 0.0, 1.0, 0.0, 0.0]),
        SteadyState.TRIVIAL_DOWN: np.array([0.0, 0.0, -1.0, 0.0, 0.0]),
    }
    if params.h == 0 and params.lam > 0:
        att = stable_attractors(params, validate=False)
        if att is not None:
            points[SteadyState.NONTRIVIAL_PLUS] = att.plus
            points[SteadyState.NONTRIVIAL_MINUS] = att.minus
    return points


def classify_steady_state(
    final,
    params: SystemParams,
    tol: float = 1e-3,
    samples=None,
    window: int = OSCILLATION_WINDOW,
) -> SteadyStateClass:
    """Tag the end state of a run.

    The nearest known fixed point within Euclidean distance ``tol`` wins;
    otherwise, if the last ``window`` stroboscopic ``jx`` values in
    ``samples`` alternate in sign with magnitude above ``tol``, the state is
    ``Oscillating``; otherwise ``Unclassified``. ``residual`` is the largest
    ``|rhs|`` component at ``final`` with the coupling on.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = _as_vector(final)
    residual = float(np.max(np.abs(mean_field_rhs(y, params, params.lam))))
    best, best_dist = None, math.inf
    for tag, point in known_fixed_points(params).items():
        dist = float(np.linalg.norm(y - point))
        if dist < best_dist:
            best, best_dist = tag, dist
    if best_dist <= tol:
        return SteadyStateClass(best, residual, best_dist)
    if samples is not None:
        tail = np.asarray(samples, dtype=float)[-window:]
        if len(tail) >= window and alternates(tail, tol):
            return SteadyStateClass(SteadyState.OSCILLATING, residual, best_dist)
    return SteadyStateClass(SteadyState.UNCLASSIFIED, residual, best_dist)

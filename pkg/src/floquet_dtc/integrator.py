"""Fixed-step classical Runge-Kutta (RK4) integration.

The right-hand side is called as ``rhs(t, y, args)`` and must return an array
shaped like ``y``. When ``rhs`` is a numba-compiled function, the stepping
loop runs compiled as well; any other callable goes through a pure Python
loop with identical arithmetic.

Callers that integrate a piecewise-constant drive split the run at the
switch times and pass the constant drive value through ``args``, so a step
never straddles a discontinuity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np


class IntegrationError(RuntimeError):
    """A run was aborted by the blow-up guard or a monitor."""

    def __init__(self, message: str, step: int | None = None, t: float | None = None):
        if step is not None:
            message = f"{message} (step {step}, t={t:.6g})"
        super().__init__(message)
        self.step = step
        self.t = t


def rk4_step(y, rhs, args, t, dt):
    """One classical RK4 step of size ``dt`` from ``(t, y)``."""
    half = 0.5 * dt
    k1 = rhs(t, y, args)
    k2 = rhs(t + half, y + half * k1, args)
    k3 = rhs(t + half, y + half * k2, args)
    k4 = rhs(t + dt, y + dt * k3, args)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_rk4_step_jit = numba.njit(rk4_step, cache=True)


@numba.njit(cache=True)
def _advance_jit(y, rhs, args, t0, dt, n_steps, stride, bound):
    n_rec = n_steps // stride
    records = np.empty((n_rec,) + y.shape, dtype=y.dtype)
    r = 0
    for k in range(n_steps):
        y = _rk4_step_jit(y, rhs, args, t0 + k * dt, dt)
        worst = np.max(np.abs(y))
        if not (worst <= bound and np.isfinite(worst)):
            return y, records[:r], k + 1
        if (k + 1) % stride == 0:
            records[r] = y
            r += 1
    return y, records, n_steps


def _advance_py(y, rhs, args, t0, dt, n_steps, stride, bound):
    records = []
    for k in range(n_steps):
        y = rk4_step(y, rhs, args, t0 + k * dt, dt)
        worst = np.max(np.abs(y))
        if not (worst <= bound and np.isfinite(worst)):
            return y, np.array(records), k + 1
        if (k + 1) % stride == 0:
            records.append(y)
    if records:
        return y, np.stack(records), n_steps
    return y, np.empty((0,) + np.shape(y), dtype=np.result_type(y)), n_steps


def _is_jitted(fn) -> bool:
    return isinstance(fn, numba.core.registry.CPUDispatcher)


Monitor = Callable[[int, float, np.ndarray], None]


@dataclass
class StepperConfig:
    """Step size, record stride and checks for :func:`integrate_interval`.

    ``monitors`` are called as ``monitor(step, t, y)`` at every record point
    and at the end of the interval; they signal failure by raising
    :class:`IntegrationError`. Finiteness and the ``bound`` guard are checked
    after every single step.
    """

    dt: float
    record_stride: int = 1
    monitors: Sequence[Monitor] = field(default_factory=tuple)
    bound: float = math.inf

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if self.record_stride < 1:
            raise ValueError(f"record_stride must be >= 1, got {self.record_stride}")


def steps_between(t0: float, t1: float, dt: float) -> int:
    """Number of steps of size ``dt`` spanning ``[t0, t1]``; must be integral."""
    n = (t1 - t0) / dt
    k = round(n)
    if k < 0 or abs(n - k) > 1e-9 * max(1.0, abs(n)):
        raise ValueError(f"interval [{t0}, {t1}] is not an integer number of steps of {dt}")
    return int(k)


def integrate_interval(y0, rhs, t0: float, t1: float, config: StepperConfig, args=()):
    """Integrate from ``t0`` to ``t1`` with fixed RK4 steps.

    Returns ``(y, times, records)`` where ``records[i]`` is the state at
    ``times[i]``; records are taken every ``config.record_stride`` steps,
    counted from ``t0`` (the start state itself is not recorded).

    Raises :class:`IntegrationError` carrying the step index and time when a
    state turns non-finite, exceeds ``config.bound``, or a monitor rejects it;
    the records taken before the failure are attached as ``times`` and
    ``records``.
    """
    dt = config.dt
    n_steps = steps_between(t0, t1, dt)
    stride = config.record_stride
    y = np.array(y0, copy=True)
    if n_steps == 0:
        return y, np.empty(0), np.empty((0,) + y.shape, dtype=y.dtype)

    advance = _advance_jit if _is_jitted(rhs) else _advance_py
    # chunk so that monitors see every record point
    chunk = stride if config.monitors else n_steps
    chunk = max(stride, chunk - chunk % stride)
    all_records = []
    done = 0

    def collected():
        records = np.concatenate(all_records) if all_records else np.empty((0,) + y.shape, y.dtype)
        return t0 + dt * stride * np.arange(1, len(records) + 1), records

    try:
        while done < n_steps:
            n = min(chunk, n_steps - done)
            t_start = t0 + done * dt
            y, recs, n_done = advance(y, rhs, args, t_start, dt, n, stride, config.bound)
            if n_done < n or not np.all(np.isfinite(y)):
                all_records.append(recs)
                step = done + n_done
                raise IntegrationError(
                    f"state left the finite region |y| <= {config.bound:g}", step, t0 + step * dt
                )
            done += n
            all_records.append(recs)
            for monitor in config.monitors:
                monitor(done, t0 + done * dt, y)
    except IntegrationError as err:
        # hand the records gathered so far to the caller
        err.times, err.records = collected()
        raise

    times, records = collected()
    return y, times, records

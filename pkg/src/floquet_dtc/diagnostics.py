"""Period-doubling diagnostics on stroboscopic records."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from floquet_dtc.model import OBSERVABLE_NAMES, ScaledObservables

#: Default number of trailing periods analysed (the "last 100 periods").
DEFAULT_WINDOW = 100
#: Default amplitude below which an oscillation no longer counts as alive.
DEFAULT_LIFETIME_THRESHOLD = 5e-3
#: A transient DTC must outlive ``C * max(1/gamma, 1/Gamma)``.
DEFAULT_TRANSIENT_FACTOR = 3.0


class SteadyState(str, enum.Enum):
    TRIVIAL_UP = "TrivialUp"
    TRIVIAL_DOWN = "TrivialDown"
    NONTRIVIAL_PLUS = "NontrivialPlus"
    NONTRIVIAL_MINUS = "NontrivialMinus"
    OSCILLATING = "Oscillating"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class SteadyStateClass:
    tag: SteadyState
    residual: float
    distance: float = math.nan


@dataclass
class StroboscopicRecord:
    """Scaled observables sampled at ``t = n T``; sample 0 is the initial state."""

    n: np.ndarray
    values: np.ndarray
    period: float

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.n), 5)
        if len(self.n) > 1 and np.any(np.diff(self.n) <= 0):
            raise ValueError("stroboscopic indices must be strictly increasing")

    def __len__(self):
        return len(self.n)

    @property
    def t(self) -> np.ndarray:
        return self.n * self.period

    def column(self, name: str) -> np.ndarray:
        return self.values[:, OBSERVABLE_NAMES.index(name)]

    jx = property(lambda self: self.column("jx"))
    jy = property(lambda self: self.column("jy"))
    jz = property(lambda self: self.column("jz"))
    x = property(lambda self: self.column("x"))
    p = property(lambda self: self.column("p"))

    def sample(self, i: int) -> ScaledObservables:
        return ScaledObservables.from_array(self.values[i])

    def last(self, k: int) -> StroboscopicRecord:
        return StroboscopicRecord(self.n[-k:], self.values[-k:], self.period)


def subharmonic_weight(samples) -> float:
    """Normalised amplitude of the sign-alternating component of ``samples``.

    ``|sum_n (-1)^n s_n| / sum_n |s_n|``, which is 1 for a perfect
    period-doubled signal and 0 for a constant one. Returns 0 when every
    sample is below 1e-12 in magnitude.
    """
    s = np.asarray(samples, dtype=float)
    if s.size < 4:
        raise ValueError(f"need at least 4 samples, got {s.size}")
    total = np.sum(np.abs(s))
    if np.all(np.abs(s) < 1e-12):
        return 0.0
    signs = np.where(np.arange(s.size) % 2 == 0, 1.0, -1.0)
    return float(min(1.0, abs(np.dot(signs, s)) / total))


def dtc_lifetime(samples, amplitude_threshold: float = DEFAULT_LIFETIME_THRESHOLD, onset: int = 0):
    """Length of the initial sign-alternating run of ``samples``.

    Returns the largest index ``n`` such that every sample from ``onset`` to
    ``n`` exceeds ``amplitude_threshold`` in magnitude and each of them after
    the first flips sign relative to its predecessor. ``math.inf`` means the
    alternation holds through the last sample. A run that never starts, or
    a record too short to show a single sign flip, reports ``onset``.

    ``onset`` skips an initial transient: the quadrature ``x`` only settles
    into alternation a few periods after the drive starts.
    """
    if amplitude_threshold <= 0:
        raise ValueError("amplitude_threshold must be positive")
    s = np.asarray(samples, dtype=float)
    if onset + 1 >= s.size or abs(s[onset]) <= amplitude_threshold:
        return onset
    n = onset
    for m in range(onset + 1, s.size):
        if abs(s[m]) > amplitude_threshold and s[m] * s[m - 1] < 0:
            n = m
        else:
            return n
    return math.inf


def is_transient_dtc(
    lifetime_periods, period: float, gamma: float, Gamma: float,
    factor: float = DEFAULT_TRANSIENT_FACTOR,
) -> bool:
    """True when the alternation outlives ``factor`` times the longest decay time."""
    decay = decay_time(gamma, Gamma)
    return lifetime_periods * period > factor * decay


def decay_time(gamma: float, Gamma: float) -> float:
    if gamma <= 0 or Gamma <= 0:
        return math.inf
    return max(1.0 / gamma, 1.0 / Gamma)


def alternates(samples, tol: float) -> bool:
    s = np.asarray(samples, dtype=float)
    if s.size < 2:
        return False
    return bool(np.all(np.abs(s) > tol) and np.all(s[1:] * s[:-1] < 0))


@dataclass
class DtcReport:
    subharmonic_weight: float
    lifetime_periods: float
    classification: SteadyStateClass
    decay_time_periods: dict = field(default_factory=dict)
    transient_dtc: bool = False

    def as_dict(self) -> dict:
        return {
            "subharmonic_weight": self.subharmonic_weight,
            "lifetime_periods": _json_lifetime(self.lifetime_periods),
            "classification": self.classification.tag.value,
            "classification_residual": self.classification.residual,
            "decay_time_periods": {
                k: (None if math.isinf(v) else v) for k, v in self.decay_time_periods.items()
            },
            "transient_dtc": self.transient_dtc,
        }


def _json_lifetime(value):
    return "Infinite" if math.isinf(value) else int(value)


def dtc_report(
    record: StroboscopicRecord,
    gamma: float,
    Gamma: float,
    classification: SteadyStateClass,
    window: int = DEFAULT_WINDOW,
    threshold: float = DEFAULT_LIFETIME_THRESHOLD,
    factor: float = DEFAULT_TRANSIENT_FACTOR,
) -> DtcReport:
    jx = record.jx
    tail = jx[-min(window, len(jx)):]
    weight = subharmonic_weight(tail) if tail.size >= 4 else 0.0
    lifetime = dtc_lifetime(jx, threshold)
    T = record.period
    decay = {
        "gamma": math.inf if gamma <= 0 else 1.0 / gamma / T,
        "Gamma": math.inf if Gamma <= 0 else 1.0 / Gamma / T,
    }
    return DtcReport(
        subharmonic_weight=weight,
        lifetime_periods=lifetime,
        classification=classification,
        decay_time_periods=decay,
        transient_dtc=is_transient_dtc(lifetime, T, gamma, Gamma, factor),
    )


STROBOSCOPIC_COLUMNS = ("n", "jx", "jy", "jz")
TRAJECTORY_COLUMNS = ("t",) + OBSERVABLE_NAMES


def bloch_export(record: StroboscopicRecord, times=None, trajectory=None) -> dict:
    """Plot-ready tables: stroboscopic Bloch points and the full-resolution trace.

    Returns ``{"stroboscopic": (m, 4) array of (n, jx, jy, jz),
    "trajectory": (k, 6) array of (t, jx, jy, jz, x, p)}``; the trajectory
    table is empty when no full-resolution data is given.
    """
    strobe = np.column_stack([record.n.astype(float), record.values[:, :3]])
    if trajectory is None:
        traj = np.empty((0, 6))
    else:
        traj = np.column_stack([np.asarray(times, dtype=float), np.asarray(trajectory, dtype=float)])
    return {"stroboscopic": strobe, "trajectory": traj}

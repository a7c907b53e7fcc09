"""Exact few-spin dynamics on the symmetric Dicke sector times a truncated Fock space.

Composite basis index ``s * (n_max + 1) + n`` pairs the Dicke state with
``Jz = N/2 - s`` and the Fock state ``|n>``. All collective operators keep
the dynamics inside the maximal-spin sector, so its ``N + 1`` states are all
that is ever represented.

The master equation is

    drho/dt = -i[H, rho] + gamma D[a] rho + (Gamma/N) D[J-] rho
              + (Gamma_tilde/N) D[2 Jz] rho

with ``D[o] rho = o rho o^dag - {o^dag o, rho}/2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from floquet_dtc.diagnostics import StroboscopicRecord
from floquet_dtc.integrator import (
    IntegrationError,
    StepperConfig,
    integrate_interval,
)
from floquet_dtc.model import DriveProtocol, ParameterError, ScaledObservables, SystemParams

log = logging.getLogger(__name__)

DEFAULT_N_MAX = 16
DEFAULT_ALPHA = 0.01
DEFAULT_STEPS_PER_PERIOD = 2000
DEFAULT_RECORD_STRIDE = 20

TRUNCATION_WARN = 1e-6
TRUNCATION_ABORT = 1e-4
TRACE_ABORT = 1e-6


class TruncationError(IntegrationError):
    """The top Fock level became populated beyond the abort threshold."""


class AccuracyError(IntegrationError):
    """The trace of the density matrix drifted away from one."""


def build_collective_ops(n_spins: int) -> dict:
    """Collective spin matrices on the ``j = N/2`` sector, ordered ``m = j, ..., -j``.

    >>> ops = build_collective_ops(2)
    >>> np.diag(ops["Jz"]).real.tolist()
    [1.0, 0.0, -1.0]
    """
    if n_spins < 1:
        raise ParameterError(f"n_spins must be >= 1, got {n_spins}")
    j = n_spins / 2
    m = j - np.arange(n_spins + 1)
    jz = np.diag(m).astype(complex)
    # <m+1| J+ |m> = sqrt(j(j+1) - m(m+1)); raising m moves one index up
    jplus = np.diag(np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    jminus = jplus.conj().T
    jx = 0.5 * (jplus + jminus)
    jy = -0.5j * (jplus - jminus)
    return {"Jx": jx, "Jy": jy, "Jz": jz, "Jminus": jminus}


def build_boson_ops(n_max: int) -> dict:
    """Truncated ladder operators on ``|0>, ..., |n_max>``."""
    if n_max < 1:
        raise ParameterError(f"n_max must be >= 1, got {n_max}")
    a = np.diag(np.sqrt(np.arange(1, n_max + 1)), k=1).astype(complex)
    a_dag = a.conj().T
    return {"a": a, "a_dag": a_dag, "n_op": np.diag(np.arange(n_max + 1)).astype(complex)}


@dataclass(frozen=True)
class OperatorSet:
    """Collective and bosonic operators lifted to the composite space."""

    n_spins: int
    n_max: int
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    jminus: np.ndarray
    a: np.ndarray
    a_dag: np.ndarray
    n_op: np.ndarray

    @property
    def dim(self) -> int:
        return self.jx.shape[0]

    @property
    def top_fock_indices(self) -> np.ndarray:
        return np.arange(self.n_spins + 1) * (self.n_max + 1) + self.n_max


def build_operators(n_spins: int, n_max: int) -> OperatorSet:
    spin = build_collective_ops(n_spins)
    boson = build_boson_ops(n_max)
    i_s = np.eye(n_spins + 1)
    i_b = np.eye(n_max + 1)
    return OperatorSet(
        n_spins=n_spins,
        n_max=n_max,
        jx=np.kron(spin["Jx"], i_b),
        jy=np.kron(spin["Jy"], i_b),
        jz=np.kron(spin["Jz"], i_b),
        jminus=np.kron(spin["Jminus"], i_b),
        a=np.kron(i_s, boson["a"]),
        a_dag=np.kron(i_s, boson["a_dag"]),
        n_op=np.kron(i_s, boson["n_op"]),
    )


def build_hamiltonian(ops: OperatorSet, params: SystemParams, lambda_now: float) -> np.ndarray:
    """``w0 Jz + w a^dag a + (h/N) Jz^2 + (2 lambda/sqrt(N)) (a + a^dag) Jx``."""
    N = ops.n_spins
    if params.n_spins != N:
        raise ParameterError(f"operators built for N={N}, params have N={params.n_spins}")
    return (
        params.omega0 * ops.jz
        + params.omega * ops.n_op
        + (params.h / N) * (ops.jz @ ops.jz)
        + (2.0 * lambda_now / math.sqrt(N)) * (ops.jx @ (ops.a + ops.a_dag))
    )


def jump_operators(ops: OperatorSet, params: SystemParams) -> list:
    """Collapse operators with their rates folded in; zero-rate channels are dropped."""
    N = ops.n_spins
    channels = [
        (params.gamma, ops.a),
        (params.Gamma / N, ops.jminus),
        (params.Gamma_tilde / N, 2.0 * ops.jz),
    ]
    return [math.sqrt(rate) * op for rate, op in channels if rate > 0]


def lindblad_rhs(rho, H, params: SystemParams, ops: OperatorSet) -> np.ndarray:
    """Dense reference evaluation of the master-equation generator."""
    out = -1j * (H @ rho - rho @ H)
    for L in jump_operators(ops, params):
        LdL = L.conj().T @ L
        out += L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)
    return out


@numba.njit(cache=True)
def _csr_accumulate(indptr, indices, data, offset, r, out, scale):
    # out += scale * A @ r for CSR rows stored at data[offset + ...]
    n = r.shape[1]
    for i in range(indptr.shape[0] - 1):
        for k in range(indptr[i], indptr[i + 1]):
            c = scale * data[offset + k]
            row = r[indices[offset + k]]
            for col in range(n):
                out[i, col] += c * row[col]


@numba.njit(cache=True)
def lindblad_flow(t, rho, args):
    """Compiled generator; ``args`` is :attr:`LindbladGenerator.args`."""
    h_ptr, h_idx, h_dat, l_ptr, l_off, l_idx, l_dat = args
    rho_dag = np.ascontiguousarray(rho.conj().T)
    out = np.zeros_like(rho)
    _csr_accumulate(h_ptr, h_idx, h_dat, 0, rho, out, -1j)
    tmp = np.zeros_like(rho)
    _csr_accumulate(h_ptr, h_idx, h_dat, 0, rho_dag, tmp, -1j)
    out += tmp.conj().T
    for k in range(l_ptr.shape[0]):
        tmp[:, :] = 0.0
        _csr_accumulate(l_ptr[k], l_idx, l_dat, l_off[k], rho_dag, tmp, 1.0)
        _csr_accumulate(l_ptr[k], l_idx, l_dat, l_off[k], np.ascontiguousarray(tmp.conj().T), out, 1.0)
    return out


class LindbladGenerator:
    """Sparse, compiled form of the generator at fixed coupling.

    Uses ``-i (Heff rho - rho Heff^dag) + sum_k L_k rho L_k^dag`` with
    ``Heff = H - (i/2) sum_k L_k^dag L_k``; valid for any square ``rho``.
    """

    def __init__(self, ops: OperatorSet, params: SystemParams, lambda_now: float):
        H = build_hamiltonian(ops, params, lambda_now)
        jumps = jump_operators(ops, params)
        heff = H.astype(complex)
        for L in jumps:
            heff = heff - 0.5j * (L.conj().T @ L)
        h = sp.csr_matrix(heff)
        h.eliminate_zeros()
        d = ops.dim
        ptrs, offs, idx, dat = [], [], [], []
        offset = 0
        for L in jumps:
            m = sp.csr_matrix(L)
            m.eliminate_zeros()
            ptrs.append(m.indptr.astype(np.int64))
            offs.append(offset)
            idx.append(m.indices.astype(np.int64))
            dat.append(m.data.astype(complex))
            offset += m.nnz
        self.args = (
            h.indptr.astype(np.int64),
            h.indices.astype(np.int64),
            h.data.astype(complex),
            np.array(ptrs, dtype=np.int64).reshape(len(jumps), d + 1),
            np.array(offs, dtype=np.int64),
            np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64),
            np.concatenate(dat) if dat else np.zeros(0, dtype=complex),
        )

    def __call__(self, rho) -> np.ndarray:
        return lindblad_flow(0.0, np.ascontiguousarray(rho, dtype=complex), self.args)


def coherent_state(alpha: complex, n_max: int) -> np.ndarray:
    """Truncated coherent-state amplitudes, renormalised after truncation."""
    n = np.arange(n_max + 1)
    if alpha == 0:
        psi = np.zeros(n_max + 1, dtype=complex)
        psi[0] = 1.0
        return psi
    log_mag = -0.5 * abs(alpha) ** 2 + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    psi = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    norm_sq = float(np.sum(np.abs(psi) ** 2))
    if 1.0 - norm_sq > 1e-6:
        raise ParameterError(
            f"n_max={n_max} keeps only {norm_sq:.8f} of the coherent state with alpha={alpha}"
        )
    return psi / math.sqrt(norm_sq)


def dicke_x_state(n_spins: int) -> np.ndarray:
    """All spins along +x, expanded in the ``m = j, ..., -j`` Dicke basis."""
    k = np.arange(n_spins + 1)
    log_binom = gammaln(n_spins + 1) - gammaln(k + 1) - gammaln(n_spins - k + 1)
    return np.exp(0.5 * log_binom - 0.5 * n_spins * math.log(2.0)).astype(complex)


def initial_state(n_spins: int, alpha: complex = DEFAULT_ALPHA, n_max: int = DEFAULT_N_MAX) -> np.ndarray:
    """Pure product of the max-``Jx`` Dicke state and a coherent cavity state."""
    psi = np.kron(dicke_x_state(n_spins), coherent_state(alpha, n_max))
    return np.outer(psi, psi.conj())


def _observable_stack(ops: OperatorSet, params: SystemParams) -> np.ndarray:
    N, w = ops.n_spins, params.omega
    j = N / 2
    quad_p = 1j * (ops.a_dag - ops.a)
    return np.stack([
        ops.jx / j,
        ops.jy / j,
        ops.jz / j,
        (ops.a + ops.a_dag) / math.sqrt(2 * N * w),
        quad_p / math.sqrt(2 * N / w),
    ])


def expectations_many(rhos, ops: OperatorSet, params: SystemParams) -> np.ndarray:
    """Scaled observables for a stack of density matrices, shape ``(k, 5)``."""
    obs = _observable_stack(ops, params)
    rhos = np.asarray(rhos)
    return np.einsum("kij,oji->ko", rhos, obs).real


def expectations(rho, ops: OperatorSet, params: SystemParams) -> ScaledObservables:
    return ScaledObservables.from_array(expectations_many(rho[None], ops, params)[0])


def top_fock_population(rho, ops: OperatorSet) -> float:
    idx = ops.top_fock_indices
    return float(np.sum(rho[idx, idx].real))


@dataclass(frozen=True)
class QuantumConfig:
    params: SystemParams
    n_max: int = DEFAULT_N_MAX
    alpha: complex = DEFAULT_ALPHA
    truncation_abort: float = TRUNCATION_ABORT
    truncation_warn: float = TRUNCATION_WARN

    def __post_init__(self):
        if self.n_max < 1:
            raise ParameterError(f"n_max must be >= 1, got {self.n_max}")


@dataclass
class QuantumRun:
    """Result of :func:`propagate_floquet`.

    ``times``/``observables`` are the full-resolution trace (including
    ``t = 0``); ``record`` the samples at ``t = n T``. ``min_eigenvalues``
    holds the smallest eigenvalue of ``rho(nT)`` for every recorded period.
    """

    config: QuantumConfig
    protocol: DriveProtocol
    steps_per_period: int
    times: np.ndarray
    observables: np.ndarray
    record: StroboscopicRecord
    rho: np.ndarray
    min_eigenvalues: np.ndarray
    max_top_population: float
    max_trace_drift: float
    warnings: list = field(default_factory=list)


class _Watchdog:
    def __init__(self, ops: OperatorSet, config: QuantumConfig):
        self.ops = ops
        self.config = config
        self.max_top = 0.0
        self.max_drift = 0.0
        self.warnings: list = []

    def __call__(self, step, t, rho):
        top = top_fock_population(rho, self.ops)
        drift = abs(np.trace(rho).real - 1.0)
        self.max_top = max(self.max_top, top)
        self.max_drift = max(self.max_drift, drift)
        if top > self.config.truncation_abort:
            raise TruncationError(
                f"top Fock level population {top:.3e} exceeds {self.config.truncation_abort:g}; "
                f"increase n_max (now {self.ops.n_max})", step, t)
        if top > self.config.truncation_warn and not self.warnings:
            msg = f"top Fock level population {top:.3e} exceeds {self.config.truncation_warn:g}"
            self.warnings.append(msg)
            log.warning(msg)
        if drift > TRACE_ABORT:
            raise AccuracyError(f"trace drifted by {drift:.3e}", step, t)


def propagate_floquet(
    config: QuantumConfig,
    protocol: DriveProtocol | None = None,
    steps_per_period: int = DEFAULT_STEPS_PER_PERIOD,
    record_stride: int = DEFAULT_RECORD_STRIDE,
    n_periods: int | None = None,
) -> QuantumRun:
    """RK4 propagation of the master equation under the square-wave drive.

    Raises :class:`TruncationError` / :class:`AccuracyError` when the
    watchdog trips; the partially filled run is attached to the exception
    as ``partial``.
    """
    params = config.params
    if protocol is None:
        protocol = DriveProtocol.from_params(params, n_periods or 50)
    dt = protocol.bind(steps_per_period)
    half = steps_per_period // 2
    if record_stride < 1 or half % record_stride:
        raise ParameterError(
            f"record_stride ({record_stride}) must divide half a period ({half} steps)"
        )
    ops = build_operators(params.n_spins, config.n_max)
    halves = (
        LindbladGenerator(ops, params, protocol.lambda_on).args,
        LindbladGenerator(ops, params, 0.0).args,
    )
    watchdog = _Watchdog(ops, config)
    stepper = StepperConfig(dt=dt, record_stride=record_stride, monitors=(watchdog,), bound=1e3)

    rho = initial_state(params.n_spins, config.alpha, config.n_max)
    T = protocol.period
    times, obs = [np.zeros(1)], [expectations_many(rho[None], ops, params)]
    strobe = [obs[0][0]]
    min_eigs = [float(np.linalg.eigvalsh(rho)[0])]

    def build(rho_now):
        return QuantumRun(
            config=config,
            protocol=protocol,
            steps_per_period=steps_per_period,
            times=np.concatenate(times),
            observables=np.concatenate(obs),
            record=StroboscopicRecord(np.arange(len(strobe)), np.array(strobe), T),
            rho=rho_now,
            min_eigenvalues=np.array(min_eigs),
            max_top_population=watchdog.max_top,
            max_trace_drift=watchdog.max_drift,
            warnings=list(watchdog.warnings),
        )

    try:
        for n in range(protocol.n_periods):
            t0 = n * T
            for args, a, b in ((halves[0], 0, half), (halves[1], half, 2 * half)):
                rho, ts, recs = integrate_interval(
                    rho, lindblad_flow, t0 + a * dt, t0 + b * dt, stepper, args
                )
                times.append(ts)
                obs.append(expectations_many(recs, ops, params))
            strobe.append(obs[-1][-1])
            min_eigs.append(float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]))
    except IntegrationError as err:
        if len(getattr(err, "records", ())):
            times.append(err.times)
            obs.append(expectations_many(err.records, ops, params))
        err.partial = build(rho)
        raise
    return build(rho)


def parity_operator(n_spins: int, n_max: int) -> np.ndarray:
    """``exp(-i pi (a^dag a + Jz))`` as a diagonal matrix on the composite space."""
    m = n_spins / 2 - np.arange(n_spins + 1)
    n = np.arange(n_max + 1)
    phase = np.add.outer(m, n).ravel()
    return np.diag(np.exp(-1j * np.pi * phase))


def _schrodinger(t, U, args):
    return -1j * (args[0] @ U)


def half_period_propagator(
    params: SystemParams, half: str, n_max: int = DEFAULT_N_MAX, steps: int | None = None
) -> np.ndarray:
    """Unitary propagator over the ``"first"`` (coupling on) or ``"second"`` half period.

    The Hamiltonian is constant on each half, so by default the propagator is
    exponentiated exactly through its eigendecomposition; with ``steps`` the
    Schrodinger equation for the full matrix is integrated by RK4 instead.
    """
    if params.gamma or params.Gamma or params.Gamma_tilde:
        raise ParameterError("half_period_propagator is defined for unitary dynamics only")
    if half not in ("first", "second"):
        raise ValueError(f"half must be 'first' or 'second', got {half!r}")
    ops = build_operators(params.n_spins, n_max)
    H = build_hamiltonian(ops, params, params.lam if half == "first" else 0.0)
    tau = 0.5 * params.period
    if steps is None:
        evals, evecs = np.linalg.eigh(H)
        return (evecs * np.exp(-1j * tau * evals)) @ evecs.conj().T
    U, _, _ = integrate_interval(
        np.eye(ops.dim, dtype=complex), _schrodinger, 0.0, tau,
        StepperConfig(dt=tau / steps, record_stride=steps), (H,),
    )
    return U


def phase_aligned_deviation(U: np.ndarray, P: np.ndarray) -> float:
    """Max elementwise ``|e^{i phi} U - P|`` with the best global phase ``phi``."""
    overlap = np.trace(P.conj().T @ U)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.max(np.abs(U / phase - P)))

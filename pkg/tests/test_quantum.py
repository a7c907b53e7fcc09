import logging
import math

import numpy as np
import pytest
from scipy.linalg import expm

from floquet_dtc.meanfield import flow, flow_args
from floquet_dtc.integrator import StepperConfig, integrate_interval
from floquet_dtc.model import DriveProtocol, ParameterError, make_params
from floquet_dtc.quantum import (
    AccuracyError,
    LindbladGenerator,
    QuantumConfig,
    TruncationError,
    _Watchdog,
    build_boson_ops,
    build_collective_ops,
    build_hamiltonian,
    build_operators,
    coherent_state,
    expectations,
    half_period_propagator,
    initial_state,
    lindblad_rhs,
    parity_operator,
    phase_aligned_deviation,
    propagate_floquet,
    top_fock_population,
)

LOSSY = make_params(epsilon=0.05, lam=1.0, h=0.3, gamma=0.2, Gamma=0.3, Gamma_tilde=0.15, n_spins=2)


def random_density(d, rng):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def comm(a, b):
    return a @ b - b @ a


def test_spin_one_matrices():
    ops = build_collective_ops(2)
    np.testing.assert_array_equal(np.diag(ops["Jz"]), [1, 0, -1])
    casimir = ops["Jx"] @ ops["Jx"] + ops["Jy"] @ ops["Jy"] + ops["Jz"] @ ops["Jz"]
    np.testing.assert_allclose(casimir, 2 * np.eye(3), atol=1e-14)


def test_spin_three_halves_spectrum():
    ops = build_collective_ops(3)
    np.testing.assert_allclose(np.linalg.eigvalsh(ops["Jz"]), [-1.5, -0.5, 0.5, 1.5], atol=1e-15)


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_angular_momentum_algebra(N):
    ops = build_collective_ops(N)
    jx, jy, jz, jm = ops["Jx"], ops["Jy"], ops["Jz"], ops["Jminus"]
    jp = jm.conj().T
    np.testing.assert_allclose(comm(jx, jy), 1j * jz, atol=1e-13)
    np.testing.assert_allclose(comm(jz, jp), jp, atol=1e-13)
    np.testing.assert_allclose(comm(jz, jm), -jm, atol=1e-13)
    np.testing.assert_allclose(jm, jx - 1j * jy, atol=1e-15)
    for op in (jx, jy, jz):
        np.testing.assert_array_equal(op, op.conj().T)


def test_collective_ops_reject_empty():
    with pytest.raises(ParameterError):
        build_collective_ops(0)


def test_truncated_boson_commutator():
    n_max = 10
    ops = build_boson_ops(n_max)
    c = comm(ops["a"], ops["a_dag"])
    expected = np.eye(n_max + 1)
    expected[n_max, n_max] = -n_max
    np.testing.assert_allclose(c, expected, atol=1e-13)


def test_boson_ladder_action():
    ops = build_boson_ops(8)
    vac = np.zeros(9)
    vac[0] = 1
    np.testing.assert_array_equal(ops["a"] @ vac, 0)
    five = np.zeros(9)
    five[5] = 1
    np.testing.assert_allclose(ops["n_op"] @ five, 5 * five)
    np.testing.assert_allclose(ops["a_dag"] @ ops["a"], ops["n_op"], atol=1e-14)
    with pytest.raises(ParameterError):
        build_boson_ops(0)


def test_composite_ordering():
    ops = build_operators(2, 3)
    assert ops.dim == 12
    # index s * (n_max + 1) + n: Jz = 1 - s, photon number n
    np.testing.assert_allclose(np.diag(ops.jz).real, np.repeat([1, 0, -1], 4))
    np.testing.assert_allclose(np.diag(ops.n_op).real, np.tile(np.arange(4), 3))
    assert ops.top_fock_indices.tolist() == [3, 7, 11]


def test_hamiltonian_uncoupled_is_diagonal():
    ops = build_operators(3, 6)
    H = build_hamiltonian(ops, make_params(epsilon=0.1, n_spins=3), 0.0)
    np.testing.assert_array_equal(H, np.diag(np.diag(H)))


def test_hamiltonian_hermitian_for_random_params():
    rng = np.random.default_rng(1)
    for _ in range(10):
        N = int(rng.integers(1, 5))
        p = make_params(epsilon=rng.uniform(-0.5, 0.5), lam=rng.uniform(0, 2), h=rng.uniform(-1, 1), n_spins=N)
        H = build_hamiltonian(build_operators(N, 7), p, p.lam)
        assert np.max(np.abs(H - H.conj().T)) < 1e-14


def test_hamiltonian_coupling_prefactor():
    p = make_params(lam=1.0, n_spins=2)
    ops = build_operators(2, 5)
    coupling = build_hamiltonian(ops, p, 1.0) - build_hamiltonian(ops, p, 0.0)
    spin, boson = build_collective_ops(2), build_boson_ops(5)
    expected = math.sqrt(2) * np.kron(spin["Jx"], boson["a"] + boson["a_dag"])
    np.testing.assert_allclose(coupling, expected, atol=1e-14)


def test_hamiltonian_dimension_mismatch():
    with pytest.raises(ParameterError):
        build_hamiltonian(build_operators(2, 4), make_params(n_spins=3), 1.0)


def test_generator_preserves_trace_and_hermiticity():
    rng = np.random.default_rng(2)
    ops = build_operators(2, 8)
    H = build_hamiltonian(ops, LOSSY, 1.0)
    gen = LindbladGenerator(ops, LOSSY, 1.0)
    for _ in range(20):
        rho = random_density(ops.dim, rng)
        for out in (lindblad_rhs(rho, H, LOSSY, ops), gen(rho)):
            assert abs(np.trace(out)) < 1e-12
            assert np.max(np.abs(out - out.conj().T)) < 1e-12


def test_compiled_generator_matches_dense_reference():
    rng = np.random.default_rng(3)
    for N, n_max in ((1, 5), (2, 8), (3, 6)):
        p = LOSSY.replace(n_spins=N)
        ops = build_operators(N, n_max)
        H = build_hamiltonian(ops, p, p.lam)
        # any square matrix, not only Hermitian ones
        m = rng.normal(size=(ops.dim, ops.dim)) + 1j * rng.normal(size=(ops.dim, ops.dim))
        np.testing.assert_allclose(LindbladGenerator(ops, p, p.lam)(m), lindblad_rhs(m, H, p, ops),
                                   rtol=0, atol=1e-12)


def test_generator_without_dissipation_is_commutator():
    p = make_params(lam=0.7, h=0.2, n_spins=2)
    ops = build_operators(2, 5)
    rho = random_density(ops.dim, np.random.default_rng(4))
    H = build_hamiltonian(ops, p, 0.7)
    np.testing.assert_allclose(LindbladGenerator(ops, p, 0.7)(rho), -1j * comm(H, rho), atol=1e-13)


def test_cavity_loss_on_one_photon():
    gamma = 0.4
    p = make_params(gamma=gamma, n_spins=1)
    ops = build_operators(1, 4)
    # spin down, one photon
    one = np.zeros(ops.dim)
    one[5 + 1] = 1
    zero = np.zeros(ops.dim)
    zero[5] = 1
    rho = np.outer(one, one)
    out = lindblad_rhs(rho, np.zeros_like(rho), p, ops)
    np.testing.assert_allclose(out, gamma * (np.outer(zero, zero) - rho), atol=1e-15)


def test_collective_decay_from_top_state():
    Gamma = 0.6
    p = make_params(Gamma=Gamma, n_spins=2)
    ops = build_operators(2, 3)
    top = np.zeros(ops.dim)
    top[0] = 1  # m = 1, vacuum
    mid = np.zeros(ops.dim)
    mid[4] = 1  # m = 0, vacuum
    rho = np.outer(top, top)
    out = lindblad_rhs(rho, np.zeros_like(rho), p, ops)
    expected = (Gamma / 2) * 2 * (np.outer(mid, mid) - rho)
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_dephasing_uses_doubled_operator():
    p = make_params(Gamma_tilde=0.3, n_spins=3)
    ops = build_operators(3, 2)
    rho = random_density(ops.dim, np.random.default_rng(5))
    out = lindblad_rhs(rho, np.zeros_like(rho), p, ops)
    jz = ops.jz
    single = jz @ rho @ jz - 0.5 * (jz @ jz @ rho + rho @ jz @ jz)
    np.testing.assert_allclose(out, 4 * 0.3 / 3 * single, atol=1e-14)


def test_coherent_state():
    vac = coherent_state(0.0, 6)
    np.testing.assert_array_equal(vac, np.eye(7)[0])
    psi = coherent_state(0.01, 16)
    a = build_boson_ops(16)["a"]
    assert abs(psi.conj() @ a @ psi - 0.01) < 1e-10
    assert abs(np.linalg.norm(psi) - 1) < 1e-12
    # truncation keeps essentially all of the Poisson weight
    raw = np.exp(-0.5e-4) * np.array([0.01**k / math.sqrt(math.factorial(k)) for k in range(17)])
    assert np.sum(raw**2) >= 1 - 1e-12
    with pytest.raises(ParameterError):
        coherent_state(3.0, 4)


def test_initial_state():
    p = make_params(n_spins=2)
    ops = build_operators(2, 16)
    rho = initial_state(2, 0.01, 16)
    obs = expectations(rho, ops, p)
    assert abs(obs.jx - 1) < 1e-12 and abs(obs.jy) < 1e-12 and abs(obs.jz) < 1e-12
    assert obs.x == pytest.approx(2 * 0.01 / math.sqrt(2 * 2 * p.omega), abs=1e-12)
    assert abs(obs.p) < 1e-15
    assert abs(np.trace(rho @ rho).real - 1) < 1e-12


@pytest.mark.parametrize("N", [1, 2, 3, 5])
def test_initial_spin_state_is_top_jx_eigenvector(N):
    jx = build_collective_ops(N)["Jx"]
    rho = initial_state(N, 0.0, 2)
    ops = build_operators(N, 2)
    assert np.trace(rho @ ops.jx).real == pytest.approx(N / 2, abs=1e-12)
    assert np.linalg.eigvalsh(jx)[-1] == pytest.approx(N / 2, abs=1e-12)


def test_expectations_of_special_states():
    p = make_params(n_spins=3)
    ops = build_operators(3, 4)
    mixed = np.eye(ops.dim) / ops.dim
    obs = expectations(mixed, ops, p)
    assert abs(obs.jx) < 1e-15 and abs(obs.jy) < 1e-15
    top = np.zeros(ops.dim)
    top[2] = 1  # m = 3/2, two photons
    assert expectations(np.outer(top, top), ops, p).jz == pytest.approx(1.0, abs=1e-15)


def test_parity_operator():
    P = parity_operator(2, 5)
    np.testing.assert_allclose(P.conj().T @ P, np.eye(P.shape[0]), atol=1e-13)
    spin_part = np.diag(P)[::6]
    np.testing.assert_allclose(spin_part, [-1, 1, -1], atol=1e-15)
    ops = build_operators(2, 5)
    np.testing.assert_allclose(P @ ops.jx @ P.conj().T, -ops.jx, atol=1e-13)
    np.testing.assert_allclose(P @ ops.a @ P.conj().T, -ops.a, atol=1e-13)


def test_free_half_period_is_parity():
    for N in (1, 2, 3):
        p = make_params(lam=1.0, n_spins=N)
        U = half_period_propagator(p, "second", n_max=12)
        assert phase_aligned_deviation(U, parity_operator(N, 12)) < 1e-8


def test_rk4_half_period_propagator():
    p = make_params(lam=1.0, n_spins=2)
    exact = half_period_propagator(p, "second", n_max=8)
    stepped = half_period_propagator(p, "second", n_max=8, steps=4000)
    assert np.max(np.abs(stepped - exact)) < 1e-8
    np.testing.assert_allclose(stepped, np.diag(np.diag(stepped)), atol=1e-15)
    first = half_period_propagator(p, "first", n_max=8)
    H = build_hamiltonian(build_operators(2, 8), p, 1.0)
    np.testing.assert_allclose(first, expm(-1j * math.pi * H), atol=1e-10)


def test_halves_agree_without_coupling():
    p = make_params(lam=0.0, n_spins=2)
    np.testing.assert_allclose(half_period_propagator(p, "first", 6), half_period_propagator(p, "second", 6),
                               atol=1e-14)


def test_spin_coupling_adds_jz_squared_phase():
    h = 0.3
    p = make_params(h=h, n_spins=2)
    U = half_period_propagator(p, "second", n_max=6)
    P = parity_operator(2, 6)
    assert phase_aligned_deviation(U, P) > 0.1
    jz = build_operators(2, 6).jz
    extra = np.diag(np.exp(-1j * math.pi * (h / 2) * np.diag(jz @ jz)))
    assert phase_aligned_deviation(U, P @ extra) < 1e-12


def test_propagator_rejects_dissipation():
    with pytest.raises(ParameterError):
        half_period_propagator(make_params(gamma=0.1), "second")
    with pytest.raises(ValueError):
        half_period_propagator(make_params(), "third")


def test_unitary_run_keeps_state_pure():
    p = make_params(lam=0.3, n_spins=1)
    cfg = QuantumConfig(p, n_max=10, alpha=0.1)
    run = propagate_floquet(cfg, n_periods=50, record_stride=1000)
    assert abs(np.trace(run.rho @ run.rho).real - 1) < 1e-8
    assert run.max_trace_drift < 1e-12
    assert run.min_eigenvalues.min() > -1e-8


def test_free_quadratures_follow_damped_oscillator():
    p = make_params(epsilon=0.1, lam=0.0, gamma=0.3, n_spins=2)
    cfg = QuantumConfig(p, n_max=16, alpha=0.6)
    run = propagate_floquet(cfg, n_periods=3, steps_per_period=1000, record_stride=50)
    y0 = run.observables[0]
    cl_times, cl = [0.0], [y0]
    y = y0.copy()
    for n in range(3):
        y, ts, recs = integrate_interval(y, flow, n * p.period, (n + 1) * p.period,
                                         StepperConfig(dt=p.period / 1000, record_stride=50), flow_args(p, 0.0))
        cl_times.extend(ts)
        cl.extend(recs)
    np.testing.assert_allclose(run.times, cl_times, atol=1e-12)
    np.testing.assert_allclose(run.observables[:, 3:], np.array(cl)[:, 3:], rtol=0, atol=1e-8)


def test_run_layout_and_diagnostics():
    p = make_params(lam=0.5, gamma=0.1, Gamma=0.1, n_spins=2)
    run = propagate_floquet(QuantumConfig(p, n_max=10), n_periods=4, steps_per_period=200, record_stride=20)
    assert run.record.n.tolist() == [0, 1, 2, 3, 4]
    assert len(run.times) == 1 + 4 * 10
    np.testing.assert_array_equal(run.observables[10], run.record.values[1])
    assert len(run.min_eigenvalues) == 5
    spin = np.sum(run.record.values[1:, :3] ** 2, axis=1)
    assert np.all(spin < 1.0)
    assert abs(np.trace(run.rho).real - 1) < 1e-12
    with pytest.raises(ParameterError):
        propagate_floquet(QuantumConfig(p, n_max=10), n_periods=1, steps_per_period=200, record_stride=30)


def test_truncation_watchdog_aborts_with_partial_run():
    p = make_params(lam=1.0, n_spins=2)
    with pytest.raises(TruncationError) as info:
        propagate_floquet(QuantumConfig(p, n_max=4), n_periods=3, steps_per_period=200, record_stride=10)
    partial = info.value.partial
    assert partial.max_top_population > 1e-4
    assert len(partial.times) == len(partial.observables) > 1


def test_truncation_warning_logged(caplog):
    p = make_params(lam=1.0, n_spins=1)
    cfg = QuantumConfig(p, n_max=10, truncation_abort=1.0)
    with caplog.at_level(logging.WARNING, logger="floquet_dtc.quantum"):
        run = propagate_floquet(cfg, n_periods=1, steps_per_period=200, record_stride=10)
    assert run.warnings and "top Fock level" in caplog.text


def test_trace_watchdog():
    ops = build_operators(1, 3)
    dog = _Watchdog(ops, QuantumConfig(make_params(n_spins=1), n_max=3, truncation_abort=1.0))
    rho = np.eye(ops.dim) / ops.dim
    dog(1, 0.1, rho)
    with pytest.raises(AccuracyError):
        dog(2, 0.2, 1.1 * rho)
    assert top_fock_population(rho, ops) == pytest.approx(2 / ops.dim)


def test_custom_protocol():
    p = make_params(lam=1.0, gamma=0.2, n_spins=1)
    proto = DriveProtocol(period=p.period, lambda_on=0.0, n_periods=2)
    run = propagate_floquet(QuantumConfig(p, n_max=6), proto, steps_per_period=100, record_stride=10)
    # without coupling the spin just precesses by 2 pi per period
    np.testing.assert_allclose(run.record.jx, 1.0, atol=1e-6)

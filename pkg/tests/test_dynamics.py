import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad, solve_ivp

from phonon_arith._validation import DOWN, UP, as_phonon_dm, populations
from phonon_arith.dynamics import (
    PulseSchedule,
    SweepParams,
    TrapParams,
    adiabatic_transfer,
    blocks_to_matrix,
    carrier_pi,
    drive_waveform,
    dynamic_blocks,
    hamiltonian_ajc,
    op_add,
    op_subtract,
    propagate,
    rabi_curve,
    reset_qubit,
    stark_phase,
    stark_phase_integrand,
    sweep_blocks,
    sweep_controls,
    transfer_probabilities,
)
from phonon_arith.exceptions import ContractError, TruncationError
from phonon_arith.hilbert import FockTruncation, fidelity, fock_ket, joint, make_fock, superposition

from conftest import random_ket

TRUNC = FockTruncation(10)
SWEEP = SweepParams()
TRAP = TrapParams()


def idx(q, n, dim=TRUNC.dim):
    return q * dim + n


# --- Hamiltonian ------------------------------------------------------------------

def test_coupling_at_midpoint():
    sweep = SweepParams(beta=0.0)
    t = sweep.duration / 2  # Delta(t) = 0 and sin = 1
    _, delta = sweep_controls(t, sweep)
    assert abs(delta) < 1e-9 * sweep.omega0
    H = hamiltonian_ajc(t, sweep, TRUNC)
    assert abs(H[idx(UP, 1), idx(DOWN, 0)]) == pytest.approx(sweep.omega0 / 2, rel=1e-12)


def test_up_zero_uncoupled():
    H = hamiltonian_ajc(0.3 * SWEEP.duration, SWEEP, TRUNC)
    assert np.all(H[idx(UP, 0)] == 0) and np.all(H[:, idx(UP, 0)] == 0)


def test_sqrt_ratio_of_blocks():
    H = hamiltonian_ajc(0.37 * SWEEP.duration, SWEEP, TRUNC)
    ratio = abs(H[idx(UP, 4), idx(DOWN, 3)]) / abs(H[idx(UP, 1), idx(DOWN, 0)])
    assert ratio == pytest.approx(2.0, abs=1e-14)


@given(st.floats(0, 1))
def test_hamiltonian_hermitian_and_block_structure(frac):
    H = hamiltonian_ajc(frac * SWEEP.duration, SWEEP, TRUNC)
    assert np.abs(H - H.conj().T).max() <= 1e-12 * np.abs(H).max()
    d = TRUNC.dim
    allowed = np.eye(2 * d, dtype=bool)
    for n in range(d - 1):
        allowed[idx(UP, n + 1), idx(DOWN, n)] = allowed[idx(DOWN, n), idx(UP, n + 1)] = True
    assert np.all(H[~allowed] == 0)


def test_hamiltonian_time_range():
    with pytest.raises(ValueError):
        hamiltonian_ajc(2 * SWEEP.duration, SWEEP, TRUNC)


def test_detuning_profile_and_inversion():
    T = SWEEP.duration
    om, de = sweep_controls(np.array([0.25 * T, 0.75 * T]), SWEEP)
    assert de[0] == pytest.approx(SWEEP.delta0 * math.cos(math.pi / 4))
    assert de[1] == pytest.approx(SWEEP.delta0 * math.cos(math.pi * 0.25))
    # in-phase part flips, the counter-diabatic quadrature keeps its sign
    assert om[0].real == pytest.approx(-om[1].real)
    assert om[0].imag == om[1].imag == pytest.approx(SWEEP.beta * SWEEP.omega0)


def test_uncompensated_stark_shift_enters_detuning():
    raw = SweepParams(stark_compensated=False)
    t = 0.3 * raw.duration
    om, de = sweep_controls(t, raw)
    _, de0 = sweep_controls(t, SWEEP)
    assert de - de0 == pytest.approx(abs(om) ** 2 / (2 * raw.delta_total))


# --- propagation -------------------------------------------------------------------

def test_zero_duration_identity(rng):
    psi = np.array([random_ket(rng, 6), random_ket(rng, 6)]) / math.sqrt(2)
    out = propagate(psi, PulseSchedule.dynamic(0.0))
    assert np.array_equal(out, psi)


def test_dynamic_pi_pulse():
    out = propagate(make_fock(0, TRUNC), PulseSchedule.dynamic(TRAP.t_pi, TRAP.sideband_rabi))
    assert abs(out[UP, 1]) ** 2 > 1 - 1e-6


def test_dynamic_pulse_on_one():
    out = propagate(make_fock(1, TRUNC), PulseSchedule.dynamic(TRAP.t_pi, TRAP.sideband_rabi))
    expected = math.sin(math.sqrt(2) * math.pi / 2) ** 2
    assert abs(out[UP, 2]) ** 2 == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.6331, abs=1e-4)


@pytest.mark.parametrize("n", range(6))
def test_dynamic_matches_rabi_formula(n):
    times = np.linspace(0, 3 * TRAP.t_pi, 17)
    p = [abs(dynamic_blocks(t, TRAP.sideband_rabi, 8)[n, 1, 0]) ** 2 for t in times]
    assert np.allclose(p, rabi_curve(n, times, TRAP.sideband_rabi), atol=1e-12)


def test_sweep_propagator_unitary():
    U = blocks_to_matrix(sweep_blocks(SWEEP, TRUNC.dim))
    assert np.abs(U.conj().T @ U - np.eye(2 * TRUNC.dim)).max() < 1e-7


def test_step_halving_contract():
    coarse = sweep_blocks(SWEEP, 8)
    fine = sweep_blocks(SWEEP, 8, SWEEP.duration / 4000)
    assert np.abs(coarse - fine).max() < 1e-7
    psi = joint(random_ket(np.random.default_rng(1), 8))
    out = propagate(psi, PulseSchedule.adiabatic(SWEEP), check_convergence=True)
    assert abs(np.linalg.norm(out) - 1) < 1e-9


def test_blocks_match_full_matrix_integration():
    """Independent oracle: adaptive Runge-Kutta on the dense joint Hamiltonian."""
    dim = 5
    trunc = FockTruncation(dim - 1)
    psi = random_ket(np.random.default_rng(7), 2 * dim)
    T = SWEEP.duration

    def rhs(t, y):
        return -1j * hamiltonian_ajc(min(max(t, 0.0), T), SWEEP, trunc) @ y

    y = psi.copy()
    # integrate the two halves separately: the drive is discontinuous at T/2
    for a, b in ((0.0, T / 2), (T / 2, T)):
        # evaluate the second half strictly inside (T/2, T]
        shift = 1e-18 if a > 0 else 0.0
        sol = solve_ivp(rhs, (a + shift, b), y, method="DOP853", rtol=1e-12, atol=1e-13)
        y = sol.y[:, -1]
    blocks = propagate(psi.reshape(2, dim), PulseSchedule.adiabatic(SWEEP)).ravel()
    assert np.abs(blocks - y).max() < 1e-8


def test_norm_preserved_dm(rng):
    psi = joint(random_ket(rng, 8))
    rho = np.einsum("ab,cd->abcd", psi, psi.conj())
    out = propagate(rho, PulseSchedule.adiabatic(SWEEP))
    assert abs(np.einsum("anan->", out).real - 1) < 1e-9


# --- carrier ------------------------------------------------------------------------

def test_carrier_swaps():
    psi = joint(fock_ket(2, TRUNC), UP)
    out = carrier_pi(psi)
    assert abs(out[DOWN, 2]) == pytest.approx(1.0)


def test_carrier_twice_identity_up_to_phase(rng):
    psi = np.array([random_ket(rng, 6), random_ket(rng, 6)]) / math.sqrt(2)
    out = carrier_pi(carrier_pi(psi))
    phase = np.vdot(psi.ravel(), out.ravel())
    assert abs(phase) == pytest.approx(1.0)
    assert np.allclose(out, phase * psi)


def test_carrier_keeps_phonon_distribution(rng):
    psi = np.array([random_ket(rng, 6), random_ket(rng, 6)]) / math.sqrt(2)
    assert np.allclose(populations(carrier_pi(psi)), populations(psi), atol=1e-15)


# --- AC Stark phase and waveform ------------------------------------------------

def test_stark_phase_at_end():
    T = SWEEP.duration
    expected = SWEEP.omega_bsb_meas * T - SWEEP.omega0**2 / (4 * SWEEP.delta_total) * (1 + 2 * SWEEP.beta**2) * T
    assert stark_phase(T, SWEEP) == pytest.approx(expected, rel=1e-12)


def test_stark_phase_without_stark_term():
    sweep = SweepParams(beta=0.0, delta_total=1e300)
    t = 0.4 * sweep.duration
    T = sweep.duration
    expected = sweep.omega_bsb_meas * t + sweep.delta0 * T / math.pi * math.sin(math.pi * t / T)
    assert stark_phase(t, sweep) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("frac", [1 / 3, 0.05, 0.5, 0.77, 1.0])
def test_stark_phase_quadrature(frac):
    t = frac * SWEEP.duration
    num, _ = quad(stark_phase_integrand, 0, t, args=(SWEEP,), epsabs=0, epsrel=1e-13, limit=200)
    assert stark_phase(t, SWEEP) == pytest.approx(num, rel=1e-9)


def test_drive_waveform_start():
    assert drive_waveform(0.0, SWEEP) == 0.0


def test_drive_waveform_beta_zero():
    sweep = SweepParams(beta=0.0)
    t = np.linspace(0, sweep.duration, 50)
    expected = sweep.omega0 * np.sin(np.pi * t / sweep.duration) * np.cos(stark_phase(t, sweep))
    assert np.allclose(drive_waveform(t, sweep), expected, rtol=0, atol=1e-9 * sweep.omega0)


def test_drive_envelope():
    t = np.linspace(0, SWEEP.duration, 101)
    env = np.hypot(drive_waveform(t, SWEEP), drive_waveform(t, SWEEP, quadrature=True))
    expected = SWEEP.omega0 * np.sqrt(np.sin(np.pi * t / SWEEP.duration) ** 2 + SWEEP.beta**2)
    assert np.allclose(env, expected, rtol=1e-12)


# --- adiabatic transfer and composite operations ----------------------------------

def test_transfer_vacuum():
    out = adiabatic_transfer(make_fock(0, TRUNC), SWEEP)
    assert abs(out[UP, 1]) ** 2 > 0.95


def test_up_zero_is_dark():
    psi = joint(fock_ket(0, TRUNC), UP)
    out = adiabatic_transfer(psi, SWEEP)
    assert np.array_equal(out, psi)


def test_transfer_all_levels_above_threshold():
    assert np.all(transfer_probabilities(range(6), SWEEP) >= 0.95)


def test_transfer_phase_uniform():
    b = sweep_blocks(SWEEP, 8)[:6, 1, 0]
    phases = np.angle(b / b[0])
    assert np.abs(phases).max() < 0.2


def test_transfer_edge_guard():
    with pytest.raises(TruncationError):
        adiabatic_transfer(make_fock(TRUNC.n_max, TRUNC), SWEEP)


def test_add_on_superposition():
    out = op_add(joint(superposition([0, 1], TRUNC)), SWEEP)
    assert fidelity(superposition([1, 2], TRUNC), as_phonon_dm(out)) >= 0.95


def test_subtract_vacuum_ends_up_bright():
    out = op_subtract(make_fock(0, TRUNC), SWEEP)
    assert abs(out[UP, 0]) ** 2 > 0.999


def test_three_additions_reach_three():
    state = make_fock(0, TRUNC)
    for _ in range(3):
        state = reset_qubit(op_add(state, SWEEP))
    assert populations(state)[3] > 0.9


def test_ideal_add_is_s_plus(rng):
    psi = random_ket(rng, 6)
    psi = np.concatenate([psi, np.zeros(3)])
    out = op_add(joint(psi), ideal=True)
    assert np.allclose(out[UP], 0)
    assert fidelity(np.roll(psi, 1), out[DOWN]) == pytest.approx(1.0)


def test_add_requires_down():
    with pytest.raises(ContractError):
        op_add(joint(fock_ket(1, TRUNC), UP))


def test_reversal_symmetry(rng):
    psi = np.zeros(TRUNC.dim, dtype=complex)
    psi[1:5] = random_ket(rng, 4)
    added = reset_qubit(op_add(joint(psi), SWEEP))
    pre = op_subtract(added, SWEEP)
    dark = pre[DOWN, :, DOWN, :]
    assert fidelity(psi, dark / np.trace(dark).real) > 0.9


def test_reset_qubit_keeps_marginal(rng):
    psi = np.array([random_ket(rng, 6), random_ket(rng, 6)]) / math.sqrt(2)
    out = reset_qubit(psi)
    assert out.shape == (2, 6, 2, 6)
    assert np.allclose(as_phonon_dm(out), as_phonon_dm(psi))
    assert np.allclose(out[UP], 0)

"""Blue-sideband (anti-Jaynes-Cummings) dynamics and the composite addition/subtraction pulses.

Joint states use the layout of :mod:`phonon_arith._validation`: a ket has
shape ``(2, d)`` with row 0 the dark state down and row 1 the bright state up.
The blue sideband couples ``|down, n>`` and ``|up, n+1>`` only, so every
closed-system propagator here is stored as ``d - 1`` independent 2x2 blocks
acting on the pairs ``(|down, n>, |up, n+1>)``; ``|up, 0>`` and the edge state
``|down, n_max>`` are left untouched.

Units are SI throughout: angular frequencies in rad/s, times in seconds.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._validation import DOWN, UP, as_joint_dm, as_phonon_dm, kind_of
from .exceptions import ContractError, IntegrationError, TruncationError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TrapParams:
    omega_x: float = TWO_PI * 2.8e6
    omega_y: float = TWO_PI * 3.2e6
    omega_z: float = TWO_PI * 0.6e6
    omega_hf: float = TWO_PI * 12.6428e9
    eta: float = 0.1
    t_pi: float = 13e-6

    def __post_init__(self):
        for name in ("omega_x", "omega_y", "omega_z", "omega_hf", "eta", "t_pi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def sideband_rabi(self):
        """Angular Rabi frequency of ``|down,0> <-> |up,1>`` giving a pi pulse in ``t_pi``."""
        return math.pi / self.t_pi


_OMEGA0 = TWO_PI * 38.5e3
# Stark divisor reproducing a ~(2 pi) 33 kHz shift at the peak drive.
_DELTA_TOTAL = _OMEGA0**2 / (2 * TWO_PI * 33e3)


@dataclass(frozen=True)
class SweepParams:
    """Counter-diabatic sideband sweep ``Omega(t) = omega0 [sin(pi t/T) + i beta]``.

    ``omega0`` is the peak sideband Rabi frequency (the coupling of
    ``|down,0> <-> |up,1>``), so ``pi / omega0`` is the fundamental sideband
    pi time. ``delta0=None`` selects ``1.6 * omega0``.

    ``detuning_offset`` is a static error added to the detuning (used for
    jitter Monte Carlo). With ``stark_compensated=False`` the residual AC
    Stark shift ``|Omega(t)|^2 / (2 delta_total)`` stays in the detuning.
    ``mid_inversion`` flips the in-phase drive and reverses the detuning ramp
    for the second half of the sweep.
    """

    omega0: float = _OMEGA0
    beta: float = 0.075
    delta0: float = None
    duration: float = 91e-6
    delta_total: float = _DELTA_TOTAL
    omega_bsb_meas: float = TWO_PI * (12.6428e9 + 2.8e6)
    detuning_offset: float = 0.0
    stark_compensated: bool = True
    mid_inversion: bool = True

    def __post_init__(self):
        if self.delta0 is None:
            object.__setattr__(self, "delta0", 1.6 * self.omega0)
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.delta_total > 0:
            raise ValueError("delta_total must be positive")


@dataclass(frozen=True)
class PulseSchedule:
    """One drive segment: ``carrier_pi``, ``dynamic_bsb`` or ``adiabatic_bsb``."""

    kind: str
    duration: float = 0.0
    rabi: float = None
    detuning: float = 0.0
    sweep: SweepParams = None
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("carrier_pi", "dynamic_bsb", "adiabatic_bsb"):
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if self.kind == "adiabatic_bsb":
            if self.sweep is None:
                object.__setattr__(self, "sweep", SweepParams())
            object.__setattr__(self, "duration", self.sweep.duration)
        if self.duration < 0:
            raise ValueError("pulse duration must be non-negative")
        if self.kind == "dynamic_bsb" and self.rabi is None:
            object.__setattr__(self, "rabi", TrapParams().sideband_rabi)

    @classmethod
    def carrier(cls, phase=0.0):
        return cls("carrier_pi", phase=phase)

    @classmethod
    def dynamic(cls, duration, rabi=None, detuning=0.0, phase=0.0):
        return cls("dynamic_bsb", duration=duration, rabi=rabi, detuning=detuning, phase=phase)

    @classmethod
    def adiabatic(cls, sweep=None, phase=0.0):
        return cls("adiabatic_bsb", sweep=sweep, phase=phase)


# ---------------------------------------------------------------------------
# drive waveform and AC Stark bookkeeping

def sweep_controls(t, sweep):
    """Complex sideband Rabi frequency and detuning (rad/s) at time ``t``.

    Vectorized over ``t``.
    """
    t = np.asarray(t, dtype=float)
    T = sweep.duration
    s = np.sin(np.pi * t / T)
    second = (t > T / 2) & sweep.mid_inversion
    inphase = np.where(second, -s, s)
    omega = sweep.omega0 * (inphase + 1j * sweep.beta)
    delta = np.where(second, sweep.delta0 * np.cos(np.pi * (T - t) / T), sweep.delta0 * np.cos(np.pi * t / T))
    delta = delta + sweep.detuning_offset
    if not sweep.stark_compensated:
        delta = delta + np.abs(omega) ** 2 / (2 * sweep.delta_total)
    return omega, delta


def stark_phase(t, sweep):
    """Accumulated drive phase ``int_0^t (omega_real + Delta) dt'`` in closed form.

    ``omega_real = omega_bsb_meas - |Omega|^2 / (2 delta_total)``; the
    ``sin(2 pi t / T)`` term enters with a minus sign because
    ``int sin^2(pi t/T) dt = t/2 - (T / 4 pi) sin(2 pi t / T)``.
    """
    T = sweep.duration
    w0, beta, dtot = sweep.omega0, sweep.beta, sweep.delta_total
    return (
        sweep.omega_bsb_meas * t
        - w0**2 / (4 * dtot) * ((1 + 2 * beta**2) * t - T / (2 * np.pi) * np.sin(2 * np.pi * t / T))
        + sweep.delta0 * T / np.pi * np.sin(np.pi * t / T)
    )


def stark_phase_integrand(t, sweep):
    T = sweep.duration
    mag2 = sweep.omega0**2 * (np.sin(np.pi * t / T) ** 2 + sweep.beta**2)
    return sweep.omega_bsb_meas - mag2 / (2 * sweep.delta_total) + sweep.delta0 * np.cos(np.pi * t / T)


def drive_waveform(t, sweep, quadrature=False):
    """Real drive ``omega0 [sin(pi t/T) cos(phi) - beta sin(phi)]`` with ``phi`` from :func:`stark_phase`.

    ``quadrature=True`` returns the component shifted by pi/2, so that
    ``hypot(in_phase, quadrature)`` is the envelope ``|Omega(t)|``.
    """
    T = sweep.duration
    phi = stark_phase(t, sweep)
    s = np.sin(np.pi * t / T)
    if quadrature:
        return sweep.omega0 * (s * np.sin(phi) + sweep.beta * np.cos(phi))
    return sweep.omega0 * (s * np.cos(phi) - sweep.beta * np.sin(phi))


# ---------------------------------------------------------------------------
# Hamiltonian

def _pair_scale(dim):
    return np.sqrt(np.arange(1, dim))


def hamiltonian_ajc(t, sweep, trunc, phase=0.0):
    """Full joint-space sideband Hamiltonian (rad/s) at time ``t``.

    Flattened index ``q * d + n``. Only ``|down,n> <-> |up,n+1>`` is coupled,
    with element ``sqrt(n+1) Omega(t) e^{i phase} / 2``; each coupled pair
    carries detuning ``+Delta/2`` on down and ``-Delta/2`` on up.
    """
    if not 0 <= t <= sweep.duration:
        raise ValueError(f"t={t} outside the sweep [0, {sweep.duration}]")
    dim = trunc.dim if hasattr(trunc, "dim") else int(trunc) + 1
    omega, delta = sweep_controls(t, sweep)
    g = _pair_scale(dim) * complex(omega) * np.exp(1j * phase) / 2
    H = np.zeros((2 * dim, 2 * dim), dtype=complex)
    n = np.arange(dim - 1)
    down = DOWN * dim + n
    up = UP * dim + n + 1
    H[up, down] = g
    H[down, up] = g.conj()
    H[down, down] = float(delta) / 2
    H[up, up] = -float(delta) / 2
    return H


def _block_expm(half_delta, g, dt):
    """``exp(-i dt [[hd, g*], [g, -hd]])`` for arrays of pairs; returns shape (m, 2, 2)."""
    hd = np.broadcast_to(np.asarray(half_delta, dtype=float), np.shape(g))
    w = np.sqrt(hd**2 + np.abs(g) ** 2)
    c = np.cos(w * dt)
    sinc = np.where(w > 0, np.sin(w * dt) / np.where(w > 0, w, 1.0), dt)
    U = np.empty(np.shape(g) + (2, 2), dtype=complex)
    U[..., 0, 0] = c - 1j * sinc * hd
    U[..., 1, 1] = c + 1j * sinc * hd
    U[..., 0, 1] = -1j * sinc * np.conj(g)
    U[..., 1, 0] = -1j * sinc * g
    return U


# Gauss-Legendre nodes and the commutator-free fourth-order Magnus weights.
_C1, _C2 = 0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6
_A1, _A2 = (3 - 2 * math.sqrt(3)) / 12, (3 + 2 * math.sqrt(3)) / 12


def _n_steps(duration, step):
    n = max(2, math.ceil(duration / step - 1e-9))
    return n + (n % 2)


def sweep_blocks(sweep, dim, step=None, phase=0.0):
    """Pair propagators (shape ``(dim-1, 2, 2)``) of a full adiabatic sweep.

    Piecewise integration with the two-exponential commutator-free Magnus
    scheme (fourth order); the step count is even so the mid-sweep inversion
    falls on a step boundary. Default step ``T / 2000``.
    """
    step = sweep.duration / 2000 if step is None else step
    return _sweep_blocks(sweep, int(dim), _n_steps(sweep.duration, step), float(phase)).copy()


@lru_cache(maxsize=64)
def _sweep_blocks(sweep, dim, n_steps, phase):
    dt = sweep.duration / n_steps
    scale = _pair_scale(dim)
    t0 = np.arange(n_steps) * dt
    om1, de1 = sweep_controls(t0 + _C1 * dt, sweep)
    om2, de2 = sweep_controls(t0 + _C2 * dt, sweep)
    rot = np.exp(1j * phase) / 2
    U = np.broadcast_to(np.eye(2, dtype=complex), (dim - 1, 2, 2)).copy()
    for k in range(n_steps):
        # the factor weighted toward the earlier node acts first
        for wa, wb in ((_A2, _A1), (_A1, _A2)):
            hd = (wa * de1[k] + wb * de2[k]) / 2
            g = scale * (wa * om1[k] + wb * om2[k]) * rot
            U = _block_expm(hd, g, dt) @ U
    return U


def dynamic_blocks(duration, rabi, dim, detuning=0.0, phase=0.0):
    """Pair propagators of a constant-amplitude sideband pulse (exact)."""
    g = _pair_scale(dim) * rabi * np.exp(1j * phase) / 2
    return _block_expm(detuning / 2, g, duration)


def carrier_blocks(dim, phase=0.0):
    """Qubit-flip unitary of an ideal carrier pi pulse, shape ``(2, 2)``.

    ``|down> -> -i e^{i phase} |up>`` and ``|up> -> -i e^{-i phase} |down>``.
    """
    return np.array([[0, -1j * np.exp(-1j * phase)], [-1j * np.exp(1j * phase), 0]], dtype=complex)


def blocks_to_matrix(blocks):
    """Dense joint-space unitary (flattened ``q * d + n``) from pair blocks."""
    dim = blocks.shape[0] + 1
    U = np.eye(2 * dim, dtype=complex)
    n = np.arange(dim - 1)
    down = DOWN * dim + n
    up = UP * dim + n + 1
    U[down, down] = blocks[:, 0, 0]
    U[down, up] = blocks[:, 0, 1]
    U[up, down] = blocks[:, 1, 0]
    U[up, up] = blocks[:, 1, 1]
    return U


def apply_blocks(state, blocks):
    """Apply pair blocks to a joint ket ``(2, d)`` or joint density matrix ``(2, d, 2, d)``."""
    state = np.asarray(state, dtype=complex)
    kind = kind_of(state)
    if kind == "joint_ket":
        out = state.copy()
        x, y = state[DOWN, :-1], state[UP, 1:]
        out[DOWN, :-1] = blocks[:, 0, 0] * x + blocks[:, 0, 1] * y
        out[UP, 1:] = blocks[:, 1, 0] * x + blocks[:, 1, 1] * y
        return out
    if kind == "joint_dm":
        dim = state.shape[1]
        U = blocks_to_matrix(blocks)
        rho = state.reshape(2 * dim, 2 * dim)
        return (U @ rho @ U.conj().T).reshape(2, dim, 2, dim)
    raise ContractError(f"sideband pulses act on joint states, got {kind}")


def apply_qubit_unitary(state, u):
    state = np.asarray(state, dtype=complex)
    kind = kind_of(state)
    if kind == "joint_ket":
        return u @ state
    if kind == "joint_dm":
        return np.einsum("ab,bmcn,dc->amdn", u, state, u.conj())
    raise ContractError(f"carrier pulses act on joint states, got {kind}")


def carrier_pi(state, phase=0.0):
    """Ideal carrier pi pulse: swaps ``|up,n>`` and ``|down,n>`` for every ``n``."""
    return apply_qubit_unitary(state, carrier_blocks(np.shape(state)[-1], phase))


def _norm2(state):
    state = np.asarray(state)
    if state.ndim == 2:
        return float(np.vdot(state.ravel(), state.ravel()).real)
    return float(np.einsum("anan->", state).real)


def schedule_blocks(schedule, dim, step=None):
    if schedule.kind == "dynamic_bsb":
        return dynamic_blocks(schedule.duration, schedule.rabi, dim, schedule.detuning, schedule.phase)
    if schedule.kind == "adiabatic_bsb":
        return sweep_blocks(schedule.sweep, dim, step, schedule.phase)
    raise ValueError("carrier pulses have no sideband blocks")


def propagate(state, schedule, step=None, check_convergence=False, min_step=1e-10):
    """Propagate a joint state through one pulse segment.

    With ``check_convergence`` the adiabatic sweep is repeated with half the
    step until every propagator element moves by less than 1e-7; reaching
    ``min_step`` first raises :class:`IntegrationError`.
    """
    state = np.asarray(state, dtype=complex)
    dim = state.shape[-1]
    if schedule.kind == "carrier_pi":
        return carrier_pi(state, schedule.phase)
    if schedule.duration == 0:
        return state.copy()
    if schedule.kind == "adiabatic_bsb" and check_convergence:
        step = schedule.sweep.duration / 2000 if step is None else step
        blocks = sweep_blocks(schedule.sweep, dim, step, schedule.phase)
        while True:
            if step / 2 < min_step:
                raise IntegrationError(f"sweep propagator did not converge above step {min_step:g} s")
            finer = sweep_blocks(schedule.sweep, dim, step / 2, schedule.phase)
            if np.abs(finer - blocks).max() < 1e-7:
                break
            step, blocks = step / 2, finer
    else:
        blocks = schedule_blocks(schedule, dim, step)
    out = apply_blocks(state, blocks)
    drift = abs(_norm2(out) - _norm2(state))
    if drift > 1e-9:
        raise IntegrationError(f"norm drift {drift:.2g} during {schedule.kind}")
    return out


def _require_down(state, what):
    state = np.asarray(state)
    kind = kind_of(state)
    if kind == "joint_ket":
        up = float((np.abs(state[UP]) ** 2).sum())
    elif kind == "joint_dm":
        up = float(np.real(np.einsum("nn->", state[UP, :, UP, :])))
    else:
        raise ContractError(f"{what} needs a joint state, got {kind}")
    if up > 1e-9:
        raise ContractError(f"{what} requires the qubit in |down>; found up population {up:.3g}")


def _guard_edge(state, tol):
    state = np.asarray(state)
    if state.ndim == 2:
        top = float(abs(state[DOWN, -1]) ** 2)
    else:
        top = float(np.real(state[DOWN, -1, DOWN, -1]))
    if top > tol:
        raise TruncationError(
            f"population {top:.3g} on |down, n_max> cannot be raised within the truncated space",
            required_n_max=state.shape[-1],
        )


def ideal_transfer_blocks(dim):
    """Perfect n-independent transfer ``|down,n> -> |up,n+1>``, ``|up,n+1> -> -|down,n>``."""
    blocks = np.zeros((dim - 1, 2, 2), dtype=complex)
    blocks[:, 1, 0] = 1.0
    blocks[:, 0, 1] = -1.0
    return blocks


def adiabatic_transfer(state, sweep=None, step=None, leakage_tol=1e-6, noise=None, ideal=False):
    """Counter-diabatic sideband sweep ``|down,n> -> |up,n+1>`` (``|up,0>`` is dark).

    ``noise`` (a :class:`~phonon_arith.noise.NoiseParams`) adds phonon
    heating: applied after the pulse for its duration, or co-integrated by
    symmetric splitting when ``noise.co_integrate`` is set. ``ideal=True``
    replaces the simulated sweep with a perfect transfer (heating, if any,
    still acts for the sweep duration).
    """
    sweep = SweepParams() if sweep is None else sweep
    _guard_edge(state, leakage_tol)
    if ideal:
        out = apply_blocks(state, ideal_transfer_blocks(np.shape(state)[-1]))
        if noise is None or noise.heating_rate == 0:
            return out
        from .noise import heat

        return heat(as_joint_dm(out), sweep.duration, noise)
    schedule = PulseSchedule.adiabatic(sweep)
    if noise is None or noise.heating_rate == 0:
        return propagate(state, schedule, step)
    from .noise import heat, heat_split_steps

    rho = as_joint_dm(state)
    if noise.co_integrate:
        return heat_split_steps(rho, sweep, noise, step)
    return heat(propagate(rho, schedule, step), sweep.duration, noise)


def op_add(state, sweep=None, step=None, leakage_tol=1e-6, noise=None, ideal=False):
    """Conventional addition: adiabatic sideband transfer then a carrier pi pulse."""
    _require_down(state, "addition")
    moved = adiabatic_transfer(state, sweep, step, leakage_tol, noise, ideal)
    return carrier_pi(moved)


def op_subtract(state, sweep=None, step=None, noise=None, ideal=False):
    """Conventional subtraction before read-out: carrier pi pulse then sideband transfer.

    Leaves ``sum_{n>=1} c_n |down,n-1> + c_0 |up,0>``; post-selection on the
    dark outcome is done in :mod:`phonon_arith.measurement`.
    """
    _require_down(state, "subtraction")
    flipped = carrier_pi(state)
    return adiabatic_transfer(flipped, sweep, step, noise=noise, ideal=ideal)


def reset_qubit(state):
    """Optical pumping to ``|down>``: keep the phonon marginal, discard the qubit.

    Returns ``|down> (x) |psi>`` when the marginal is pure and a joint density
    matrix otherwise.
    """
    rho = as_phonon_dm(state)
    d = rho.shape[0]
    w, v = np.linalg.eigh(rho)
    if w[-1] > 1 - 1e-12:
        psi = v[:, -1]
        out = np.zeros((2, d), dtype=complex)
        # fix the global phase so the largest amplitude is real and positive
        out[DOWN] = psi * np.exp(-1j * np.angle(psi[np.argmax(np.abs(psi))]))
        return out
    out = np.zeros((2, d, 2, d), dtype=complex)
    out[DOWN, :, DOWN, :] = rho
    return out


def transfer_probabilities(n_values, sweep=None, step=None, dim=None):
    """Probability of ``|down,n> -> |up,n+1>`` under one adiabatic sweep for each ``n``."""
    sweep = SweepParams() if sweep is None else sweep
    n_values = np.asarray(n_values, dtype=int)
    dim = int(n_values.max()) + 2 if dim is None else dim
    blocks = sweep_blocks(sweep, dim, step)
    return np.abs(blocks[n_values, 1, 0]) ** 2


def rabi_curve(n, times, rabi):
    """Resonant sideband excitation ``sin^2(sqrt(n+1) rabi t / 2)`` of ``|down,n>``."""
    return np.sin(np.sqrt(n + 1) * rabi * np.asarray(times) / 2) ** 2


__all__ = [
    "PulseSchedule",
    "SweepParams",
    "TrapParams",
    "adiabatic_transfer",
    "apply_blocks",
    "carrier_pi",
    "drive_waveform",
    "dynamic_blocks",
    "hamiltonian_ajc",
    "op_add",
    "op_subtract",
    "propagate",
    "rabi_curve",
    "reset_qubit",
    "stark_phase",
    "sweep_blocks",
    "sweep_controls",
    "transfer_probabilities",
]

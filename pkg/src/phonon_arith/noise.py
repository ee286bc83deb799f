"""Phonon heating, detection errors and detuning jitter."""
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from ._validation import kind_of
from .exceptions import IntegrationError


@dataclass(frozen=True)
class NoiseParams:
    """Open-system and read-out imperfections.

    ``heating_rate`` is the measured ``gamma * nbar`` in phonons per second;
    the reservoir coupling is derived as ``gamma = heating_rate / nbar``.
    ``detection_window`` is the fluorescence collection time during which the
    surviving branch keeps heating.
    """

    heating_rate: float = 150.0
    nbar: float = 10.0
    eps_bright: float = 0.0
    eps_dark: float = 0.0
    jitter_sigma: float = 0.0
    detection_window: float = 300e-6
    co_integrate: bool = False

    def __post_init__(self):
        if self.heating_rate < 0 or self.nbar < 0:
            raise ValueError("heating_rate and nbar must be non-negative")
        if self.heating_rate > 0 and self.nbar == 0:
            raise ValueError("a positive heating rate needs nbar > 0")
        for name in ("eps_bright", "eps_dark"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if self.jitter_sigma < 0 or self.detection_window < 0:
            raise ValueError("jitter_sigma and detection_window must be non-negative")

    @property
    def gamma(self):
        return self.heating_rate / self.nbar if self.nbar > 0 else 0.0

    @classmethod
    def ideal(cls):
        return cls(heating_rate=0.0, detection_window=0.0)


def heating_liouvillian(dim, gamma, nbar):
    """Sparse generator of the thermal-reservoir master equation on row-major ``vec(rho)``.

    ``(gamma/2) nbar (2 a+ rho a - {a a+, rho}) + (gamma/2)(nbar+1)(2 a rho a+ - {a+ a, rho})``
    with the operators truncated at ``dim``; the truncated generator stays
    trace preserving.
    """
    a = sp.diags(np.sqrt(np.arange(1, dim)), 1, format="csr", dtype=complex)
    ad = a.T.conj().tocsr()
    eye = sp.identity(dim, format="csr", dtype=complex)
    aad = a @ ad
    ada = ad @ a
    # vec(A rho B) = kron(A, B.T) vec(rho) for row-major vec
    up = 2 * sp.kron(ad, a.T) - sp.kron(aad, eye) - sp.kron(eye, aad.T)
    down = 2 * sp.kron(a, ad.T) - sp.kron(ada, eye) - sp.kron(eye, ada.T)
    return (0.5 * gamma * nbar * up + 0.5 * gamma * (nbar + 1) * down).tocsr()


@lru_cache(maxsize=128)
def _band_propagator(dim, gamma, nbar, duration):
    # The generator only couples rho[m, n] to rho[m +- 1, n +- 1]; each
    # diagonal band m - n = k evolves independently and is exponentiated exactly.
    L = heating_liouvillian(dim, gamma, nbar).tocsc()
    m, n = np.divmod(np.arange(dim * dim), dim)
    rows, cols, vals = [], [], []
    for k in range(-(dim - 1), dim):
        idx = np.flatnonzero(m - n == k)
        block = L[idx][:, idx].toarray()
        P = expm(block * duration)
        r, c = np.meshgrid(idx, idx, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(P.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim * dim, dim * dim)
    )


def heating_propagator(dim, params, duration):
    """Sparse superoperator ``exp(L t)`` for the phonon heating channel."""
    return _band_propagator(int(dim), float(params.gamma), float(params.nbar), float(duration))


def _apply_superop(P, rho):
    kind = kind_of(rho)
    if kind == "dm":
        d = rho.shape[0]
        return (P @ rho.reshape(-1)).reshape(d, d)
    if kind == "joint_dm":
        d = rho.shape[1]
        # heating acts on the phonon factor of every qubit block
        blocks = rho.transpose(0, 2, 1, 3).reshape(4, d * d)
        out = (P @ blocks.T).T.reshape(2, 2, d, d)
        return out.transpose(0, 2, 1, 3)
    raise ValueError(f"heating acts on density matrices, got {kind}")


def heat(rho, duration, params, step=None, check=True):
    """Evolve a phonon or joint density matrix under phonon heating for ``duration`` seconds.

    The channel is applied as exact band exponentials, in slices of ``step``
    seconds when given. ``check`` verifies trace and positivity to 1e-8.
    """
    rho = np.asarray(rho, dtype=complex)
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if duration == 0 or params.gamma == 0:
        return rho.copy()
    dim = rho.shape[-1]
    if step is None or step >= duration:
        slices = [duration]
    else:
        n = math.ceil(duration / step - 1e-9)
        slices = [duration / n] * n
    out = rho
    for dt in slices:
        out = _apply_superop(heating_propagator(dim, params, dt), out)
    if check:
        _check_channel_output(rho, out)
    return out


def _check_channel_output(rho, out, tol=1e-8):
    flat_in = rho.reshape(int(np.sqrt(rho.size)), -1)
    flat_out = out.reshape(flat_in.shape)
    drift = abs(np.trace(flat_out) - np.trace(flat_in))
    if drift > tol:
        raise IntegrationError(f"heating changed the trace by {drift:.2g}")
    lam = np.linalg.eigvalsh(0.5 * (flat_out + flat_out.conj().T)).min()
    if lam < -tol:
        raise IntegrationError(f"heating produced a negative eigenvalue {lam:.2g}")


def mean_phonon_analytic(t, n0, params):
    """``nbar + (n0 - nbar) exp(-gamma t)`` for the untruncated oscillator."""
    return params.nbar + (n0 - params.nbar) * np.exp(-params.gamma * np.asarray(t))


def heat_split_steps(rho, sweep, params, step=None):
    """Adiabatic sweep with heating co-integrated by symmetric (Strang) splitting."""
    from .dynamics import _n_steps, sweep_controls, _block_expm, _pair_scale, _A1, _A2, _C1, _C2, blocks_to_matrix

    step = sweep.duration / 2000 if step is None else step
    n_steps = _n_steps(sweep.duration, step)
    dt = sweep.duration / n_steps
    dim = rho.shape[-1]
    half = heating_propagator(dim, params, dt / 2)
    scale = _pair_scale(dim)
    t0 = np.arange(n_steps) * dt
    om1, de1 = sweep_controls(t0 + _C1 * dt, sweep)
    om2, de2 = sweep_controls(t0 + _C2 * dt, sweep)
    out = np.asarray(rho, dtype=complex)
    for k in range(n_steps):
        U = np.broadcast_to(np.eye(2, dtype=complex), (dim - 1, 2, 2))
        for wa, wb in ((_A2, _A1), (_A1, _A2)):
            g = scale * (wa * om1[k] + wb * om2[k]) / 2
            U = _block_expm((wa * de1[k] + wb * de2[k]) / 2, g, dt) @ U
        full = blocks_to_matrix(U)
        out = _apply_superop(half, out)
        flat = out.reshape(2 * dim, 2 * dim)
        out = (full @ flat @ full.conj().T).reshape(2, dim, 2, dim)
        out = _apply_superop(half, out)
    _check_channel_output(np.asarray(rho, dtype=complex), out)
    return out


def detection_flip(outcome, params, rng):
    """Apply read-out errors to ``"bright"``/``"dark"`` outcomes (scalar or array of str/bool).

    Boolean arrays are read as ``True`` = bright.
    """
    if isinstance(outcome, str):
        if outcome not in ("bright", "dark"):
            raise ValueError(f"outcome must be 'bright' or 'dark', got {outcome!r}")
        bright = outcome == "bright"
        flip = rng.random() < (params.eps_bright if bright else params.eps_dark)
        return ("dark" if bright else "bright") if flip else outcome
    bright = np.asarray(outcome, dtype=bool)
    u = rng.random(bright.shape)
    flip = np.where(bright, u < params.eps_bright, u < params.eps_dark)
    return bright ^ flip


def reads_bright_probability(p_up, params):
    """Probability of a bright reading given the true bright (up) probability."""
    if params is None:
        return np.asarray(p_up, dtype=float)
    p_up = np.asarray(p_up, dtype=float)
    return p_up * (1 - params.eps_bright) + (1 - p_up) * params.eps_dark


def jitter_detuning(sweep, params, rng):
    """Copy of ``sweep`` with a Gaussian detuning error of width ``params.jitter_sigma`` (rad/s)."""
    sigma = params.jitter_sigma if hasattr(params, "jitter_sigma") else float(params)
    if sigma == 0:
        return sweep
    return replace(sweep, detuning_offset=sweep.detuning_offset + rng.normal(0.0, sigma))


__all__ = [
    "NoiseParams",
    "detection_flip",
    "heat",
    "heat_split_steps",
    "heating_liouvillian",
    "heating_propagator",
    "jitter_detuning",
    "mean_phonon_analytic",
    "reads_bright_probability",
]

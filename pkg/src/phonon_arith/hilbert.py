"""States, ideal operators and state-analysis functionals on a truncated Fock space."""
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln
from scipy.stats import poisson

from ._validation import (
    DOWN,
    as_phonon_dm,
    check_density_matrix,
    kind_of,
    ket_to_dm,
)
from .exceptions import TruncationError


@dataclass(frozen=True)
class FockTruncation:
    """Truncated phonon space ``|0>, ..., |n_max>``.

    ``leakage_tol`` bounds the population any operation may leave on (or push
    past) the highest retained level.
    """

    n_max: int = 20
    leakage_tol: float = 1e-6

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max}")
        if not 0 < self.leakage_tol < 1:
            raise ValueError(f"leakage_tol must be in (0, 1), got {self.leakage_tol}")

    @property
    def dim(self):
        return self.n_max + 1


def _trunc(trunc):
    if isinstance(trunc, FockTruncation):
        return trunc
    return FockTruncation(int(trunc))


def log_factorial(n):
    """``ln n!``, exact through 20 and via ``gammaln`` beyond."""
    n = np.asarray(n)
    small = np.array([math.lgamma(k + 1) for k in range(21)])
    out = gammaln(n + 1.0)
    mask = n <= 20
    if np.ndim(out) == 0:
        return float(small[int(n)]) if mask else float(out)
    out[mask] = small[n[mask].astype(int)]
    return out


# ---------------------------------------------------------------------------
# states

def fock_ket(n, trunc):
    """Phonon Fock ket ``|n>``."""
    trunc = _trunc(trunc)
    if not 0 <= n <= trunc.n_max:
        raise TruncationError(f"Fock index {n} outside 0..{trunc.n_max}", required_n_max=n)
    psi = np.zeros(trunc.dim, dtype=complex)
    psi[n] = 1.0
    return psi


def joint(phonon, qubit=DOWN):
    """Embed a phonon ket as ``|qubit> (x) |phonon>`` (joint shape ``(2, d)``)."""
    phonon = np.asarray(phonon, dtype=complex)
    out = np.zeros((2, phonon.size), dtype=complex)
    out[qubit] = phonon
    return out


def make_fock(n, trunc):
    """Joint state ``|down, n>``."""
    return joint(fock_ket(n, trunc))


def required_n_max(mean, tol):
    """Smallest cutoff whose Poisson tail beyond it is below ``tol``."""
    n = 1
    while poisson.sf(n, mean) > tol:
        n += 1
    return n


def coherent_ket(alpha, trunc, renormalize=True):
    """Coherent phonon ket ``|alpha>`` on the truncated space.

    Raises ``TruncationError`` if the discarded Poisson tail exceeds the
    truncation's ``leakage_tol``.
    """
    trunc = _trunc(trunc)
    lam = abs(alpha) ** 2
    tail = poisson.sf(trunc.n_max, lam) if lam > 0 else 0.0
    if tail > trunc.leakage_tol:
        need = required_n_max(lam, trunc.leakage_tol)
        raise TruncationError(
            f"coherent state |alpha|={abs(alpha):.4g} leaks {tail:.3g} beyond n_max={trunc.n_max}; "
            f"need n_max >= {need}",
            required_n_max=need,
        )
    n = np.arange(trunc.dim)
    if alpha == 0:
        c = (n == 0).astype(complex)
    else:
        logmag = -lam / 2 + n * np.log(abs(alpha)) - 0.5 * log_factorial(n)
        c = np.exp(logmag) * np.exp(1j * n * np.angle(alpha))
    if renormalize:
        c = c / np.linalg.norm(c)
    return c


def make_coherent(alpha, trunc):
    """Joint state ``|down> (x) |alpha>``."""
    return joint(coherent_ket(alpha, trunc))


def superposition(levels, trunc, coeffs=None):
    """Normalized phonon ket ``sum_k c_k |levels[k]>`` (equal weights by default)."""
    trunc = _trunc(trunc)
    psi = np.zeros(trunc.dim, dtype=complex)
    coeffs = np.ones(len(levels)) if coeffs is None else np.asarray(coeffs, dtype=complex)
    for n, c in zip(levels, coeffs):
        psi += c * fock_ket(n, trunc)
    return psi / np.linalg.norm(psi)


def thermal_dm(nbar, trunc):
    """Thermal phonon density matrix with mean occupation ``nbar`` (renormalized)."""
    trunc = _trunc(trunc)
    n = np.arange(trunc.dim)
    if nbar == 0:
        p = (n == 0).astype(float)
    else:
        p = (nbar / (nbar + 1.0)) ** n / (nbar + 1.0)
    return np.diag(p / p.sum()).astype(complex)


# ---------------------------------------------------------------------------
# operators

def annihilation(dim):
    return np.diag(np.sqrt(np.arange(1, dim)), k=1).astype(complex)


def creation(dim):
    return annihilation(dim).conj().T


def s_plus(dim):
    """Susskind-Glogower raising operator ``sum_n |n+1><n|`` (truncated)."""
    return np.eye(dim, k=-1, dtype=complex)


def s_minus(dim):
    return np.eye(dim, k=1, dtype=complex)


def _top_population(state):
    kind = kind_of(state)
    if kind == "ket":
        return abs(state[-1]) ** 2
    if kind == "joint_ket":
        return float((np.abs(state[:, -1]) ** 2).sum())
    return float(np.real(as_phonon_dm(state)[-1, -1]))


def _guard_top(state, tol, what):
    top = _top_population(state)
    if top > tol:
        n_max = np.shape(state)[-1] - 1
        raise TruncationError(
            f"{what}: population {top:.3g} at n_max={n_max} would leave the truncated space",
            required_n_max=n_max + 1,
        )


def _apply_phonon_op(op, state):
    state = np.asarray(state, dtype=complex)
    kind = kind_of(state)
    if kind in ("ket", "joint_ket"):
        return state @ op.T
    if kind == "dm":
        return op @ state @ op.conj().T
    return np.einsum("mk,akbl,nl->ambn", op, state, op.conj())


def apply_ladder(state, which, leakage_tol=1e-6):
    """Apply ``a^dagger`` (``which="create"``) or ``a`` to the phonon factor.

    The result is not renormalized.
    """
    state = np.asarray(state, dtype=complex)
    dim = state.shape[-1]
    if which == "create":
        _guard_top(state, leakage_tol, "creation")
        return _apply_phonon_op(creation(dim), state)
    if which == "annihilate":
        return _apply_phonon_op(annihilation(dim), state)
    raise ValueError(f"which must be 'create' or 'annihilate', got {which!r}")


def apply_s_plus(state, leakage_tol=1e-6):
    """Ideal conventional addition; an isometry on the truncated space."""
    state = np.asarray(state, dtype=complex)
    _guard_top(state, leakage_tol, "S+")
    return _apply_phonon_op(s_plus(state.shape[-1]), state)


def apply_s_minus(state):
    """Ideal conventional subtraction with post-selection.

    Returns ``(state, success_prob)`` where ``success_prob = 1 - p_0``. When the
    input is pure vacuum the post-selection never succeeds and ``(None, 0.0)``
    is returned.
    """
    state = np.asarray(state, dtype=complex)
    out = _apply_phonon_op(s_minus(state.shape[-1]), state)
    kind = kind_of(state)
    if kind in ("ket", "joint_ket"):
        prob = float(np.vdot(out.ravel(), out.ravel()).real)
    elif kind == "dm":
        prob = float(np.trace(out).real)
    else:
        prob = float(np.einsum("anan->", out).real)
    if prob <= 1e-15:
        return None, 0.0
    if kind in ("ket", "joint_ket"):
        return out / np.sqrt(prob), prob
    return out / prob, prob


def displacement(alpha, trunc, check=True):
    """Displacement operator ``exp(alpha a^dagger - alpha* a)`` on the truncated space.

    The exponential of the truncated anti-Hermitian generator is exactly
    unitary. With ``check`` the image of the vacuum is required to keep its
    population at ``n_max`` below ``leakage_tol``.
    """
    trunc = _trunc(trunc)
    a = annihilation(trunc.dim)
    gen = alpha * a.conj().T - np.conj(alpha) * a
    op = expm(gen)
    if check and alpha != 0:
        dev = np.abs(op.conj().T @ op - np.eye(trunc.dim)).max()
        if dev > 1e-9:
            raise TruncationError(f"displacement not unitary to 1e-9 (deviation {dev:.2g})")
        top = abs(op[-1, 0]) ** 2
        if top > trunc.leakage_tol:
            need = required_n_max(abs(alpha) ** 2, trunc.leakage_tol)
            raise TruncationError(
                f"displacement |alpha|={abs(alpha):.3g} reaches n_max={trunc.n_max}; need n_max >= {need}",
                required_n_max=need,
            )
    return op


def displaced_populations(rho, alpha, pad=30):
    """``<n| D(alpha) rho D(alpha)^dagger |n>`` evaluated with a padded space.

    The displacement is built ``pad`` levels above the state's dimension so
    edge errors of the truncated generator stay negligible; all ``d + pad``
    populations are returned.
    """
    rho = as_phonon_dm(rho)
    d = rho.shape[0]
    big = d + pad
    op = expm(alpha * creation(big) - np.conj(alpha) * annihilation(big))[:, :d]
    out = np.real(np.einsum("nk,kl,nl->n", op, rho, op.conj()))
    return out


# ---------------------------------------------------------------------------
# analysis

@dataclass(frozen=True)
class StateMetrics:
    """Phonon-number statistics and purity of a state.

    ``fano`` (variance / mean) is ``None`` when the mean phonon number vanishes.
    """

    mean_n: float
    variance: float
    fano: float
    purity: float


def state_metrics(state):
    rho = as_phonon_dm(state)
    p = np.clip(np.real(np.diagonal(rho)), 0.0, None)
    p = p / p.sum()
    n = np.arange(p.size)
    mean = float(p @ n)
    var = float(p @ n**2 - mean**2)
    fano = var / mean if mean > 1e-12 else None
    purity = float(np.real(np.trace(rho @ rho)))
    return StateMetrics(mean, var, fano, purity)


def purity(state):
    rho = as_phonon_dm(state)
    return float(np.real(np.trace(rho @ rho)))


def _psd_sqrt(rho):
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def fidelity(a, b):
    """Uhlmann fidelity ``(Tr sqrt(sqrt(a) b sqrt(a)))**2`` between phonon states.

    Kets are handled exactly (``|<psi|phi>|^2`` or ``<psi|rho|psi>``); joint
    inputs are reduced to their phonon marginal first. States of different
    truncation are compared by zero-padding the smaller one.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    ka, kb = kind_of(a), kind_of(b)
    if ka in ("joint_ket", "joint_dm"):
        a, ka = as_phonon_dm(a), "dm"
    if kb in ("joint_ket", "joint_dm"):
        b, kb = as_phonon_dm(b), "dm"
    dim = max(a.shape[-1], b.shape[-1])
    a, b = pad_state(a, dim), pad_state(b, dim)
    if ka == "ket" and kb == "ket":
        return float(abs(np.vdot(a, b)) ** 2)
    if ka == "ket":
        return float(np.real(a.conj() @ as_phonon_dm(b) @ a))
    if kb == "ket":
        return float(np.real(b.conj() @ as_phonon_dm(a) @ b))
    ra, rb = as_phonon_dm(a), as_phonon_dm(b)
    s = _psd_sqrt(ra)
    lam = np.linalg.eigvalsh(s @ rb @ s)
    return float(np.sum(np.sqrt(np.clip(lam, 0, None))) ** 2)


def pad_state(x, dim):
    """Zero-pad a phonon ket or density matrix to ``dim`` levels."""
    x = np.asarray(x, dtype=complex)
    d = x.shape[-1]
    if d == dim:
        return x
    if d > dim:
        raise ValueError("cannot pad to a smaller dimension")
    if x.ndim == 1:
        return np.concatenate([x, np.zeros(dim - d, dtype=complex)])
    out = np.zeros((dim, dim), dtype=complex)
    out[:d, :d] = x
    return out


def commutator(x, y):
    return x @ y - y @ x


@dataclass(frozen=True)
class WignerGrid:
    """Phase-space samples; ``values[j, i]`` is evaluated at ``re_axis[i] + 1j * im_axis[j]``."""

    re_axis: np.ndarray
    im_axis: np.ndarray
    values: np.ndarray

    def integral(self):
        return float(np.trapezoid(np.trapezoid(self.values, self.re_axis, axis=1), self.im_axis))

    def min(self):
        return float(self.values.min())


def _grid(xvec, yvec):
    xvec = np.asarray(xvec, dtype=float)
    yvec = np.asarray(yvec, dtype=float) if yvec is not None else xvec
    return xvec, yvec, xvec[None, :] + 1j * yvec[:, None]


def _edge_warning(rho, tol):
    top = float(np.real(rho[-1, -1]))
    if top > tol:
        warnings.warn(
            f"state holds {top:.2g} on n_max={rho.shape[0] - 1}; its phase-space "
            "distribution is distorted by truncation",
            RuntimeWarning,
            stacklevel=3,
        )


def wigner(state, xvec, yvec=None, leakage_tol=1e-6):
    """Wigner function ``W(alpha) = (2/pi) sum_n (-1)^n <n|D(alpha)^dag rho D(alpha)|n>``.

    Evaluated in closed form from generalized Laguerre polynomials, so that
    ``W(0) = 2/pi`` for vacuum and ``-2/pi`` for ``|1>``.
    """
    rho = as_phonon_dm(state)
    xvec, yvec, alpha = _grid(xvec, yvec)
    d = rho.shape[0]
    _edge_warning(rho, leakage_tol)

    x = 4.0 * np.abs(alpha) ** 2
    gauss = np.exp(-0.5 * x)
    lf = log_factorial(np.arange(d))
    total = np.zeros(alpha.shape)
    for n in range(d):
        # diagonal term
        if abs(rho[n, n]) > 0:
            total += (-1) ** n * np.real(rho[n, n]) * eval_genlaguerre(n, 0, x)
        for m in range(n + 1, d):
            c = rho[m, n]
            if c == 0:
                continue
            k = m - n
            coef = (-1) ** n * np.exp(0.5 * (lf[n] - lf[m]))
            term = coef * (2.0 * np.conj(alpha)) ** k * eval_genlaguerre(n, k, x)
            total += 2.0 * np.real(c * term)
    return WignerGrid(xvec, yvec, (2.0 / np.pi) * gauss * total)


def wigner_brute_force(state, xvec, yvec=None, pad=30):
    """Displaced-parity Wigner function from explicit displacement operators."""
    rho = as_phonon_dm(state)
    xvec, yvec, alpha = _grid(xvec, yvec)
    parity = (-1.0) ** np.arange(rho.shape[0] + pad)
    values = np.empty(alpha.shape)
    for idx, a in np.ndenumerate(alpha):
        values[idx] = (2 / np.pi) * parity @ displaced_populations(rho, -a, pad=pad)
    return WignerGrid(xvec, yvec, values)


def qfunction(state, xvec, yvec=None):
    """Husimi function ``Q(alpha) = <alpha|rho|alpha> / pi``."""
    rho = as_phonon_dm(state)
    xvec, yvec, alpha = _grid(xvec, yvec)
    d = rho.shape[0]
    a = alpha.ravel()
    amp = np.empty((a.size, d), dtype=complex)
    amp[:, 0] = np.exp(-0.5 * np.abs(a) ** 2)
    for k in range(1, d):
        amp[:, k] = amp[:, k - 1] * a / np.sqrt(k)
    q = np.real(np.einsum("an,nm,am->a", amp.conj(), rho, amp)) / np.pi
    return q.reshape(alpha.shape)


def validate_density(rho, atol=1e-9):
    """Check the density-operator invariants and return the validated array."""
    return check_density_matrix(rho, atol=atol)


__all__ = [
    "FockTruncation",
    "StateMetrics",
    "WignerGrid",
    "annihilation",
    "apply_ladder",
    "apply_s_minus",
    "apply_s_plus",
    "coherent_ket",
    "commutator",
    "creation",
    "displaced_populations",
    "displacement",
    "fidelity",
    "fock_ket",
    "joint",
    "ket_to_dm",
    "make_coherent",
    "make_fock",
    "purity",
    "qfunction",
    "s_minus",
    "s_plus",
    "state_metrics",
    "superposition",
    "thermal_dm",
    "validate_density",
    "wigner",
    "wigner_brute_force",
]

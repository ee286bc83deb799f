"""Input validation helpers shared by the public operations.

Array conventions used throughout the package (``d = n_max + 1``):

* phonon ket: complex array of shape ``(d,)``
* joint ket: complex array of shape ``(2, d)``; row 0 is the dark qubit
  state (down), row 1 the bright one (up)
* phonon density matrix: shape ``(d, d)``
* joint density matrix: shape ``(2, d, 2, d)``
"""
import numpy as np

from .exceptions import ContractError

DOWN, UP = 0, 1
ATOL = 1e-9


def kind_of(x):
    """Classify an array as one of ``ket``, ``joint_ket``, ``dm``, ``joint_dm``.

    A ``(2, 2)`` array is read as a density matrix; joint kets therefore need
    ``n_max >= 2``.
    """
    x = np.asarray(x)
    if x.ndim == 1:
        return "ket"
    if x.ndim == 4:
        if x.shape[0] != 2 or x.shape[2] != 2 or x.shape[1] != x.shape[3]:
            raise ValueError(f"joint density matrix must have shape (2, d, 2, d), got {x.shape}")
        return "joint_dm"
    if x.ndim == 2:
        if x.shape[0] == 2 and x.shape[1] != 2:
            return "joint_ket"
        if x.shape[0] == x.shape[1]:
            return "dm"
    raise ValueError(f"cannot interpret array of shape {x.shape} as a state")


def check_ket(psi, atol=ATOL, name="state"):
    psi = np.asarray(psi, dtype=complex)
    norm = np.vdot(psi.ravel(), psi.ravel()).real
    if abs(norm - 1.0) > atol:
        raise ContractError(f"{name} is not normalized (norm^2 = {norm:.12g})")
    return psi


def check_density_matrix(rho, atol=ATOL, name="rho"):
    """Validate Hermiticity, unit trace and positivity; return a complex copy."""
    rho = np.array(rho, dtype=complex)
    shape = rho.shape
    if rho.ndim == 4:
        d2 = shape[0] * shape[1]
        mat = rho.reshape(d2, d2)
    elif rho.ndim == 2 and shape[0] == shape[1]:
        mat = rho
    else:
        raise ValueError(f"{name} must be square, got shape {shape}")
    if not np.allclose(mat, mat.conj().T, atol=atol, rtol=0):
        raise ContractError(f"{name} is not Hermitian")
    tr = np.trace(mat).real
    if abs(tr - 1.0) > atol:
        raise ContractError(f"{name} does not have unit trace (trace = {tr:.12g})")
    lam_min = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T)).min()
    if lam_min < -atol:
        raise ContractError(f"{name} has a negative eigenvalue {lam_min:.3g}")
    return rho


def check_probabilities(p, atol=1e-6, name="probabilities"):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if np.any(p < -atol) or np.any(p > 1 + atol):
        raise ValueError(f"{name} must lie in [0, 1]")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1 (sum = {p.sum():.9g})")
    return p


def ket_to_dm(psi):
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim == 1:
        return np.outer(psi, psi.conj())
    return np.einsum("ab,cd->abcd", psi, psi.conj())


def as_phonon_dm(x):
    """Reduce any supported state representation to a phonon density matrix."""
    x = np.asarray(x, dtype=complex)
    kind = kind_of(x)
    if kind == "ket":
        return np.outer(x, x.conj())
    if kind == "joint_ket":
        return np.einsum("qm,qn->mn", x, x.conj())
    if kind == "joint_dm":
        return np.einsum("qmqn->mn", x)
    return x


def as_joint_dm(x):
    x = np.asarray(x, dtype=complex)
    kind = kind_of(x)
    if kind == "joint_ket":
        return ket_to_dm(x)
    if kind == "joint_dm":
        return x
    raise ContractError("expected a joint (qubit x phonon) state")


def populations(x):
    """Phonon-number distribution of any state representation."""
    x = np.asarray(x)
    kind = kind_of(x)
    if kind == "ket":
        return np.abs(x) ** 2
    if kind == "joint_ket":
        return (np.abs(x) ** 2).sum(axis=0)
    return np.real(np.diagonal(as_phonon_dm(x))).copy()

"""Fluorescence read-out, post-selection and phonon-population inference from sideband scans."""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import DOWN, UP, as_joint_dm, kind_of, populations
from .dynamics import TrapParams, dynamic_blocks, op_subtract
from .exceptions import InferenceError, PostSelectionError
from .hilbert import joint
from .noise import heat, reads_bright_probability


@dataclass(frozen=True)
class ShotRecord:
    duration: float
    n_shots: int
    n_bright: int

    def __post_init__(self):
        if not 0 <= self.n_bright <= self.n_shots:
            raise ValueError("need 0 <= n_bright <= n_shots")


@dataclass(frozen=True)
class SidebandScan:
    """Bright counts of a blue-sideband time scan.

    ``expected`` holds the exact bright probabilities when the scan was
    generated without shot noise; :attr:`bright_fraction` then returns them.
    """

    durations: np.ndarray
    n_shots: np.ndarray
    n_bright: np.ndarray
    expected: np.ndarray = None

    def __post_init__(self):
        d = np.asarray(self.durations, dtype=float)
        if d.ndim != 1 or d.size == 0:
            raise ValueError("durations must be a non-empty 1-D array")
        if np.any(np.diff(d) <= 0):
            raise ValueError("durations must be strictly increasing")
        shots = np.broadcast_to(np.asarray(self.n_shots, dtype=int), d.shape).copy()
        bright = np.asarray(self.n_bright, dtype=int)
        if bright.shape != d.shape or np.any(bright < 0) or np.any(bright > shots):
            raise ValueError("n_bright must satisfy 0 <= n_bright <= n_shots per duration")
        object.__setattr__(self, "durations", d)
        object.__setattr__(self, "n_shots", shots)
        object.__setattr__(self, "n_bright", bright)

    @property
    def bright_fraction(self):
        if self.expected is not None:
            return np.asarray(self.expected, dtype=float)
        return self.n_bright / np.maximum(self.n_shots, 1)

    @property
    def records(self):
        return [ShotRecord(float(t), int(n), int(b)) for t, n, b in zip(self.durations, self.n_shots, self.n_bright)]

    @classmethod
    def from_records(cls, records):
        return cls(
            np.array([r.duration for r in records]),
            np.array([r.n_shots for r in records]),
            np.array([r.n_bright for r in records]),
        )


def default_durations(trap=None, n_points=40, span=3.0):
    """``n_points`` durations spread over ``(0, span * t_pi]``."""
    trap = TrapParams() if trap is None else trap
    return np.linspace(0, span * trap.t_pi, n_points + 1)[1:]


# ---------------------------------------------------------------------------
# detection

@dataclass(frozen=True)
class DetectionResult:
    """Outcome of fluorescence detection with post-selection on the dark reading.

    ``dark_state`` is the phonon state conditioned on reading dark: a ket when
    the conditioning keeps a pure input pure, otherwise a density matrix.
    ``dark_fraction`` is the sampled fraction when shots were drawn and the
    Born probability ``p_dark`` otherwise.
    """

    n_bright: int
    n_dark: int
    dark_state: np.ndarray
    dark_fraction: float
    p_dark: float


def detect(state, n_shots=None, noise=None, rng=None, window=None):
    """Read out the qubit of a joint state; bright is up, dark is down.

    With ``noise`` the surviving state heats for the detection window
    (``window`` overrides ``noise.detection_window``) and readings flip with
    the configured error rates. A dark reading of zero probability raises
    :class:`PostSelectionError`.
    """
    state = np.asarray(state, dtype=complex)
    kind = kind_of(state)
    if kind not in ("joint_ket", "joint_dm"):
        raise ValueError(f"detection needs a joint state, got {kind}")
    window = (noise.detection_window if noise is not None else 0.0) if window is None else window
    eps_b = noise.eps_bright if noise is not None else 0.0
    eps_d = noise.eps_dark if noise is not None else 0.0
    heats = noise is not None and noise.heating_rate > 0 and window > 0

    if kind == "joint_ket" and not heats and eps_b == 0:
        down = state[DOWN]
        p_down = float(np.vdot(down, down).real)
        p_dark = (1 - eps_d) * p_down
        dark_state = down / np.sqrt(p_down) if p_down > 1e-15 else None
    else:
        rho = as_joint_dm(state)
        if heats:
            rho = heat(rho, window, noise)
        sigma = (1 - eps_d) * rho[DOWN, :, DOWN, :] + eps_b * rho[UP, :, UP, :]
        p_dark = float(np.trace(sigma).real)
        dark_state = sigma / p_dark if p_dark > 1e-15 else None
    if p_dark <= 1e-15 or dark_state is None:
        raise PostSelectionError("the dark (no-fluorescence) outcome has zero probability")
    if n_shots:
        rng = np.random.default_rng() if rng is None else rng
        n_dark = int(rng.binomial(n_shots, min(max(p_dark, 0.0), 1.0)))
        return DetectionResult(n_shots - n_dark, n_dark, dark_state, n_dark / n_shots, p_dark)
    return DetectionResult(0, 0, dark_state, p_dark, p_dark)


def subtract_and_select(state, noise=None, rng=None, sweep=None, n_shots=None, ideal=False, step=None):
    """Subtraction pulses followed by dark post-selection.

    Accepts a phonon ket/density matrix (prepared with the qubit down) or a
    joint state. Returns ``(phonon_state, success_prob)``.
    """
    state = np.asarray(state, dtype=complex)
    kind = kind_of(state)
    if kind == "ket":
        state = joint(state)
    elif kind == "dm":
        d = state.shape[0]
        full = np.zeros((2, d, 2, d), dtype=complex)
        full[DOWN, :, DOWN, :] = state
        state = full
    pre = op_subtract(state, sweep, step=step, noise=noise, ideal=ideal)
    result = detect(pre, n_shots=n_shots, noise=noise, rng=rng)
    return result.dark_state, result.dark_fraction


# ---------------------------------------------------------------------------
# sideband scans

def sideband_excitation(pops, durations, trap=None):
    """Exact ``P_up(t)`` of a phonon distribution under a resonant sideband pulse."""
    trap = TrapParams() if trap is None else trap
    pops = np.asarray(pops, dtype=float)
    dim = pops.size + 1
    out = np.empty(len(durations))
    for k, t in enumerate(durations):
        blocks = dynamic_blocks(t, trap.sideband_rabi, dim)
        out[k] = pops @ np.abs(blocks[:, 1, 0]) ** 2
    return out


def simulate_sideband_scan(state, durations=None, n_shots=100, trap=None, noise=None, rng=None, exact=False):
    """Blue-sideband time scan of a phonon state with the qubit prepared down.

    Every duration gets its own random substream spawned from ``rng``.
    ``exact=True`` records the noiseless probabilities instead of sampling
    (read-out flips are still folded in).
    """
    trap = TrapParams() if trap is None else trap
    durations = default_durations(trap) if durations is None else np.asarray(durations, dtype=float)
    p_up = sideband_excitation(populations(state), durations, trap)
    p_bright = np.clip(reads_bright_probability(p_up, noise), 0.0, 1.0)
    shots = np.full(durations.shape, int(n_shots))
    if exact:
        return SidebandScan(durations, shots, np.rint(p_bright * shots).astype(int), expected=p_bright)
    rng = np.random.default_rng() if rng is None else rng
    streams = rng.spawn(len(durations))
    bright = np.array([s.binomial(n, p) for s, n, p in zip(streams, shots, p_bright)])
    return SidebandScan(durations, shots, bright)


def project_simplex(v):
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def sideband_design(durations, t_pi, n_levels, decay=0.0):
    """Design matrix ``A[t, n] = (1 - cos(sqrt(n+1) pi t / t_pi) exp(-decay (n+1) t)) / 2``."""
    t = np.asarray(durations, dtype=float)[:, None]
    n = np.arange(n_levels)[None, :]
    return 0.5 * (1 - np.cos(np.sqrt(n + 1) * np.pi * t / t_pi) * np.exp(-decay * (n + 1) * t))


def _simplex_lsq(A, y, w, max_iter, tol):
    # accelerated projected gradient with adaptive restart
    Aw = A * w[:, None]
    H = A.T @ Aw
    b = Aw.T @ y
    L = np.linalg.eigvalsh(H).max()
    x = np.full(A.shape[1], 1.0 / A.shape[1])
    z, theta = x.copy(), 1.0
    for it in range(1, max_iter + 1):
        x_new = project_simplex(z - (H @ z - b) / L)
        if np.abs(x_new - x).max() < tol:
            return x_new, it
        theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta**2))
        if (z - x_new) @ (x_new - x) > 0:
            theta_new, z = 1.0, x_new
        else:
            z = x_new + (theta - 1) / theta_new * (x_new - x)
        x, theta = x_new, theta_new
    return x, max_iter


class PopulationFitter(BaseEstimator):
    """Constrained least-squares fit of phonon populations to a sideband scan.

    Fits ``P_up(t) = sum_n p_n sin^2(sqrt(n+1) pi t / (2 t_pi))`` over
    ``n = 0..n_max_fit`` with ``p >= 0`` and ``sum(p) = 1``. With
    ``fit_decay`` a common damping rate multiplying ``(n+1)`` is fitted as
    well. ``X`` holds durations in seconds (1-D, or a single column), ``y``
    the bright fractions; ``sample_weight`` is typically the shot count.
    """

    def __init__(self, t_pi=13e-6, n_max_fit=8, fit_decay=False, max_iter=50000, tol=1e-13):
        self.t_pi = t_pi
        self.n_max_fit = n_max_fit
        self.fit_decay = fit_decay
        self.max_iter = max_iter
        self.tol = tol

    def _durations(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2 and X.shape[1] == 1:
            X = X[:, 0]
        if X.ndim != 1:
            raise ValueError("X must be a 1-D array of durations")
        return X

    def fit(self, X, y, sample_weight=None):
        t = self._durations(X)
        y = np.asarray(y, dtype=float)
        if y.shape != t.shape:
            raise ValueError("X and y lengths differ")
        w = np.ones_like(t) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        w = w / w.mean()
        levels = self.n_max_fit + 1
        if t.max() < self.t_pi:
            raise InferenceError("scan must cover at least one fundamental pi time")
        A = sideband_design(t, self.t_pi, levels)
        if np.linalg.matrix_rank(A) < levels:
            raise InferenceError(f"design matrix is rank deficient for {levels} levels with {t.size} durations")

        def solve(decay):
            A = sideband_design(t, self.t_pi, levels, decay)
            p, it = _simplex_lsq(A, y, w, self.max_iter, self.tol)
            r = A @ p - y
            return float(r @ (w * r)), p, it

        decay = 0.0
        if self.fit_decay:
            from scipy.optimize import minimize_scalar

            scale = 1.0 / self.t_pi
            res = minimize_scalar(lambda g: solve(g * scale)[0], bounds=(0.0, 1.0), method="bounded",
                                  options={"xatol": 1e-6})
            decay = res.x * scale
        loss, p, it = solve(decay)
        self.populations_ = p
        self.decay_rate_ = decay
        self.n_iter_ = it
        self.residual_ = loss
        return self

    def predict(self, X):
        check_is_fitted(self, "populations_")
        t = self._durations(X)
        return sideband_design(t, self.t_pi, self.n_max_fit + 1, self.decay_rate_) @ self.populations_


def infer_populations(scan, trap=None, n_max_fit=8, fit_decay=False):
    """Phonon distribution ``p_0..p_{n_max_fit}`` inferred from a sideband scan."""
    trap = TrapParams() if trap is None else trap
    fitter = PopulationFitter(t_pi=trap.t_pi, n_max_fit=n_max_fit, fit_decay=fit_decay)
    fitter.fit(scan.durations, scan.bright_fraction, sample_weight=scan.n_shots)
    return fitter.populations_


__all__ = [
    "DetectionResult",
    "PopulationFitter",
    "ShotRecord",
    "SidebandScan",
    "default_durations",
    "detect",
    "infer_populations",
    "project_simplex",
    "sideband_design",
    "sideband_excitation",
    "simulate_sideband_scan",
    "subtract_and_select",
]

"""Named experiments: each replays one pulse protocol end to end and writes its artifacts.

Every experiment takes a resolved :class:`~phonon_arith.config.ExperimentConfig`
and an output directory, draws all randomness from substreams of one seeded
generator, and returns a :class:`RunReport`. Artifacts are written under
``<outdir>/<experiment>/<label>/`` together with ``config.json``,
``report.txt`` and ``manifest.json`` (config hash and SHA-256 of every
artifact). Nothing time-dependent is written, so a fixed seed reproduces the
directory byte for byte.
"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

from . import io
from ._validation import DOWN, UP, as_phonon_dm, kind_of, populations
from .config import ExperimentConfig, _json_default
from .dynamics import (
    adiabatic_transfer,
    op_add,
    reset_qubit,
    sweep_controls,
    transfer_probabilities,
)
from .hilbert import (
    apply_s_minus,
    apply_s_plus,
    coherent_ket,
    fidelity,
    fock_ket,
    joint,
    state_metrics,
    superposition,
    thermal_dm,
    wigner,
)
from .measurement import default_durations, simulate_sideband_scan, subtract_and_select
from .noise import NoiseParams, jitter_detuning
from .tomography import MLETomography, bootstrap_errors, generate_dataset

log = logging.getLogger(__name__)


@dataclass
class RunReport:
    """Summary of one experiment run.

    ``metrics`` maps names to finite floats; ``artifacts`` lists the files
    written (relative to ``directory``).
    """

    experiment: str
    state: str
    metrics: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    directory: Path = None
    config_hash: str = ""

    def to_text(self):
        lines = [f"experiment: {self.experiment}", f"input state: {self.state}", f"config hash: {self.config_hash}",
                 "metrics:"]
        lines += [f"  {k}: {v:.10g}" for k, v in self.metrics.items()]
        lines.append("artifacts:")
        lines += [f"  {a}" for a in self.artifacts]
        return "\n".join(lines) + "\n"


class _Run:
    """Collects metrics and artifacts while an experiment executes."""

    def __init__(self, config, directory):
        self.config = config
        self.dir = Path(directory)
        self.metrics = {}
        self.artifacts = []
        self.rng = np.random.default_rng(config.seed)

    def stream(self):
        return self.rng.spawn(1)[0]

    def metric(self, name, value):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"metric {name} is not finite")
        self.metrics[name] = value

    def path(self, name):
        self.artifacts.append(name)
        return self.dir / name

    @property
    def noise(self):
        return NoiseParams.ideal() if self.config.exact else self.config.noise


# ---------------------------------------------------------------------------
# helpers

def input_state(config):
    """Phonon state described by ``config.state`` on ``config.truncation``."""
    spec, trunc = config.state, config.truncation
    if spec.kind == "fock":
        return fock_ket(spec.n, trunc)
    if spec.kind == "coherent":
        return coherent_ket(spec.alpha, trunc)
    if spec.kind == "superposition":
        return superposition(spec.levels, trunc)
    return thermal_dm(spec.nbar, trunc)


def _as_joint(state):
    if kind_of(state) in ("joint_ket", "joint_dm"):
        return state
    if kind_of(state) == "ket":
        return joint(state)
    d = state.shape[0]
    out = np.zeros((2, d, 2, d), dtype=complex)
    out[DOWN, :, DOWN, :] = state
    return out


def _repetitions(cfg, default):
    return default if cfg.repetitions is None else cfg.repetitions


def _add(run, state):
    cfg = run.config
    return reset_qubit(op_add(_as_joint(state), cfg.sweep, leakage_tol=cfg.truncation.leakage_tol,
                              noise=run.noise, ideal=cfg.ideal_pulses))


def _subtract(run, state, prefix):
    cfg = run.config
    shots = None if cfg.exact else cfg.shots
    out, success = subtract_and_select(_as_joint(state), run.noise, run.stream(), cfg.sweep, n_shots=shots,
                                       ideal=cfg.ideal_pulses)
    run.metric(f"{prefix}success_prob", success)
    return reset_qubit(out)


def _measure(run, rho, prefix):
    """Tomography of a phonon state: exact data when ``exact``, else a sampled sideband pipeline."""
    cfg = run.config
    settings = cfg.reconstruction
    if cfg.exact:
        dataset = generate_dataset(rho, settings)
    else:
        durations = default_durations(cfg.trap, cfg.scan_points, cfg.scan_span)
        dataset = generate_dataset(rho, settings, cfg.shots, cfg.trap, run.noise, run.stream(),
                                   readout=cfg.readout, n_max_fit=cfg.n_max_fit, durations=durations)
    est = MLETomography.from_settings(settings).fit(dataset)
    io.save_dataset(run.path(f"{prefix}dataset.json"), dataset)
    io.save_density_matrix(run.path(f"{prefix}rho_reconstructed.json"), est.density_matrix_)
    run.metric(f"{prefix}mle_converged", est.converged_)
    if cfg.bootstrap > 1 and dataset.shots is not None:
        err = bootstrap_errors(dataset, settings, cfg.bootstrap, run.stream(), reference=rho, n_jobs=1)
        run.metric(f"{prefix}fidelity_std", err["fidelity_std"])
        run.metric(f"{prefix}purity_std", err["purity_std"])
    return est.density_matrix_


def _report_state(run, rho, prefix, reference=None):
    m = state_metrics(rho)
    run.metric(f"{prefix}mean_n", m.mean_n)
    run.metric(f"{prefix}variance", m.variance)
    if m.fano is not None:
        run.metric(f"{prefix}fano", m.fano)
    run.metric(f"{prefix}purity", m.purity)
    if reference is not None:
        run.metric(f"{prefix}fidelity", fidelity(reference, rho))


def _save_state(run, rho, prefix):
    rho = as_phonon_dm(rho)
    io.save_density_matrix(run.path(f"{prefix}rho.json"), rho)
    io.save_distribution_csv(run.path(f"{prefix}distribution.csv"), populations(rho))


def fit_rabi_frequency(times, p_up, guess):
    """Fit ``A sin^2(w t / 2)`` to an excitation curve; returns ``w`` in rad/s.

    A coarse scan over ``w`` in ``[0.2, 5] * guess`` seeds a least-squares refinement.
    """
    times = np.asarray(times, dtype=float)
    p_up = np.asarray(p_up, dtype=float)
    grid = np.linspace(0.2, 5.0, 4000) * guess
    basis = np.sin(np.outer(grid, times) / 2) ** 2
    amp = np.clip((basis @ p_up) / np.einsum("ij,ij->i", basis, basis), 0, 1)
    resid = ((basis * amp[:, None] - p_up) ** 2).sum(axis=1)
    k = int(np.argmin(resid))

    def model(t, a, w):
        return a * np.sin(w * t / 2) ** 2

    popt, _ = curve_fit(model, times, p_up, p0=(amp[k], grid[k]))
    return float(abs(popt[1]))


# ---------------------------------------------------------------------------
# experiments

def exp_rabi_scan(run):
    cfg = run.config
    durations = default_durations(cfg.trap, cfg.scan_points, cfg.scan_span)
    curves, ratios = [], []
    base = None
    for n in cfg.levels:
        scan = simulate_sideband_scan(fock_ket(n, cfg.truncation), durations, cfg.shots, cfg.trap, run.noise,
                                      run.stream(), exact=cfg.exact)
        io.save_scan_csv(run.path(f"scan_n{n}.csv"), scan)
        curves.append(scan.bright_fraction)
        w = fit_rabi_frequency(durations, scan.bright_fraction, np.sqrt(n + 1) * cfg.trap.sideband_rabi)
        base = w if base is None else base
        ratios.append((n, w, w / base))
        run.metric(f"n{n}_omega_khz", w / (2 * np.pi * 1e3))
    n0 = cfg.levels[0]
    errs = [abs(r / np.sqrt((n + 1) / (n0 + 1)) - 1) for n, _, r in ratios]
    run.metric("max_rel_error_sqrt_scaling", max(errs))
    io.write_csv(run.path("rabi_curves.csv"), ["duration_us"] + [f"p_up_n{n}" for n in cfg.levels],
                 [[t * 1e6, *vals] for t, vals in zip(durations, np.array(curves).T)])
    io.write_csv(run.path("rabi_fit.csv"), ["n", "omega_khz", "ratio", "sqrt_ratio_expected"],
                 [[n, w / (2 * np.pi * 1e3), r, np.sqrt((n + 1) / (n0 + 1))] for n, w, r in ratios])


def exp_adiabatic_transfer(run):
    cfg = run.config
    levels = np.asarray(cfg.levels, dtype=int)
    probs = transfer_probabilities(levels, cfg.sweep)
    rows = [[int(n), p] for n, p in zip(levels, probs)]
    header = ["n", "p_transfer"]
    noise = run.noise
    if noise.jitter_sigma > 0:
        stream = run.stream()
        draws = np.array([transfer_probabilities(levels, jitter_detuning(cfg.sweep, noise, stream))
                          for _ in range(_repetitions(cfg, 20))])
        header.append("p_transfer_jitter")
        rows = [r + [p] for r, p in zip(rows, draws.mean(axis=0))]
        run.metric("min_p_transfer_jitter", draws.mean(axis=0).min())
    if noise.heating_rate > 0:
        dim = int(levels.max()) + 3
        heated = []
        for n in levels:
            rho = adiabatic_transfer(joint(fock_ket(int(n), dim - 1)), cfg.sweep, noise=noise)
            heated.append(float(np.real(rho[UP, n + 1, UP, n + 1])))
        header.append("p_transfer_heating")
        rows = [r + [p] for r, p in zip(rows, heated)]
        run.metric("min_p_transfer_heating", min(heated))
    io.write_csv(run.path("transfer.csv"), header, rows)
    run.metric("min_p_transfer", probs.min())
    run.metric("spread_p_transfer", probs.max() - probs.min())
    t = np.linspace(0, cfg.sweep.duration, 401)
    omega, delta = sweep_controls(t, cfg.sweep)
    khz = 2 * np.pi * 1e3
    io.write_csv(run.path("sweep_waveform.csv"), ["t_us", "omega_re_khz", "omega_im_khz", "delta_khz"],
                 [[a * 1e6, b.real / khz, b.imag / khz, c / khz] for a, b, c in zip(t, omega, delta)])


def exp_add(run):
    cfg = run.config
    psi = input_state(cfg)
    ideal = psi
    state = psi
    _report_state(run, psi, "k0_")
    for k in range(1, _repetitions(cfg, 3) + 1):
        state = _add(run, state)
        ideal = apply_s_plus(ideal, cfg.truncation.leakage_tol)
        prefix = f"k{k}_"
        _save_state(run, state, prefix)
        _report_state(run, as_phonon_dm(state), prefix + "true_", ideal)
        _report_state(run, _measure(run, as_phonon_dm(state), prefix), prefix + "rec_", ideal)


def exp_subtract(run):
    cfg = run.config
    psi = input_state(cfg)
    ideal, p_ideal = apply_s_minus(psi)
    run.metric("ideal_success_prob", p_ideal)
    out = _subtract(run, psi, "")
    _save_state(run, out, "")
    _report_state(run, as_phonon_dm(out), "true_", ideal)
    _report_state(run, _measure(run, as_phonon_dm(out), ""), "rec_", ideal)


def exp_add_then_subtract(run):
    psi = input_state(run.config)
    out = _subtract(run, _add(run, psi), "")
    _save_state(run, out, "")
    _report_state(run, as_phonon_dm(out), "true_", psi)
    _report_state(run, _measure(run, as_phonon_dm(out), ""), "rec_", psi)


def exp_subtract_then_add(run):
    psi = input_state(run.config)
    out = _add(run, _subtract(run, psi, ""))
    ideal, _ = apply_s_minus(psi)
    ideal = apply_s_plus(ideal)
    _save_state(run, out, "")
    _report_state(run, as_phonon_dm(out), "true_", ideal)
    rec = _measure(run, as_phonon_dm(out), "")
    _report_state(run, rec, "rec_", ideal)
    run.metric("true_p0", np.real(as_phonon_dm(out)[0, 0]))
    run.metric("rec_p0", np.real(rec[0, 0]))


def exp_tomography(run):
    rho = as_phonon_dm(input_state(run.config))
    io.save_density_matrix(run.path("rho_true.json"), rho)
    rec = _measure(run, rho, "")
    _report_state(run, rec, "rec_", rho)


def exp_wigner(run):
    cfg = run.config
    state = input_state(cfg)
    for _ in range(_repetitions(cfg, 1)):
        state = _add(run, state)
    rho = as_phonon_dm(state)
    _save_state(run, rho, "")
    axis = np.linspace(-cfg.wigner_extent, cfg.wigner_extent, cfg.wigner_points)
    grid = wigner(rho, axis)
    io.save_wigner_csv(run.path("wigner.csv"), grid)
    run.metric("wigner_min", grid.min())
    run.metric("wigner_integral", grid.integral())
    run.metric("wigner_origin", wigner(rho, [0.0]).values[0, 0])
    _report_state(run, rho, "")


EXPERIMENT_FUNCS = {
    "rabi_scan": exp_rabi_scan,
    "adiabatic_transfer": exp_adiabatic_transfer,
    "add": exp_add,
    "subtract": exp_subtract,
    "add_then_subtract": exp_add_then_subtract,
    "subtract_then_add": exp_subtract_then_add,
    "tomography": exp_tomography,
    "wigner": exp_wigner,
}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(config, outdir="runs"):
    """Execute ``config.experiment`` and write its artifacts; returns a :class:`RunReport`."""
    if not isinstance(config, ExperimentConfig):
        raise TypeError("run() expects an ExperimentConfig")
    chash = config.config_hash()
    label = config.label or chash[:12]
    directory = Path(outdir) / config.experiment / label
    directory.mkdir(parents=True, exist_ok=True)
    log.info("running %s into %s", config.experiment, directory)

    r = _Run(config, directory)
    (directory / "config.json").write_text(
        json.dumps(config.to_dict(), indent=1, sort_keys=True, default=_json_default) + "\n")
    EXPERIMENT_FUNCS[config.experiment](r)

    report = RunReport(config.experiment, config.state.describe(), r.metrics, list(r.artifacts), directory, chash)
    (directory / "report.txt").write_text(report.to_text())
    manifest = {
        "experiment": config.experiment,
        "seed": config.seed,
        "config_hash": chash,
        "artifacts": {name: _sha256(directory / name) for name in ["config.json", "report.txt", *r.artifacts]},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    report.artifacts = ["config.json", "report.txt", "manifest.json", *r.artifacts]
    return report


__all__ = ["EXPERIMENT_FUNCS", "RunReport", "fit_rabi_frequency", "input_state", "run"]

import filecmp
import json
import math
from pathlib import Path

import numpy as np
import pytest

from phonon_arith.cli import main
from phonon_arith.config import (
    EXPERIMENTS,
    ExperimentConfig,
    StateSpec,
    config_from_dict,
    parse_config,
    with_overrides,
)
from phonon_arith.exceptions import ConfigError
from phonon_arith.experiments import fit_rabi_frequency, run

KHZ = 2 * math.pi * 1e3


def write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


# --- parsing -------------------------------------------------------------------------

def test_empty_file_gives_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, ""))
    assert cfg == ExperimentConfig()
    assert cfg.sweep.omega0 == pytest.approx(KHZ * 38.5)
    assert cfg.sweep.beta == pytest.approx(0.075)
    assert cfg.sweep.delta0 == pytest.approx(1.6 * cfg.sweep.omega0)
    assert cfg.sweep.duration == pytest.approx(91e-6)
    assert cfg.trap.t_pi == pytest.approx(13e-6)
    assert cfg.noise.heating_rate == pytest.approx(150.0)


def test_units_are_converted(tmp_path):
    cfg = parse_config(write(tmp_path, """
experiment: rabi_scan
sweep:
  omega0_khz: 40
  duration_us: 100
trap:
  t_pi_us: 12.5
noise:
  jitter_sigma_hz: 100
  detection_window_us: 250
"""))
    assert cfg.experiment == "rabi_scan"
    assert cfg.sweep.omega0 == pytest.approx(KHZ * 40)
    assert cfg.sweep.duration == pytest.approx(100e-6)
    assert cfg.trap.t_pi == pytest.approx(12.5e-6)
    assert cfg.noise.jitter_sigma == pytest.approx(2 * math.pi * 100)
    assert cfg.noise.detection_window == pytest.approx(250e-6)


def test_negative_duration_rejected_with_line(tmp_path):
    path = write(tmp_path, "seed: 1\nsweep:\n  beta: 0.075\n  duration_us: -5\n")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert ":4:" in str(err.value)
    assert "sweep.duration_us" in str(err.value)


def test_unknown_key_rejected_with_line(tmp_path):
    path = write(tmp_path, "seed: 1\nnoise:\n  heating_rate_hz: 150\n  heatng: 3\n")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert ":4:" in str(err.value) and "noise.heatng" in str(err.value)


@pytest.mark.parametrize("text, field", [
    ("experiment: juggle\n", "experiment"),
    ("shots: 0\n", "shots"),
    ("shots: 1.5\n", "shots"),
    ("truncation:\n  n_max: 4.5\n", "truncation.n_max"),
    ("sweep:\n  mid_inversion: 3\n", "sweep.mid_inversion"),
    ("state:\n  kind: squeezed\n", "state.kind"),
    ("state:\n  n: -1\n", "state.n"),
    ("readout: camera\n", "readout"),
    ("levels: [0, -1]\n", "levels"),
    ("bogus: 1\n", "bogus"),
    ("- 1\n- 2\n", "top level"),
])
def test_validation_errors_name_the_field(tmp_path, text, field):
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, text))
    assert field in str(err.value)


def test_bad_yaml(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "seed: [1\n"))


def test_state_spec(tmp_path):
    cfg = parse_config(write(tmp_path, "state:\n  kind: coherent\n  alpha: 1.2\n  alpha_im: -0.3\n"))
    assert cfg.state.alpha == complex(1.2, -0.3)
    assert "alpha" in cfg.state.describe()


def test_config_hash_tracks_content():
    a = ExperimentConfig()
    assert a.config_hash() == ExperimentConfig().config_hash()
    assert with_overrides(a, seed=1).config_hash() != a.config_hash()
    assert with_overrides(a, seed=None) == a


def test_config_from_dict_without_file():
    with pytest.raises(ConfigError) as err:
        config_from_dict({"trap": {"eta": "big"}})
    assert "trap.eta" in str(err.value)


# --- experiments ---------------------------------------------------------------------

@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_every_experiment_runs_with_defaults(tmp_path, experiment):
    report = run(ExperimentConfig(experiment=experiment, shots=200), tmp_path)
    assert report.metrics
    assert all(math.isfinite(v) for v in report.metrics.values())
    for name in report.artifacts:
        assert (report.directory / name).is_file()
    manifest = json.loads((report.directory / "manifest.json").read_text())
    assert manifest["config_hash"] == report.config_hash


def test_rabi_frequencies_scale(tmp_path):
    report = run(ExperimentConfig(experiment="rabi_scan", exact=True), tmp_path)
    assert report.metrics["max_rel_error_sqrt_scaling"] < 0.01


def test_fit_rabi_frequency_exact():
    t = np.linspace(0.5e-6, 40e-6, 60)
    w = 2 * math.pi * 50e3
    assert fit_rabi_frequency(t, 0.9 * np.sin(w * t / 2) ** 2, 2 * math.pi * 40e3) == pytest.approx(w, rel=1e-8)


def test_ideal_add_gives_analytic_fano(tmp_path):
    cfg = ExperimentConfig(experiment="add", exact=True, ideal_pulses=True)
    m = run(cfg, tmp_path).metrics
    lam = 0.81**2
    for k in (1, 2, 3):
        assert m[f"k{k}_true_fano"] == pytest.approx(lam / (lam + k), abs=1e-6)


def test_ideal_subtract_then_add_has_no_vacuum(tmp_path):
    cfg = ExperimentConfig(experiment="subtract_then_add", exact=True, ideal_pulses=True,
                           state=StateSpec(alpha=1.2))
    m = run(cfg, tmp_path).metrics
    assert m["true_p0"] < 1e-12
    assert m["rec_p0"] < 0.05


# --- determinism and CLI -------------------------------------------------------------

def _tree(root):
    return sorted(p.relative_to(root) for p in Path(root).rglob("*") if p.is_file())


def test_runs_are_byte_identical(tmp_path):
    cfg = ExperimentConfig(experiment="tomography", shots=200, seed=7)
    a = run(cfg, tmp_path / "a")
    b = run(cfg, tmp_path / "b")
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    for rel in _tree(tmp_path / "a"):
        assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel, shallow=False)
    assert a.config_hash == b.config_hash


def test_seed_changes_output(tmp_path):
    a = run(ExperimentConfig(experiment="rabi_scan", shots=50, seed=1), tmp_path)
    b = run(ExperimentConfig(experiment="rabi_scan", shots=50, seed=2), tmp_path)
    assert a.directory != b.directory
    assert (a.directory / "scan_n0.csv").read_text() != (b.directory / "scan_n0.csv").read_text()


def test_cli_success(tmp_path, capsys):
    cfg = write(tmp_path, "experiment: wigner\nwigner_points: 11\n")
    code = main(["--config", str(cfg), "--outdir", str(tmp_path / "out"), "--seed", "3", "--label", "demo"])
    assert code == 0
    out = capsys.readouterr().out
    assert "wigner_min" in out
    assert (tmp_path / "out" / "wigner" / "demo" / "wigner.csv").is_file()


def test_cli_overrides(tmp_path, capsys):
    code = main(["--experiment", "rabi_scan", "--shots", "20", "--exact", "--outdir", str(tmp_path)])
    assert code == 0
    report = next(tmp_path.rglob("config.json"))
    doc = json.loads(report.read_text())
    assert doc["shots"] == 20 and doc["exact"] is True


def test_cli_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "sweep:\n  duration_us: -1\n")
    assert main(["--config", str(cfg), "--outdir", str(tmp_path)]) == 2
    assert "duration_us" in capsys.readouterr().err


def test_cli_missing_file(tmp_path):
    assert main(["--config", str(tmp_path / "nope.yaml")]) == 2


def test_cli_bad_shots(tmp_path):
    assert main(["--shots", "0", "--outdir", str(tmp_path)]) == 2


def test_cli_post_selection_failure(tmp_path, capsys):
    cfg = write(tmp_path, "experiment: subtract\nexact: true\nideal_pulses: true\nstate:\n  kind: fock\n  n: 0\n")
    assert main(["--config", str(cfg), "--outdir", str(tmp_path)]) == 3
    assert "post-selection" in capsys.readouterr().err


def test_cli_truncation_failure(tmp_path, capsys):
    cfg = write(tmp_path, "experiment: add\nexact: true\ntruncation:\n  n_max: 3\nstate:\n  kind: fock\n  n: 3\n")
    assert main(["--config", str(cfg), "--outdir", str(tmp_path)]) == 4


def test_shipped_example_config(tmp_path):
    path = Path(__file__).resolve().parents[1] / "configs" / "example.yaml"
    got = parse_config(path).to_dict()
    want = with_overrides(ExperimentConfig(), repetitions=3).to_dict()
    for section in want:
        if isinstance(want[section], dict):
            for key, value in want[section].items():
                assert got[section][key] == pytest.approx(value, rel=1e-12), f"{section}.{key}"
        else:
            assert got[section] == want[section], section
    assert main(["--config", str(path), "--shots", "100", "--outdir", str(tmp_path)]) == 0

"""YAML experiment configuration.

Every key carries its unit in the name: ``*_khz`` values are cyclic
frequencies in kHz (converted to rad/s), ``*_us`` are microseconds
(converted to s) and ``*_hz`` are rates in 1/s (``jitter_sigma_hz`` is a
cyclic frequency and becomes rad/s). Unknown keys are rejected, and every
validation error names the offending field and, when it came from a file,
its line.
"""
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .dynamics import SweepParams, TrapParams
from .exceptions import ConfigError
from .hilbert import FockTruncation
from .noise import NoiseParams
from .tomography import ReconstructionSettings

EXPERIMENTS = (
    "rabi_scan",
    "adiabatic_transfer",
    "add",
    "subtract",
    "add_then_subtract",
    "subtract_then_add",
    "tomography",
    "wigner",
)

KHZ = 2 * math.pi * 1e3
US = 1e-6

# section -> key -> (target field, scale); scale None means "copy as is"
_SCHEMA = {
    "trap": {
        "omega_x_khz": ("omega_x", KHZ),
        "omega_y_khz": ("omega_y", KHZ),
        "omega_z_khz": ("omega_z", KHZ),
        "omega_hf_khz": ("omega_hf", KHZ),
        "eta": ("eta", None),
        "t_pi_us": ("t_pi", US),
    },
    "sweep": {
        "omega0_khz": ("omega0", KHZ),
        "beta": ("beta", None),
        "delta0_khz": ("delta0", KHZ),
        "duration_us": ("duration", US),
        "delta_total_khz": ("delta_total", KHZ),
        "omega_bsb_meas_khz": ("omega_bsb_meas", KHZ),
        "stark_compensated": ("stark_compensated", None),
        "mid_inversion": ("mid_inversion", None),
    },
    "noise": {
        "heating_rate_hz": ("heating_rate", None),
        "nbar": ("nbar", None),
        "eps_bright": ("eps_bright", None),
        "eps_dark": ("eps_dark", None),
        "jitter_sigma_hz": ("jitter_sigma", 2 * math.pi),
        "detection_window_us": ("detection_window", US),
        "co_integrate": ("co_integrate", None),
    },
    "truncation": {
        "n_max": ("n_max", None),
        "leakage_tol": ("leakage_tol", None),
    },
    "reconstruction": {
        "displacement_amp": ("displacement_amp", None),
        "n_angles": ("n_angles", None),
        "max_iters": ("max_iters", None),
        "epsilon": ("epsilon", None),
        "loglik_tol": ("loglik_tol", None),
        "n_max_rec": ("n_max_rec", None),
        "prob_floor": ("prob_floor", None),
    },
}

_INT_FIELDS = {"n_max", "n_angles", "max_iters", "n_max_rec"}

_STATE_KINDS = ("fock", "coherent", "superposition", "thermal")


@dataclass(frozen=True)
class StateSpec:
    """Input phonon state: ``fock`` (``n``), ``coherent`` (``alpha``, complex allowed),
    ``superposition`` (equal-weight ``levels``) or ``thermal`` (``nbar``)."""

    kind: str = "coherent"
    n: int = 0
    alpha: complex = 0.81
    levels: tuple = (0, 1)
    nbar: float = 0.5

    def describe(self):
        if self.kind == "fock":
            return f"|{self.n}>"
        if self.kind == "coherent":
            return f"|alpha={self.alpha:g}>"
        if self.kind == "superposition":
            return "(" + "+".join(f"|{n}>" for n in self.levels) + f")/sqrt({len(self.levels)})"
        return f"thermal(nbar={self.nbar:g})"


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment configuration in SI units.

    ``exact`` switches off noise and shot sampling (analytic data modes);
    ``ideal_pulses`` replaces the simulated sideband sweep by a perfect
    transfer. ``shots`` counts repetitions per scan point or setting.
    ``repetitions`` is the number of additions (``add``: 3, ``wigner``: 1)
    or of jitter draws (``adiabatic_transfer``: 20); ``None`` picks those
    defaults. Sideband scans cover ``scan_points`` durations up to
    ``scan_span * t_pi`` and are fitted with ``n_max_fit + 1`` populations.
    """

    experiment: str = "add"
    seed: int = 0
    label: str = None
    exact: bool = False
    ideal_pulses: bool = False
    shots: int = 1000
    repetitions: int = None
    state: StateSpec = field(default_factory=StateSpec)
    levels: tuple = (0, 1, 2, 3, 4, 5)
    scan_points: int = 80
    scan_span: float = 6.0
    n_max_fit: int = 12
    readout: str = "sideband"
    bootstrap: int = 0
    wigner_extent: float = 3.0
    wigner_points: int = 61
    trap: TrapParams = field(default_factory=TrapParams)
    sweep: SweepParams = field(default_factory=SweepParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    truncation: FockTruncation = field(default_factory=FockTruncation)
    reconstruction: ReconstructionSettings = field(default_factory=ReconstructionSettings)

    def to_dict(self):
        doc = asdict(self)
        doc["state"]["alpha"] = [self.state.alpha.real, self.state.alpha.imag]
        return doc

    def config_hash(self):
        """SHA-256 of the canonical JSON form of the resolved configuration."""
        text = json.dumps(self.to_dict(), sort_keys=True, default=_json_default)
        return hashlib.sha256(text.encode()).hexdigest()


def _json_default(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(type(x))


# top-level keys and their expected types
_TOP = {
    "experiment": str,
    "seed": int,
    "label": str,
    "exact": bool,
    "ideal_pulses": bool,
    "shots": int,
    "repetitions": int,
    "levels": list,
    "scan_points": int,
    "scan_span": float,
    "n_max_fit": int,
    "readout": str,
    "bootstrap": int,
    "wigner_extent": float,
    "wigner_points": int,
}


def _line_map(text):
    """Map key paths (tuples) to 1-based line numbers of the keys in a YAML document."""
    lines = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                lines[p] = k.start_mark.line + 1
                walk(v, p)

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    walk(root, ())
    return lines


class _Ctx:
    def __init__(self, lines, source):
        self.lines = lines
        self.source = source

    def error(self, path, msg):
        where = ".".join(path)
        line = self.lines.get(tuple(path))
        loc = f"{self.source}:{line}: " if line else (f"{self.source}: " if self.source else "")
        return ConfigError(f"{loc}{where}: {msg}")


def _check_type(ctx, path, value, typ):
    if typ is bool:
        ok = isinstance(value, bool)
    elif typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif typ is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, typ)
    if not ok:
        raise ctx.error(path, f"expected {typ.__name__}, got {value!r}")
    return float(value) if typ is float else value


def _build_section(ctx, name, raw, cls):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ctx.error((name,), "expected a mapping")
    schema = _SCHEMA[name]
    kwargs = {}
    for key, value in raw.items():
        if key not in schema:
            raise ctx.error((name, str(key)), f"unknown key (allowed: {', '.join(sorted(schema))})")
        target, scale = schema[key]
        if value is None:
            kwargs[target] = None
            continue
        if isinstance(value, bool) != isinstance(getattr(cls(), target, 0.0), bool):
            raise ctx.error((name, key), f"wrong type for {value!r}")
        if not isinstance(value, (int, float)):
            raise ctx.error((name, key), f"expected a number, got {value!r}")
        if target in _INT_FIELDS and not isinstance(value, int):
            raise ctx.error((name, key), f"expected an integer, got {value!r}")
        kwargs[target] = value * scale if scale is not None else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        bad = next((k for k in raw if _SCHEMA[name][k][0] in str(exc)), None)
        raise ctx.error((name, bad) if bad else (name,), str(exc)) from None


def _build_state(ctx, raw):
    if raw is None:
        return StateSpec()
    if not isinstance(raw, dict):
        raise ctx.error(("state",), "expected a mapping")
    allowed = {"kind", "n", "alpha", "alpha_im", "levels", "nbar"}
    for key in raw:
        if key not in allowed:
            raise ctx.error(("state", str(key)), f"unknown key (allowed: {', '.join(sorted(allowed))})")
    kind = raw.get("kind", "coherent")
    if kind not in _STATE_KINDS:
        raise ctx.error(("state", "kind"), f"must be one of {', '.join(_STATE_KINDS)}")
    kw = {"kind": kind}
    if "n" in raw:
        kw["n"] = _check_type(ctx, ("state", "n"), raw["n"], int)
        if kw["n"] < 0:
            raise ctx.error(("state", "n"), "must be >= 0")
    if "alpha" in raw or "alpha_im" in raw:
        re = _check_type(ctx, ("state", "alpha"), raw.get("alpha", 0.0), float)
        im = _check_type(ctx, ("state", "alpha_im"), raw.get("alpha_im", 0.0), float)
        kw["alpha"] = complex(re, im)
    if "levels" in raw:
        lv = raw["levels"]
        if not isinstance(lv, list) or not lv or not all(isinstance(x, int) and x >= 0 for x in lv):
            raise ctx.error(("state", "levels"), "expected a non-empty list of non-negative integers")
        kw["levels"] = tuple(lv)
    if "nbar" in raw:
        kw["nbar"] = _check_type(ctx, ("state", "nbar"), raw["nbar"], float)
        if kw["nbar"] < 0:
            raise ctx.error(("state", "nbar"), "must be >= 0")
    return StateSpec(**kw)


def config_from_dict(doc, lines=None, source=""):
    """Validate a parsed configuration mapping and convert it to SI units."""
    ctx = _Ctx(lines or {}, source)
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ctx.error((), "top level must be a mapping")
    classes = {"trap": TrapParams, "sweep": SweepParams, "noise": NoiseParams,
               "truncation": FockTruncation, "reconstruction": ReconstructionSettings}
    kwargs = {}
    for key, value in doc.items():
        if key in classes:
            kwargs[key] = _build_section(ctx, key, value, classes[key])
        elif key == "state":
            kwargs["state"] = _build_state(ctx, value)
        elif key in _TOP:
            if value is None:
                continue
            kwargs[key] = _check_type(ctx, (key,), value, _TOP[key])
        else:
            allowed = sorted(list(_TOP) + list(classes) + ["state"])
            raise ctx.error((str(key),), f"unknown key (allowed: {', '.join(allowed)})")
    if "levels" in kwargs:
        lv = kwargs["levels"]
        if not lv or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in lv):
            raise ctx.error(("levels",), "expected a non-empty list of non-negative integers")
        kwargs["levels"] = tuple(lv)
    exp = kwargs.get("experiment", "add")
    if exp not in EXPERIMENTS:
        raise ctx.error(("experiment",), f"must be one of {', '.join(EXPERIMENTS)}")
    positive = ("shots", "repetitions", "scan_points", "n_max_fit", "wigner_points", "scan_span", "wigner_extent")
    for key in positive:
        if key in kwargs and not kwargs[key] > 0:
            raise ctx.error((key,), "must be positive")
    if kwargs.get("bootstrap", 0) < 0:
        raise ctx.error(("bootstrap",), "must be >= 0")
    if kwargs.get("readout", "sideband") not in ("sideband", "direct"):
        raise ctx.error(("readout",), "must be 'sideband' or 'direct'")
    return ExperimentConfig(**kwargs)


def parse_config(path):
    """Load and validate a YAML configuration file. An empty file gives the defaults."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}{line}: could not parse YAML: {getattr(exc, 'problem', exc)}") from None
    return config_from_dict(doc, _line_map(text), str(path))


def with_overrides(config, **overrides):
    """Copy of ``config`` with top-level fields replaced (``None`` values are ignored)."""
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})


__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "StateSpec",
    "config_from_dict",
    "parse_config",
    "with_overrides",
]

"""Plain-text import/export for density matrices, Wigner grids, scans, distributions and datasets.

Density matrices and tomography datasets are JSON documents; curves, grids,
scans and distributions are CSV files. Floats are written with ``repr`` so a
save/load round trip is exact.
"""
import csv
import json
from pathlib import Path

import numpy as np

from .hilbert import WignerGrid
from .measurement import SidebandScan
from .tomography import TomographyDataset


def _fmt(x):
    return repr(float(x))


def density_matrix_to_dict(rho):
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("a square matrix is required")
    return {
        "dimension": int(rho.shape[0]),
        "entries": [[float(z.real), float(z.imag)] for z in rho.ravel()],
    }


def density_matrix_from_dict(doc):
    d = int(doc["dimension"])
    entries = np.asarray(doc["entries"], dtype=float)
    if entries.shape != (d * d, 2):
        raise ValueError(f"expected {d * d} [re, im] pairs, got shape {entries.shape}")
    return (entries[:, 0] + 1j * entries[:, 1]).reshape(d, d)


def save_density_matrix(path, rho):
    """Write ``{"dimension": d, "entries": [[re, im], ...]}`` with row-major entries."""
    _write_text(path, json.dumps(density_matrix_to_dict(rho), indent=1) + "\n")


def load_density_matrix(path):
    return density_matrix_from_dict(json.loads(Path(path).read_text()))


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def write_csv(path, header, rows):
    """Write a CSV with a header row; numeric cells go through ``repr``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else (str(c) if isinstance(c, (int, np.integer)) else _fmt(c))
                        for c in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def save_wigner_csv(path, grid):
    """First row: a corner label then the real-axis values; each further row: imaginary coordinate then W."""
    header = ["im\\re"] + [_fmt(x) for x in grid.re_axis]
    rows = [[y, *vals] for y, vals in zip(grid.im_axis, grid.values)]
    return write_csv(path, header, rows)


def load_wigner_csv(path):
    header, rows = read_csv(path)
    re_axis = np.array(header[1:], dtype=float)
    data = np.array(rows, dtype=float)
    return WignerGrid(re_axis, data[:, 0], data[:, 1:])


def save_scan_csv(path, scan):
    rows = [[t * 1e6, int(n), int(b)] for t, n, b in zip(scan.durations, scan.n_shots, scan.n_bright)]
    return write_csv(path, ["duration_us", "n_shots", "n_bright"], rows)


def load_scan_csv(path):
    header, rows = read_csv(path)
    if header != ["duration_us", "n_shots", "n_bright"]:
        raise ValueError(f"unexpected scan header {header}")
    data = np.array(rows, dtype=float)
    return SidebandScan(data[:, 0] * 1e-6, data[:, 1].astype(int), data[:, 2].astype(int))


def save_distribution_csv(path, probs):
    return write_csv(path, ["n", "p_n"], [[n, p] for n, p in enumerate(np.asarray(probs, dtype=float))])


def load_distribution_csv(path):
    header, rows = read_csv(path)
    if header != ["n", "p_n"]:
        raise ValueError(f"unexpected distribution header {header}")
    data = np.array(rows, dtype=float)
    if np.any(data[:, 0] != np.arange(len(data))):
        raise ValueError("phonon numbers must run 0, 1, 2, ...")
    return data[:, 1]


def dataset_to_dict(dataset):
    shots = dataset.shots
    return {
        "settings": [
            {
                "alpha_re": float(a.real),
                "alpha_im": float(a.imag),
                "freqs": [float(f) for f in fk],
                "shots": None if shots is None else int(shots[k]),
            }
            for k, (a, fk) in enumerate(zip(dataset.alphas, dataset.freqs))
        ]
    }


def dataset_from_dict(doc):
    settings = doc["settings"]
    alphas = np.array([s["alpha_re"] + 1j * s["alpha_im"] for s in settings])
    m = max(len(s["freqs"]) for s in settings)
    freqs = np.zeros((len(settings), m))
    for k, s in enumerate(settings):
        freqs[k, : len(s["freqs"])] = s["freqs"]
    shots = [s.get("shots") for s in settings]
    if all(s is None for s in shots):
        shots = None
    elif any(s is None for s in shots):
        raise ValueError("either every setting or none must carry a shot count")
    return TomographyDataset(alphas, freqs, shots)


def save_dataset(path, dataset):
    return _write_text(path, json.dumps(dataset_to_dict(dataset), indent=1) + "\n")


def load_dataset(path):
    return dataset_from_dict(json.loads(Path(path).read_text()))


__all__ = [
    "dataset_from_dict",
    "dataset_to_dict",
    "density_matrix_from_dict",
    "density_matrix_to_dict",
    "load_dataset",
    "load_density_matrix",
    "load_distribution_csv",
    "load_scan_csv",
    "load_wigner_csv",
    "read_csv",
    "save_dataset",
    "save_density_matrix",
    "save_distribution_csv",
    "save_scan_csv",
    "save_wigner_csv",
    "write_csv",
]

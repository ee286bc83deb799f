"""Simulation and analysis of n-independent phonon addition and subtraction on a trapped ion."""
from . import config, dynamics, experiments, hilbert, io, measurement, noise, tomography
from .config import ExperimentConfig, parse_config
from .dynamics import (
    PulseSchedule,
    SweepParams,
    TrapParams,
    adiabatic_transfer,
    carrier_pi,
    op_add,
    op_subtract,
    propagate,
    reset_qubit,
)
from .exceptions import (
    ConfigError,
    ContractError,
    InferenceError,
    IntegrationError,
    PhononArithError,
    PostSelectionError,
    TruncationError,
)
from .experiments import RunReport, run
from .hilbert import (
    FockTruncation,
    apply_s_minus,
    apply_s_plus,
    coherent_ket,
    displacement,
    fidelity,
    fock_ket,
    make_coherent,
    make_fock,
    state_metrics,
    wigner,
)
from .measurement import PopulationFitter, detect, infer_populations, simulate_sideband_scan, subtract_and_select
from .noise import NoiseParams, heat
from .tomography import MLETomography, ReconstructionSettings, TomographyDataset, generate_dataset, mle_reconstruct

__version__ = "0.1.0"

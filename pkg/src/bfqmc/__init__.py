"""World-line quantum Monte Carlo for trapped 1D Bose-Fermi lattice mixtures."""

from .model import ModelParams, diagonal_energy, trap_potential, validate
from .worldline import (
    LocalMove,
    PropagatorTable,
    WorldlineConfig,
    WorldlineViolation,
    build_propagator_table,
    config_weight,
    local_move_ratio,
)
from .sampler import RunPlan, initialize_config, run_chain, run_chains, sweep
from .observables import (
    InsufficientData,
    MeasurementReport,
    ObservableAccumulator,
    cutoff_monitor,
    detect_plateau,
    finalize,
    measure,
)
from .ed import FockBasis, build_hamiltonian, exchange_splitting, thermal_expectations

__version__ = "0.1.0"

"""Distributed Gaussian-mixture PHD tracking with partial consensus."""
from .errors import (
    ConfigError,
    DegenerateInputError,
    DomainError,
    GMConsensusError,
    InfeasibleTopologyError,
    NumericalDegeneracyError,
)
from .experiment import ExperimentConfig, ResultTable, emit_reports, load_config, parse_config, run_experiment
from .fusion import (
    FusionWeights,
    TgmMessage,
    cgma_fuse,
    cgma_step,
    cgmm_step,
    gci_fuse,
    hungarian,
    message_cost,
    metropolis_matrix,
    metropolis_weights,
)
from .gm import (
    GaussianComponent,
    GaussianMixture,
    MergeScheme,
    RankRule,
    ReductionConfig,
    ThresholdRule,
    mahalanobis_sq,
    omr_merge,
    reduce_mixture,
    select_tgm,
    smr_merge,
)
from .metrics import OspaConfig, consensus_efficiency, network_ospa, ospa
from .network import (
    ConsensusParams,
    NetworkGraph,
    Protocol,
    RoundReport,
    generate_network,
    ring_network,
    run_consensus,
    run_tracking,
)
from .phd import GMPHDFilter, estimate, linear_sensor, range_bearing_sensor
from .scenario import GroundTruth, MeasurementFrame, generate_measurements, scripted_truth, simulate_truth

__version__ = "0.1.0"

"""Risk-constrained structured LQR learning for multi-area load frequency control."""
from .lfc_model import (
    AreaParams,
    DiscreteModel,
    GaussianDisturbance,
    LoadStep,
    Scenario,
    TraceDisturbance,
    build_discrete_model,
    perturb_parameters,
)
from .risk_lqr import (
    CostSpec,
    GainEvaluation,
    NoiseStats,
    estimate_noise_stats,
    gaussian_noise_stats,
    lyapunov_evaluate,
    max_oracle,
    mc_evaluate,
    mc_risk_original,
)
from .sgdmax import StructuredGain, TrainConfig, TrainLog, sgdmax_train, zopg
from .topology import (
    InterconnectionGraph,
    StructurePattern,
    build_laplacian,
    build_output_matrix,
    build_structure_pattern,
    project_onto_pattern,
)

__all__ = [
    "AreaParams", "CostSpec", "DiscreteModel", "GainEvaluation", "GaussianDisturbance",
    "InterconnectionGraph", "LoadStep", "NoiseStats", "Scenario", "StructurePattern",
    "StructuredGain", "TraceDisturbance", "TrainConfig", "TrainLog", "build_discrete_model",
    "build_laplacian", "build_output_matrix", "build_structure_pattern", "estimate_noise_stats",
    "gaussian_noise_stats", "lyapunov_evaluate", "max_oracle", "mc_evaluate", "mc_risk_original",
    "perturb_parameters", "project_onto_pattern", "sgdmax_train", "zopg",
]

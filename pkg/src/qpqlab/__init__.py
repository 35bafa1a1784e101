"""Exact simulation of Quantum Private Queries, its probabilistic variants,
and the local-unitary attacks behind the bit-commitment no-go family."""

from .adversaries import (
    BobStrategy,
    appendix_attack_strategy,
    bob_extract_j,
    build_U1,
    build_U2,
    honest_strategy,
    intercept_strategy,
)
from .core import (
    DensityMatrix,
    RegisterLayout,
    SchmidtDecomposition,
    StateVector,
    UnitaryOp,
    apply_unitary,
    local_conversion_unitary,
    make_basis_state,
    measure_projective,
    partial_trace,
    schmidt_decompose,
    superpose,
    trace_distance,
)
from .harness import ExperimentConfig, StatsReport, audit_requirements, run_experiment
from .nogo import (
    CommitmentScheme,
    OTInstance,
    TwoPartyFunction,
    concealing_gap,
    delayed_choice_attack,
    onesided_via_spqpq,
    oot_as_1s2pc,
    rotation_attack_1s2pc,
    spqpq_as_1s2pc,
)
from .protocol import Database, Scenario, Transcript, appendix_database, run_round

__version__ = "0.1.0"

__all__ = [
    "BobStrategy",
    "appendix_attack_strategy",
    "bob_extract_j",
    "build_U1",
    "build_U2",
    "honest_strategy",
    "intercept_strategy",
    "DensityMatrix",
    "RegisterLayout",
    "SchmidtDecomposition",
    "StateVector",
    "UnitaryOp",
    "apply_unitary",
    "local_conversion_unitary",
    "make_basis_state",
    "measure_projective",
    "partial_trace",
    "schmidt_decompose",
    "superpose",
    "trace_distance",
    "ExperimentConfig",
    "StatsReport",
    "audit_requirements",
    "run_experiment",
    "CommitmentScheme",
    "OTInstance",
    "TwoPartyFunction",
    "concealing_gap",
    "delayed_choice_attack",
    "onesided_via_spqpq",
    "oot_as_1s2pc",
    "rotation_attack_1s2pc",
    "spqpq_as_1s2pc",
    "Database",
    "Scenario",
    "Transcript",
    "appendix_database",
    "run_round",
]

"""Explicit martingale representations for random measures of jumps.

Single-jump integrands, well-ordered and truncated multi-jump recursions,
a doubly stochastic estimator study and a jump-diffusion extension, with an
exact enumeration oracle and a property-suite harness.
"""

from ._validation import (
    ImpossiblePathError,
    IntegrabilityError,
    OracleSizeError,
    UnsupportedModelError,
    UnsupportedPayoffError,
    ValidationError,
)
from .cox import conditional_mean_check, cox_counterexample_experiment
from .harness.discrete import DiscreteModel, enumerate_oracle
from .harness.emit import emit_results, parse_results
from .harness.scenario import ConfigError, Scenario, load_payoff, load_scenario
from .harness.suite import run_property_suite
from .jump_calculus import (
    isometry_estimate,
    optional_qv,
    predictable_qv,
    qv_pushforward_check,
    stochastic_integral,
)
from .jump_diffusion import (
    BrownianRepresenter,
    DiffusionSpec,
    DiscreteJointModel,
    JointModel,
    JointPayoff,
    TerminalPayoff,
    brownian_mrt_integrand,
    product_representation,
    replication_study,
    simulate_joint,
    weak_representation,
)
from .measure_core import (
    DeterministicCompensator,
    JumpLaw,
    JumpPath,
    MarkSpace,
    PathBatch,
    PredictableField,
    single_jump_compensator,
    survival,
    survival_left,
    validate_path,
)
from .multi_jump import (
    CompoundPoissonModel,
    MarkSumPayoff,
    MultiJumpModel,
    TruncationFamily,
    WellOrderedRepresenter,
    discrete_projection_sequence,
    l2_projection_convergence_test,
    parochial_truncation_study,
    simulate_paths,
    well_ordered_integrand,
)
from .single_jump import (
    ChouMeyerRepresenter,
    PayoffFunctional,
    chou_meyer_integrand,
    conditional_expectation_path,
    integrability_bound_check,
    uniqueness_gap,
)

__all__ = [name for name in dir() if not name.startswith("_")]

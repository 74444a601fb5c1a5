"""Configuration-space metric toolkit.

Projection of robot-arm configurations onto task-constraint manifolds under
arbitrary Mahalanobis metrics, diagnostics for the pathologies non-Euclidean
metrics induce, and preference-based metric learning with a collection
service and browser UI.
"""

from .kinematics import (
    ChainArm,
    ChainJoint,
    PlanarArm,
    arm_from_dict,
    arm_to_dict,
    fk,
    fk_chain,
    fk_planar,
    load_arm,
    save_arm,
    self_collides,
    within_limits,
)
from .learning import (
    CRITERIA,
    AnswerDistribution,
    Criterion,
    LearnOptions,
    LearnResult,
    MetricLearner,
    PreferenceDataset,
    aggregate,
    kl_objective,
    kl_objective_lse,
    learn,
    learn_report,
    objective_gradient,
    per_query_kl,
    project_spd_unit,
    sample_choices,
    softmax_dist,
    synth_answers,
)
from .manifold import (
    Branch,
    EmptyManifoldError,
    ManifoldSample,
    TaskTarget,
    TaskType,
    UnreachableTargetError,
    classify_task,
    manifold_centroid,
    reflect_config,
    sample_manifold,
)
from .metrics import (
    IndefiniteMetricError,
    cheap_joint,
    euclidean_metric,
    expensive_joint,
    frobenius_normalize,
    load_metric,
    mahalanobis_sq,
    make_correlated,
    make_weighted,
    parse_metric_spec,
    save_metric,
    validate_metric,
)
from .projection import (
    BasinMap,
    HeightConstraint,
    InfeasibleProjectionError,
    JointValueConstraint,
    ManifoldProjector,
    MirrorReport,
    MultistartOptions,
    PointConstraint,
    ProjectionResult,
    SublevelReport,
    basin_map,
    config_distance,
    mirror_config,
    mirror_experiment,
    project_multistart,
    project_sweep,
    sublevel_components,
)
from .queries import (
    Battery,
    BatterySpec,
    InsufficientDiversityError,
    Query,
    SamplingBudgetError,
    generate_battery,
    generate_query,
)

__version__ = "0.1.0"

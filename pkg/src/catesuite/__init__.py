"""catesuite: heterogeneous-treatment-effect estimation with stability diagnostics.

The package estimates conditional average treatment effects (CATEs) with a
suite of meta-learners (S, T, X, MO, R) and an honest causal forest, all
built on in-package base learners; estimates average effects four ways
(IPW, regression, AIPW, within-cluster matching) with cluster-bootstrap
intervals; bounds hidden-bias sensitivity for matched pairs; and — the
point of it all — runs every estimator side by side to expose where they
disagree, rather than crowning a single winner.
"""

from .analysis import (
    Condition,
    CurveTable,
    ExploreValidateReport,
    HypothesisResult,
    SubgroupDef,
    SubgroupTest,
    default_grid,
    explore_validate,
    marginal_cate,
    pdp,
    subgroup_ate,
    subgroup_difference_test,
)
from .ate import (
    AteEstimate,
    MatchedPairs,
    ate_aipw,
    ate_ipw,
    ate_matching,
    ate_regression,
    cluster_bootstrap_ci,
    match_pairs,
)
from .causal_forest import CausalForestSpec, CFCate, fit_causal_forest
from .config import RunConfig, parse_estimator_name
from .data import (
    Column,
    ColumnSchema,
    Dataset,
    EncodingPlan,
    SplitAssignment,
    cluster_split,
    effective_cluster_ids,
    encode,
    load_csv,
)
from .dgp import DGP_NAMES, DgpSpec, TruthHandle, generate, score
from .errors import CatesuiteError, ConfigError, EstimationError, ValidationError
from .learners import (
    ConstantModel,
    CrossFitPlan,
    FunctionModel,
    LearnerSpec,
    cross_fit_predict,
    fit_learner,
)
from .metalearners import (
    CateModel,
    MOCate,
    PseudoOutcome,
    RCate,
    SCate,
    TCate,
    XCate,
    fit_mo,
    fit_r,
    fit_s,
    fit_t,
    fit_x,
    modified_outcome_targets,
    residual_ratio_targets,
)
from .nuisance import (
    DEFAULT_CLIP,
    NuisanceModels,
    OverlapReport,
    fit_nuisance,
    nuisance_from_functions,
    overlap_report,
)
from .sensitivity import (
    DEFAULT_GAMMA_GRID,
    EXACT_MAX_PAIRS,
    SensitivityResult,
    gamma_star,
    sensitivity_bound,
)
from .stability import (
    EstimateMatrix,
    EstimatorDef,
    PolicyDecisions,
    StabilityReport,
    SuiteSpec,
    envelope_policy,
    run_suite,
    stability_report,
)

__version__ = "0.1.0"

__all__ = [
    "AteEstimate",
    "CFCate",
    "CateModel",
    "CatesuiteError",
    "CausalForestSpec",
    "Column",
    "ColumnSchema",
    "Condition",
    "ConfigError",
    "ConstantModel",
    "CrossFitPlan",
    "CurveTable",
    "DEFAULT_CLIP",
    "DEFAULT_GAMMA_GRID",
    "DGP_NAMES",
    "Dataset",
    "DgpSpec",
    "EXACT_MAX_PAIRS",
    "EncodingPlan",
    "EstimateMatrix",
    "EstimationError",
    "EstimatorDef",
    "ExploreValidateReport",
    "FunctionModel",
    "HypothesisResult",
    "LearnerSpec",
    "MOCate",
    "MatchedPairs",
    "NuisanceModels",
    "OverlapReport",
    "PolicyDecisions",
    "PseudoOutcome",
    "RCate",
    "RunConfig",
    "SCate",
    "SensitivityResult",
    "SplitAssignment",
    "StabilityReport",
    "SubgroupDef",
    "SubgroupTest",
    "SuiteSpec",
    "TCate",
    "TruthHandle",
    "ValidationError",
    "XCate",
    "ate_aipw",
    "ate_ipw",
    "ate_matching",
    "ate_regression",
    "cluster_bootstrap_ci",
    "cluster_split",
    "cross_fit_predict",
    "default_grid",
    "effective_cluster_ids",
    "encode",
    "envelope_policy",
    "explore_validate",
    "fit_causal_forest",
    "fit_learner",
    "fit_mo",
    "fit_nuisance",
    "fit_r",
    "fit_s",
    "fit_t",
    "fit_x",
    "gamma_star",
    "generate",
    "load_csv",
    "marginal_cate",
    "match_pairs",
    "modified_outcome_targets",
    "nuisance_from_functions",
    "overlap_report",
    "parse_estimator_name",
    "pdp",
    "residual_ratio_targets",
    "run_suite",
    "score",
    "sensitivity_bound",
    "stability_report",
    "subgroup_ate",
    "subgroup_difference_test",
]

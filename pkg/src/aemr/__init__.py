"""Almost-exact matching with replacement on categorical covariates.

Units are matched into groups that agree exactly on an adaptively
chosen subset of the covariates: each unit is matched on the
highest-value covariate set for which a unit of the opposite treatment
arm agrees with it, where value is either a fixed weighted count of
covariates or a holdout-based quality score. Matched groups then yield
per-unit treatment-effect estimates.

Typical use::

    from aemr import Dataset, EngineConfig, run, estimate_cates

    result = run(data, EngineConfig(weights=w))
    records = estimate_cates(data, result)
"""

from .core import (
    ConfigError,
    CovariateSet,
    CovariateSpec,
    Dataset,
    DatasetValidationError,
    MatchingError,
    SizeCapError,
    indicator_of,
    set_weight,
    validate_dataset,
)
from .bitgroup import (
    MatchedGroup,
    MatchState,
    encode_units,
    group_by,
    grouped_mr,
    prune,
)
from .lattice import LatticeState, generate_new_active_sets
from .holdout import (
    balancing_factor,
    fit_least_squares,
    match_quality,
    permutation_importance,
    prediction_error,
    weights_from_importance,
)
from .engine import (
    EngineConfig,
    IterationRecord,
    MatchResult,
    run,
    run_elimination_baseline,
)
from .estimate import CateRecord, ate, estimate_cates, group_cate
from .oracle import (
    brute_enumerate,
    brute_pairwise,
    check_engine_against_oracles,
)
from .synthgen import (
    ScenarioResult,
    exp_decay_scenario,
    imbalance_scenario,
    irrelevant_scenario,
    missing_scenario,
    noise_scenario,
    random_categorical_instance,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CovariateSet",
    "CovariateSpec",
    "Dataset",
    "DatasetValidationError",
    "MatchingError",
    "SizeCapError",
    "indicator_of",
    "set_weight",
    "validate_dataset",
    "MatchedGroup",
    "MatchState",
    "encode_units",
    "group_by",
    "grouped_mr",
    "prune",
    "LatticeState",
    "generate_new_active_sets",
    "balancing_factor",
    "fit_least_squares",
    "match_quality",
    "permutation_importance",
    "prediction_error",
    "weights_from_importance",
    "EngineConfig",
    "IterationRecord",
    "MatchResult",
    "run",
    "run_elimination_baseline",
    "CateRecord",
    "ate",
    "estimate_cates",
    "group_cate",
    "brute_enumerate",
    "brute_pairwise",
    "check_engine_against_oracles",
    "ScenarioResult",
    "exp_decay_scenario",
    "imbalance_scenario",
    "irrelevant_scenario",
    "missing_scenario",
    "noise_scenario",
    "random_categorical_instance",
    "__version__",
]

"""Turn offline approximation algorithms into consistent online learners by
re-solving on a low-sensitivity coreset of the points seen so far."""
from .core import (
    Dataset,
    EmptyStreamError,
    LossModel,
    RegretLedger,
    SolverError,
    Stream,
    brute_force_opt,
    epsilon_regret,
    fixed_order,
    inconsistency,
    params_close,
    params_equal,
    random_order,
    run_online,
)
from .coreset import (
    DegenerateProfileError,
    DiscreteDistribution,
    DrawCoupler,
    SensitivityProfile,
    WeightedCoreset,
    coreset_loss,
    estimate_average_sensitivity,
    selection_distribution,
    sensitivity_sample,
    tv_distance,
    uniform_interval_tv,
)
from .clustering import (
    CenterSet,
    clustering_opt,
    dz_sampling,
    kz_loss,
    online_clustering,
    two_stage_coreset,
    weighted_kz_solve,
)
from .lowrank import (
    ColumnSketch,
    Projector,
    lowrank_opt,
    online_lowrank,
    pcp_sample,
    projection_loss,
    ridge_leverage_scores,
    top_k_left_singular,
)
from .regression import (
    RowMatrix,
    RowSketch,
    leverage_scores,
    online_regression,
    regression_loss,
    regression_opt,
    sketch_rows,
    sketched_solve,
)
from .rng import substream

__version__ = "0.1.0"

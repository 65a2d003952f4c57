"""Population-size estimation for partially observed street-vendor surveys."""

from .core import (
    DEFAULT_CAPS,
    UNKNOWN,
    VETERAN_ADDON,
    CountTable,
    Estimate,
    EstimationError,
    Partition,
    SurveyRecord,
    ValidationError,
    aggregate,
    subregion_counts,
)
from .estimators import (
    RatioInputs,
    combine,
    p_hat,
    poisson_prediction_interval,
    q_hat,
    ratio_lambda0,
    subregion_lambda0,
    subtotal_tau,
    total_tau,
)
from .overdispersed import MarketModel, od_se_ratio, od_se_subregion, od_se_subtotal, u0_hat, u1
from .report import AreaLayout, PopulationReport, build_report
from .weighted import (
    WeightModel,
    bias_factor,
    weighted_counts,
    weighted_ratio,
    weighted_subregion,
    weighted_subtotal,
)

__version__ = "0.1.0"

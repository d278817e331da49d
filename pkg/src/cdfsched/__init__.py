"""CDF-based downlink scheduling: channel models, schedulers, analysis and simulation."""

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    GainReport,
    csfr_bounds,
    feedback_overhead,
    gains,
    mean_rate,
    s_cs,
    s_csfr,
    s_lb,
    s_nakagami_closed,
    s_rrs,
    s_ub,
    s_universal,
)
from .fading import ChannelModel, RateFunction  # noqa: E402
from .fairness import FairnessReport, d_cs, d_ub, fairness_from_metrics, i_d_cs, qfi  # noqa: E402
from .montecarlo import MetricsReport, SimConfig, run  # noqa: E402
from .sched import (  # noqa: E402
    OffsetVector,
    UserSpec,
    access_ratios,
    calibrate_offsets,
    cs_select,
    csfr_step,
    csfr_threshold,
)

__all__ = [
    "ChannelModel",
    "RateFunction",
    "UserSpec",
    "OffsetVector",
    "access_ratios",
    "cs_select",
    "csfr_step",
    "csfr_threshold",
    "calibrate_offsets",
    "s_universal",
    "s_cs",
    "s_rrs",
    "s_ub",
    "s_lb",
    "s_csfr",
    "s_nakagami_closed",
    "mean_rate",
    "gains",
    "GainReport",
    "csfr_bounds",
    "feedback_overhead",
    "d_ub",
    "d_cs",
    "i_d_cs",
    "qfi",
    "FairnessReport",
    "fairness_from_metrics",
    "SimConfig",
    "MetricsReport",
    "run",
]

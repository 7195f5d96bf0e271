"""Student's t filtering and multi-sensor density fusion."""

from .densities import (
    Gaussian,
    StudentT,
    WeightedTMix,
    gaussian_kl,
    gaussian_logpdf,
    mix_moments,
    t_kl_mc,
    t_logpdf,
    t_moments,
    t_sample,
)
from .filtering import (
    MeasurementModel,
    ProcessModel,
    kf_predict,
    kf_update,
    stkf_predict,
    stkf_update,
)
from .fusion import (
    AAVariant,
    DofRule,
    FusionKind,
    FusionMethod,
    aa_fuse,
    aa_moment_match,
    aa_weights,
    am_outlier_prob,
    am_stack,
    ci_fuse,
    ci_weights,
    fuse,
)
from .network import FilterKind, FusionConfig, SensorGraph, SensorNode, run_sequence, step
from .scenario import (
    Method,
    OutlierNoiseSpec,
    RunReport,
    ScenarioConfig,
    SensorSpec,
    generate_measurements,
    generate_truth,
    method_from_name,
    rmse,
    run_experiment,
    run_sweep,
)

__all__ = [name for name in dir() if not name.startswith("_")]

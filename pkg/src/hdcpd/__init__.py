"""Change-point detection for high-dimensional piecewise-constant regression."""
from .core import (ChangePointSet, Dataset, IntegerInterval, Partition, ValidationError,
                   changepoints_to_partition, partition_to_changepoints)
from .dp import DpConfig, LossCache, build_loss_table, detect, dp_partition, run_dp, segment_loss
from .lasso import LassoConfig, LassoFit, fit_lasso, kkt_residual, penalty_scale
from .refine import RefineConfig, group_two_segment_solve, local_refine, shrink_interval
from .simulate import (SimulationConfig, binseg_baseline, generate_simulation,
                       hausdorff_scaled, run_benchmark)
from .tuning import (TuningGrid, cross_validate_dp, cross_validate_refined, tuned_dp,
                     tuned_dp_lr)

__version__ = "0.1.0"

__all__ = [
    "ChangePointSet", "Dataset", "IntegerInterval", "Partition", "ValidationError",
    "changepoints_to_partition", "partition_to_changepoints",
    "DpConfig", "LossCache", "build_loss_table", "detect", "dp_partition", "run_dp",
    "segment_loss", "LassoConfig", "LassoFit", "fit_lasso", "kkt_residual", "penalty_scale",
    "RefineConfig", "group_two_segment_solve", "local_refine", "shrink_interval",
    "SimulationConfig", "binseg_baseline", "generate_simulation", "hausdorff_scaled",
    "run_benchmark", "TuningGrid", "cross_validate_dp", "cross_validate_refined",
    "tuned_dp", "tuned_dp_lr",
]

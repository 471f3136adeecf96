"""Neural energy disaggregation toolkit.

An attention-based regression network gated by an on/off classification
network, trained per appliance on sliding windows of the aggregate signal,
with a self-contained differentiable core, synthetic-household generation,
median-filter reconstruction, and the standard disaggregation metrics.
"""

from .data import (
    ApplianceSpec,
    NormalizationMeta,
    PowerSeries,
    WindowSet,
    load_channel_csv,
    make_state_sequence,
    sliding_windows,
    split_train_val,
    synth_household,
    write_channel_csv,
)
from .errors import DataError, NumericalError, ShapeError
from .evaluation import (
    EvalReport,
    classification_scores,
    disaggregate,
    evaluate,
    mae,
    reconstruct_median,
    sae,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .model import ClassificationConfig, GatedAttentionModel, RegressionConfig
from .training import TrainConfig, TrainRecord, grid_search, train

__version__ = "0.1.0"

__all__ = [
    "ApplianceSpec",
    "ClassificationConfig",
    "DataError",
    "EvalReport",
    "GatedAttentionModel",
    "NormalizationMeta",
    "NumericalError",
    "PowerSeries",
    "RegressionConfig",
    "ShapeError",
    "TrainConfig",
    "TrainRecord",
    "WindowSet",
    "classification_scores",
    "disaggregate",
    "evaluate",
    "grid_search",
    "load_channel_csv",
    "load_checkpoint",
    "mae",
    "make_state_sequence",
    "reconstruct_median",
    "sae",
    "save_checkpoint",
    "sliding_windows",
    "split_train_val",
    "synth_household",
    "train",
    "write_channel_csv",
]

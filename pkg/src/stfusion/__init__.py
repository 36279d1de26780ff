"""Traffic forecasting toolkit: band-limited DTW similarity graphs fused
with spatial and step-connectivity links, driving a gated graph network."""

__version__ = "0.1.0"

from .data import (
    DatasetBundle,
    Normalizer,
    SampleSet,
    SignalTensor,
    SplitSpec,
    load_signal,
    make_samples,
    prepare_dataset,
    save_signal,
    synth_traffic,
)
from .evaluation import EvalReport, evaluate, mae, mape, rmse
from .graphs import (
    FusionLayout,
    SparsityTarget,
    fusion_graph,
    load_spatial_graph,
    sparsity,
    temporal_graph,
)
from .model import ModelConfig, huber_loss, load_checkpoint, model_forward, save_checkpoint
from .similarity import BandSpec, dtw_distance, dtw_path, pairwise_distances
from .training import TrainConfig, adam_step, gradient_check, gradients, init_params, train

__all__ = [
    "BandSpec",
    "DatasetBundle",
    "EvalReport",
    "FusionLayout",
    "ModelConfig",
    "Normalizer",
    "SampleSet",
    "SignalTensor",
    "SparsityTarget",
    "SplitSpec",
    "TrainConfig",
    "adam_step",
    "dtw_distance",
    "dtw_path",
    "evaluate",
    "fusion_graph",
    "gradient_check",
    "gradients",
    "huber_loss",
    "init_params",
    "load_checkpoint",
    "load_signal",
    "load_spatial_graph",
    "mae",
    "make_samples",
    "mape",
    "model_forward",
    "pairwise_distances",
    "prepare_dataset",
    "rmse",
    "save_checkpoint",
    "save_signal",
    "sparsity",
    "synth_traffic",
    "temporal_graph",
    "train",
]

""" Autoencoders with a mixing consistency loss for deep clustering, implemented on top of numpy. """

from ._analysis import (
    InterpolationGrid,
    PcaProfile,
    class_pca_profile,
    first_component_share,
    interpolation_grid,
    mixing_side_score,
    project_2d,
)
from ._checkpoint import load_checkpoint, save_checkpoint
from ._cluster import (
    ClusterMetrics,
    ClusterResult,
    PcaBasis,
    cluster_latents,
    evaluate_clustering,
    hungarian_accuracy,
    kmeans,
    lloyd,
    nmi,
    pca_fit,
    pca_whiten,
)
from ._config import EvalConfig, RunConfig, load_config, parse_config, resolve_config
from ._data import (
    DataConfig,
    LabeledDataset,
    bilinear_resize,
    load_dataset,
    load_idx,
    save_idx,
    subset_by_classes,
    synthetic_blobs,
)
from ._errors import (
    ConfigError,
    ConsistencyError,
    FormatError,
    InvalidArgumentError,
    McdcError,
    ShapeError,
    SpecError,
    StateError,
)
from ._model import ArchitectureSpec, Family, ModelParams, build_model, decode, discriminate, encode
from ._nn import AdamState, LayerKind, LayerParams, Precision, adam_step, he_init_std, mse_loss
from ._train import (
    AlphaRule,
    LossBreakdown,
    TrainConfig,
    TrainState,
    Variant,
    compute_step,
    mix_latents,
    mixing_target,
    train,
    train_step,
)
from ._util import make_rng, split_rng

__version__ = "0.1.0"

__all__ = [
    "InterpolationGrid",
    "PcaProfile",
    "class_pca_profile",
    "first_component_share",
    "interpolation_grid",
    "mixing_side_score",
    "project_2d",
    "load_checkpoint",
    "save_checkpoint",
    "ClusterMetrics",
    "ClusterResult",
    "PcaBasis",
    "cluster_latents",
    "evaluate_clustering",
    "hungarian_accuracy",
    "kmeans",
    "lloyd",
    "nmi",
    "pca_fit",
    "pca_whiten",
    "EvalConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "resolve_config",
    "DataConfig",
    "LabeledDataset",
    "bilinear_resize",
    "load_dataset",
    "load_idx",
    "save_idx",
    "subset_by_classes",
    "synthetic_blobs",
    "ConfigError",
    "ConsistencyError",
    "FormatError",
    "InvalidArgumentError",
    "McdcError",
    "ShapeError",
    "SpecError",
    "StateError",
    "ArchitectureSpec",
    "Family",
    "ModelParams",
    "build_model",
    "decode",
    "discriminate",
    "encode",
    "AdamState",
    "LayerKind",
    "LayerParams",
    "Precision",
    "adam_step",
    "he_init_std",
    "mse_loss",
    "AlphaRule",
    "LossBreakdown",
    "TrainConfig",
    "TrainState",
    "Variant",
    "compute_step",
    "mix_latents",
    "mixing_target",
    "train",
    "train_step",
    "make_rng",
    "split_rng",
]

"""transinv: train small CNNs on centered vs. translation-augmented 40x40
digit images and measure how sensitive their outputs are to translation."""

__version__ = "0.1.0"

from .tensor import Tensor4, dot
from .nn import (NetworkSpec, Model, NonFiniteError, parse_arch,
                 conv2d_forward, conv2d_backward,
                 maxpool_forward, maxpool_backward, relu_forward, relu_backward,
                 fc_forward, fc_backward, softmax, softmax_xent,
                 save_model, load_model)
from .optim import (TrainConfig, TrainResult, TrainingDiverged, AdamState,
                    adam_step, train, evaluate, select_hyperparams)
from .data import (load_idx, embed_center, translate, build_bundles, load_bundle,
                   DatasetBundle, augmentation_plan, sample_offsets)
from .invariance import (Normalizer, SensitivityMap, RadialProfile,
                         median_interclass_distance, score_distance,
                         sensitivity_map, average_maps, radial_profile,
                         profile_summary, compare_profiles,
                         ScaledScores, SoftmaxScores)
from .render import (HeatmapStyle, render_heatmap, render_profiles,
                     write_pgm, read_pgm, write_png_gray)

__all__ = [
    "Tensor4", "dot",
    "NetworkSpec", "Model", "NonFiniteError", "parse_arch",
    "conv2d_forward", "conv2d_backward",
    "maxpool_forward", "maxpool_backward", "relu_forward", "relu_backward",
    "fc_forward", "fc_backward", "softmax", "softmax_xent",
    "save_model", "load_model",
    "TrainConfig", "TrainResult", "TrainingDiverged", "AdamState",
    "adam_step", "train", "evaluate", "select_hyperparams",
    "load_idx", "embed_center", "translate", "build_bundles", "load_bundle",
    "DatasetBundle", "augmentation_plan", "sample_offsets",
    "Normalizer", "SensitivityMap", "RadialProfile",
    "median_interclass_distance", "score_distance", "sensitivity_map",
    "average_maps", "radial_profile", "profile_summary", "compare_profiles",
    "ScaledScores", "SoftmaxScores",
    "HeatmapStyle", "render_heatmap", "render_profiles",
    "write_pgm", "read_pgm", "write_png_gray",
]

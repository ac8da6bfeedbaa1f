"""Fast depth completion for transparent objects from RGB-D input."""

from .core import (
    ConfigError,
    DepthMap,
    RgbImage,
    Sample,
    ShapeError,
    TransparentMask,
    ValidRange,
    normalize_depth,
    normals_from_depth,
    valid_pixels,
)
from .data import (
    BatchIterator,
    DatasetError,
    DatasetIndex,
    SynthSceneSpec,
    generate_dataset,
    generate_scene,
    get_sample,
    load_dataset,
)
from .losses import LossBundle, LossConfig, edge_weight_map, huber_loss, smooth_loss, ssim, total_loss
from .metrics import MetricsReport, PixelStats, aggregate, compute_metrics, pixel_stats
from .model import (
    FdctConfig,
    FdctNetwork,
    complete_depth,
    count_parameters,
    parameter_breakdown,
)
from .train import (
    Checkpoint,
    TrainConfig,
    evaluate,
    fit,
    load_checkpoint,
    lr_at,
    restore_network,
    run_ablation,
    save_checkpoint,
    train_step,
)

__version__ = "0.1.0"

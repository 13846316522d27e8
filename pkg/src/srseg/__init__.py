"""Joint super-resolution and semantic segmentation on degraded imagery.

A back-projection reconstruction network and an encoder-decoder labeling
network trained under one loss, with the degradation pipeline, metrics,
training harness and CLI needed to run the whole protocol at desk scale.
"""

__version__ = "0.1.0"

from .data import (DatasetManifest, DegradationSpec, RasterSample,
                   load_dataset, synth_generate, tile_image)
from .estimator import SuperResSegmenter
from .metrics import (ConfusionAccumulator, MetricsReport, accumulate_confusion,
                      compute_metrics, psnr)
from .resample import bicubic_downsample, bicubic_upsample
from .seg import (SegConfig, SegNet, cross_entropy, max_pool_with_indices,
                  max_unpool, seg_forward)
from .sr import (BackProjectionNet, DownProjection, SRConfig, UpProjection,
                 l1_loss, sr_forward)
from .training import (LossWeights, TrainConfig, evaluate, joint_loss,
                       lr_at_epoch, run_experiment, train_step)
from .validation import IGNORE_ID

__all__ = [
    "BackProjectionNet", "ConfusionAccumulator", "DatasetManifest",
    "DegradationSpec", "DownProjection", "IGNORE_ID", "LossWeights",
    "MetricsReport", "RasterSample", "SRConfig", "SegConfig", "SegNet",
    "SuperResSegmenter", "TrainConfig", "UpProjection",
    "accumulate_confusion", "bicubic_downsample", "bicubic_upsample",
    "compute_metrics", "cross_entropy", "evaluate", "joint_loss", "l1_loss",
    "load_dataset", "lr_at_epoch", "max_pool_with_indices", "max_unpool",
    "psnr", "run_experiment", "seg_forward", "sr_forward", "synth_generate",
    "tile_image", "train_step",
]

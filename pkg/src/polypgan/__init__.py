"""Lightweight adversarially trained network for binary polyp segmentation."""

from .blocks import ConvBNReLU, InvertedResidual, ReSEBlock, SqueezeExcite, count_parameters
from .data import (
    AugmentConfig,
    DataError,
    ImageSample,
    SyntheticSpec,
    augment_sample,
    generate_synthetic,
    load_and_preprocess,
    load_dataset,
    sample_rng,
    scan_dataset,
    write_dataset,
)
from .discriminator import DiscriminatorConfig, PatchDiscriminator
from .generator import Generator, GeneratorConfig
from .losses import (
    LOSS_COMBOS,
    LossConfig,
    adversarial_generator_term,
    bce_loss,
    dice_loss,
    discriminator_loss,
    generator_seg_loss,
    plain_iou_loss,
    weighted_iou_loss,
)
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    binarize,
    compute_metrics,
    confusion_counts,
    evaluate_dataset,
)
from .config import ConfigError, default_config, resolve_config, to_train_config
from .training import (
    CheckpointError,
    TrainConfig,
    TrainLog,
    build_models,
    load_checkpoint,
    make_predict_fn,
    models_from_checkpoint,
    save_checkpoint,
    train,
    train_discriminator_step,
    train_generator_step,
)

__version__ = "0.1.0"

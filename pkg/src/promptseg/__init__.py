"""Adapter-based visual prompt tuning for a frozen ViT segmentation backbone."""

from .adapter import AdapterConfig, AdapterStack, adapter_forward, init_adapters, trainable_parameters
from .backbone import (
    Decoder,
    DecoderConfig,
    Encoder,
    EncoderConfig,
    PRESETS,
    decode,
    encode,
    get_preset,
    init_decoder,
    init_encoder,
    parameter_checksum,
)
from .errors import ConfigError, NonFiniteLossError, ValidationError, WeightLoadError
from .model import AdaptedSegmenter, build_model
from .objectives import LossConfig, balanced_bce_loss, bce_loss, iou_loss, task_loss
from .prompts import (
    FrequencyMaskSpec,
    HfcEmbedder,
    compose_prompts,
    extract_hfc,
    extract_patch_embedding,
    hfc_residual,
    high_freq_components,
)
from .trainer import TrainConfig, cosine_lr, fit, train_step

__version__ = "0.1.0"

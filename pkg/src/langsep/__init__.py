"""Language-guided two-layer reflection separation.

Synthetic captioned mixtures, a gated cross-modal separation network,
correspondence and image losses, training with randomized description
dropout, and PSNR/SSIM evaluation.
"""

from .synthdata import (
    MixtureSample,
    SourcePair,
    blend,
    build_dataset,
    gamma_correct,
    inverse_gamma,
    load_png,
    load_source_pairs,
    quantize,
    read_manifest,
    recognizable,
    save_png,
    synthesize_sample,
)
from .toydata import make_toy_sources
from .textenc import TextEncoder, Vocab, encode_batch, tokenize
from .imgenc import ImageEncoder, LeFF
from .interact import AGAM, AGIM, InteractionStage, language_gate
from .decoder import LayerDecoder
from .model import ModelConfig, SeparationModel, separate_image
from .losses import (
    LossReport,
    LossWeights,
    batch_correspondence,
    contrastive_correspondence,
    exclusion_loss,
    image_layer_loss,
    layer_correspondence,
    similarity,
    ssim_index,
    total_loss,
)
from .trainer import (
    TrainConfig,
    desk_config,
    drop_descriptions,
    fit,
    load_checkpoint,
    restore_model,
    train_step,
)
from .evalkit import MetricRow, ablation_grid, evaluate, psnr, ssim

__version__ = "0.1.0"

__all__ = [
    "MixtureSample", "SourcePair", "blend", "build_dataset", "gamma_correct",
    "inverse_gamma", "load_png", "load_source_pairs", "quantize",
    "read_manifest", "recognizable", "save_png", "synthesize_sample",
    "make_toy_sources",
    "TextEncoder", "Vocab", "encode_batch", "tokenize",
    "ImageEncoder", "LeFF",
    "AGAM", "AGIM", "InteractionStage", "language_gate",
    "LayerDecoder",
    "ModelConfig", "SeparationModel", "separate_image",
    "LossReport", "LossWeights", "batch_correspondence",
    "contrastive_correspondence", "exclusion_loss", "image_layer_loss",
    "layer_correspondence", "similarity", "ssim_index", "total_loss",
    "TrainConfig", "desk_config", "drop_descriptions", "fit",
    "load_checkpoint", "restore_model", "train_step",
    "MetricRow", "ablation_grid", "evaluate", "psnr", "ssim",
    "__version__",
]

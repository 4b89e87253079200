"""Keypoint-conditioned GAN: latent keypoints with attached appearance
embeddings, editable scenes, SPADE synthesis, metrics, and serving."""

from .latents import (
    DEFAULT_TAU_RANGE,
    EditState,
    EmbeddingBank,
    EmbeddingNetwork,
    KeypointLayout,
    LatentDims,
    LayoutNetwork,
    NoiseBundle,
    Provenance,
    compose_state,
    derive_seed,
    sample_noise,
    sample_noise_batch,
)
from .heatmaps import (
    HeatmapStack,
    SpatialStyleMap,
    compose_style_map,
    render_heatmaps,
    render_pyramid,
    render_style_map,
)
from .generator import Generator, GeneratorConfig, SpadeNorm, SpadeResBlock, generator_forward
from .discriminator import DiscConfig, Discriminator
from .model import KeypointGAN, ModelConfig
from .checkpoint import (
    CheckpointBundle,
    CheckpointError,
    checkpoint_hash,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
)
from .training import TrainConfig, TrainingError, gan_losses, r1_penalty, train_loop, train_step

__version__ = "0.1.0"

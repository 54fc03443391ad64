"""Text-guided instance-level image colorization.

Pipeline: detect object instances, colorize each crop with its caption
embedding gating a UNet bottleneck, paste the results back by detection
confidence, then refine the whole scene with a fusion generator conditioned
on the scene caption. Training uses L1 + perceptual + histogram-KL
colorfulness + patch-GAN + classification objectives.
"""

from .colorspace import LabImage, RGBImage, lab_to_rgb, rgb_to_lab, split_gray_color
from .dataset import (
    InstanceRecord,
    SceneSample,
    generate_synthetic_scene,
    load_manifest,
    make_training_pair,
    save_manifest,
)
from .adapters import (
    AdapterUnavailable,
    DetectionResult,
    TextEmbedding,
    detect_instances_stub,
    encode_text_stub,
)
from .ioc import InstanceColorizer, IOCOutput, TextProjection
from .fusion import FusionColorizer, FusionOutput
from .discriminator import PatchDiscriminator
from .merge import ColoredInstance, MergedImage, merge_instances
from .losses import (
    LossReport,
    SoftHistogram,
    bce,
    classification_loss,
    colorfulness_loss,
    gan_discriminator_loss,
    gan_generator_loss,
    l1_loss,
    perceptual_loss,
    soft_histogram,
    total_fusion_loss,
    total_ioc_loss,
)
from .training import TrainConfig, train, train_step
from .evaluation import MetricRow, channel_histogram_report, evaluate, lpips, psnr, ssim
from .pipeline import ColorizePipeline

__version__ = "0.1.0"

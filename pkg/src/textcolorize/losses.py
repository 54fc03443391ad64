"""Training objectives: pixel L1, perceptual, colorfulness, GAN and class terms.

The colorfulness loss is the novel piece: both chroma predictions and targets
are converted (differentiably) to sRGB, soft histograms are built per channel,
and the per-channel KL divergence of the target histogram against the
generated one is summed. The soft histogram uses a triangular kernel so that
gradients flow into pixel values; histograms are epsilon-smoothed before the
log so empty bins cannot blow up.

All functions here take torch tensors and stay differentiable end to end.
Instance and fusion stages share the same terms; only the class-entropy term
is instance-stage specific.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .colorspace import lab_to_srgb_t

IOC_LAMBDAS = (10.0, 1.0, 1.0, 1.0, 1.0)  # l1, perceptual, colorfulness, gan, class
FUSION_LAMBDAS = (10.0, 1.0, 1.0, 1.0)

HIST_BINS = 64
HIST_EPS = 1e-6
BCE_EPS = 1e-7


@dataclass
class SoftHistogram:
    bins: torch.Tensor  # (K,), nonnegative, sums to 1
    bin_count: int
    value_range: tuple[float, float] = (0.0, 1.0)
    clamped_count: int = 0


@dataclass
class LossReport:
    """Per-term values and the weighted total for one step."""

    l1: float
    perceptual: float
    colorfulness: float
    gan_g: float
    class_ce: float | None  # None for the fusion stage
    total: float
    lambdas: tuple[float, ...] = IOC_LAMBDAS

    def __post_init__(self):
        parts = [self.l1, self.perceptual, self.colorfulness, self.gan_g]
        if self.class_ce is not None:
            parts.append(self.class_ce)
        expected = sum(lam * p for lam, p in zip(self.lambdas, parts))
        if abs(expected - self.total) > 1e-6:
            raise ValueError(
                f"total {self.total} inconsistent with weighted terms {expected}"
            )


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    _check_same_shape(pred, target)
    return (pred - target).abs().mean()


class StubFeatureExtractor(nn.Module):
    """Fixed-seed random conv stack standing in for a pretrained feature net.

    Four stride-2 stages; ``tap`` selects which stage's activations are the
    "features" (mirrors picking a layer of a deep pretrained network by name).
    Weights are frozen and identical across processes.
    """

    STAGE_CHANNELS = (8, 16, 16, 16)

    def __init__(self, seed: int = 1234, tap: str = "stage3"):
        super().__init__()
        taps = {f"stage{i + 1}": i for i in range(len(self.STAGE_CHANNELS))}
        if tap not in taps:
            raise ValueError(f"unknown tap point {tap!r}; choose from {sorted(taps)}")
        self.tap_index = taps[tap]
        self.tap = tap
        gen = torch.Generator().manual_seed(seed)
        layers = []
        prev = 3
        for c in self.STAGE_CHANNELS:
            conv = nn.Conv2d(prev, c, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.normal_(0.0, (2.0 / (prev * 9)) ** 0.5, generator=gen)
                conv.bias.zero_()
            layers.append(conv)
            prev = c
        self.convs = nn.ModuleList(layers)
        self.relu = nn.ReLU(inplace=False)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        x = rgb
        for i, conv in enumerate(self.convs):
            x = self.relu(conv(x))
            if i == self.tap_index:
                return x
        return x


class ExternalVGGFeatures(nn.Module):
    """Pretrained VGG19 tap, used only when torchvision weights are reachable."""

    def __init__(self, layer_index: int = 9):
        super().__init__()
        from .adapters import AdapterUnavailable

        try:
            from torchvision.models import VGG19_Weights, vgg19

            net = vgg19(weights=VGG19_Weights.IMAGENET1K_V1)
        except Exception as e:  # missing package or weights not downloadable
            raise AdapterUnavailable(f"pretrained VGG19 unavailable: {e}") from e
        self.features = net.features[: layer_index + 1].eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        return self.features(rgb)


def perceptual_loss(pred_rgb: torch.Tensor, target_rgb: torch.Tensor, feat) -> torch.Tensor:
    """Mean absolute difference between feature maps of the two images."""
    _check_same_shape(pred_rgb, target_rgb)
    return (feat(pred_rgb) - feat(target_rgb)).abs().mean()


def _soft_hist_raw(values: torch.Tensor, bins: int) -> tuple[torch.Tensor, int]:
    """Triangular-kernel soft binning of values in [0,1]; returns (hist, n_clamped)."""
    flat = values.reshape(-1)
    n_clamped = int(((flat < 0.0) | (flat > 1.0)).sum())
    flat = torch.clamp(flat, 0.0, 1.0)
    # bin centers at (k + 0.5) / K: each value splits linearly between the
    # two nearest centers; values beyond the first/last center go entirely
    # to the edge bin.
    pos = torch.clamp(flat * bins - 0.5, 0.0, float(bins - 1))
    k0 = torch.floor(pos.detach()).long().clamp(0, bins - 1)
    frac = pos - k0.to(pos.dtype)
    hist = torch.zeros(bins, dtype=values.dtype, device=values.device)
    hist = hist.scatter_add(0, k0, 1.0 - frac)
    hist = hist.scatter_add(0, torch.clamp(k0 + 1, max=bins - 1), frac)
    return hist / flat.numel(), n_clamped


def soft_histogram(values: torch.Tensor, bins: int = HIST_BINS) -> SoftHistogram:
    """Differentiable normalized histogram of values in [0,1]."""
    if values.numel() == 0:
        raise ValueError("cannot histogram an empty tensor")
    hist, n_clamped = _soft_hist_raw(values, bins)
    return SoftHistogram(bins=hist, bin_count=bins, clamped_count=n_clamped)


def _smooth(hist: torch.Tensor, eps: float = HIST_EPS) -> torch.Tensor:
    h = hist + eps
    return h / h.sum()

def kl_divergence(p: torch.Tensor, q: torch.Tensor, eps: float = HIST_EPS) -> torch.Tensor:
    """KL(p || q) over epsilon-smoothed histograms."""
    ps, qs = _smooth(p, eps), _smooth(q, eps)
    return (ps * (ps / qs).log()).sum()


def colorfulness_loss(
    pred_lab_n: torch.Tensor, target_lab_n: torch.Tensor, bins: int = HIST_BINS
) -> torch.Tensor:
    """Sum over RGB channels of KL(target histogram || generated histogram).

    Inputs are normalized Lab stacks (..., 3, H, W); both are converted to
    sRGB first so the histograms live in display space. Histograms are per
    image; batched inputs return the batch mean of the per-image losses.
    """
    _check_same_shape(pred_lab_n, target_lab_n)
    if pred_lab_n.shape[-3] != 3:
        raise ValueError(f"expected (...,3,H,W) Lab stack, got {tuple(pred_lab_n.shape)}")
    pred_rgb = lab_to_srgb_t(pred_lab_n).reshape(-1, 3, *pred_lab_n.shape[-2:])
    target_rgb = lab_to_srgb_t(target_lab_n).reshape(-1, 3, *target_lab_n.shape[-2:])
    total = pred_lab_n.new_zeros(())
    batch = pred_rgb.shape[0]
    for b in range(batch):
        for c in range(3):
            h_pred, _ = _soft_hist_raw(pred_rgb[b, c], bins)
            h_target, _ = _soft_hist_raw(target_rgb[b, c], bins)
            total = total + kl_divergence(h_target, h_pred)
    return total / batch


def bce(p: torch.Tensor | float, y: torch.Tensor | float) -> torch.Tensor:
    """Binary cross-entropy -(y log p + (1-y) log(1-p)) with probability clamping."""
    if not torch.is_tensor(p):
        p = torch.tensor(p, dtype=torch.float64)
    y = torch.as_tensor(y, dtype=p.dtype, device=p.device)
    p = torch.clamp(p, BCE_EPS, 1.0 - BCE_EPS)
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))


def gan_generator_loss(disc, L_n: torch.Tensor, ab_fake: torch.Tensor) -> torch.Tensor:
    """Mean patch BCE of the discriminator's fake-stack output against label 1."""
    logits = disc(L_n, ab_fake)
    return bce(torch.sigmoid(logits), 1.0).mean()


def gan_discriminator_loss(
    disc, L_n: torch.Tensor, ab_real: torch.Tensor, ab_fake: torch.Tensor
) -> torch.Tensor:
    """Real stack scored against 1 plus detached fake stack against 0."""
    real_term = bce(torch.sigmoid(disc(L_n, ab_real)), 1.0).mean()
    fake_term = bce(torch.sigmoid(disc(L_n, ab_fake.detach())), 0.0).mean()
    return real_term + fake_term


def classification_loss(class_logits: torch.Tensor, class_id) -> torch.Tensor:
    """Categorical cross-entropy: -log softmax(logits)[class_id], batch-averaged."""
    if class_logits.dim() == 1:
        class_logits = class_logits.unsqueeze(0)
    n_classes = class_logits.shape[-1]
    target = torch.as_tensor(class_id, device=class_logits.device).reshape(-1)
    if target.min() < 0 or target.max() >= n_classes:
        raise ValueError(f"class_id {class_id} outside [0, {n_classes})")
    log_probs = torch.log_softmax(class_logits, dim=-1)
    return -log_probs[torch.arange(target.numel()), target].mean()


def weighted_total(parts, lambdas):
    if len(parts) != len(lambdas):
        raise ValueError(f"{len(parts)} terms but {len(lambdas)} weights")
    total = None
    for lam, p in zip(lambdas, parts):
        term = lam * p
        total = term if total is None else total + term
    return total


def total_ioc_loss(
    l1: float,
    perceptual: float,
    colorfulness: float,
    gan_g: float,
    class_ce: float,
    lambdas: tuple[float, ...] = IOC_LAMBDAS,
) -> LossReport:
    """Weighted five-term report for the instance stage."""
    parts = (float(l1), float(perceptual), float(colorfulness), float(gan_g), float(class_ce))
    total = float(weighted_total(parts, lambdas))
    return LossReport(*parts, total=total, lambdas=tuple(lambdas))


def total_fusion_loss(
    l1: float,
    perceptual: float,
    colorfulness: float,
    gan_g: float,
    lambdas: tuple[float, ...] = FUSION_LAMBDAS,
) -> LossReport:
    """Weighted four-term report for the fusion stage (no class term)."""
    parts = (float(l1), float(perceptual), float(colorfulness), float(gan_g))
    total = float(weighted_total(parts, lambdas))
    return LossReport(
        l1=parts[0],
        perceptual=parts[1],
        colorfulness=parts[2],
        gan_g=parts[3],
        class_ce=None,
        total=total,
        lambdas=tuple(lambdas),
    )

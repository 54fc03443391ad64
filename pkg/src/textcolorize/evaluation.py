"""Image quality metrics and the dataset-level evaluation harness.

PSNR is computed on [0,1] RGB and capped at 100 dB for (near-)identical
images so tables stay finite. SSIM follows the standard windowed formula:
11x11 Gaussian window with sigma 1.5, C1=(0.01)^2 and C2=(0.03)^2 on the
[0,1] range, averaged over channels. Perceptual distance is pluggable: a
deterministic stub (fixed-seed conv features, unit-normalized per layer,
squared differences pooled) or an external pretrained backend.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .colorspace import RGBImage
from .losses import kl_divergence

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _pixels(img) -> np.ndarray:
    if isinstance(img, RGBImage):
        return img.pixels
    return np.asarray(img, dtype=np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB on [0,1] images, capped at 100."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    mse = float(np.mean((pa - pb) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(a, b) -> float:
    """Structural similarity averaged over channels and valid window positions."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    if pa.ndim == 2:
        pa, pb = pa[..., None], pb[..., None]
    h, w, c = pa.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    kernel = win[None, None].repeat(c, 1, 1, 1)
    ta = torch.from_numpy(pa).permute(2, 0, 1).unsqueeze(0)
    tb = torch.from_numpy(pb).permute(2, 0, 1).unsqueeze(0)
    conv = lambda x: torch.nn.functional.conv2d(x, kernel, groups=c)
    mu_a, mu_b = conv(ta), conv(tb)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = conv(ta * ta) - mu_aa
    var_b = conv(tb * tb) - mu_bb
    cov = conv(ta * tb) - mu_ab
    num = (2 * mu_ab + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_aa + mu_bb + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())


class StubLPIPS(nn.Module):
    """Deterministic perceptual-distance stand-in.

    Three fixed-seed conv stages; activations are unit-normalized along the
    channel axis per spatial location, squared differences are averaged per
    stage and summed. Zero iff the inputs are identical.
    """

    STAGE_CHANNELS = (8, 16, 16)

    def __init__(self, seed: int = 4321):
        super().__init__()
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

    def distance(self, a, b) -> float:
        ta = torch.from_numpy(_pixels(a)).permute(2, 0, 1).unsqueeze(0).float()
        tb = torch.from_numpy(_pixels(b)).permute(2, 0, 1).unsqueeze(0).float()
        total = 0.0
        xa, xb = ta, tb
        with torch.no_grad():
            for conv in self.convs:
                xa = self.relu(conv(xa))
                xb = self.relu(conv(xb))
                na = xa / (xa.norm(dim=1, keepdim=True) + 1e-10)
                nb = xb / (xb.norm(dim=1, keepdim=True) + 1e-10)
                total += float(((na - nb) ** 2).mean())
        return total

    __call__ = distance


class ExternalLPIPS:
    """Adapter for the pretrained LPIPS network (needs the lpips package)."""

    def __init__(self, net: str = "alex"):
        from .adapters import AdapterUnavailable

        try:
            import lpips as lpips_pkg

            self._net = lpips_pkg.LPIPS(net=net)
        except Exception as e:
            raise AdapterUnavailable(f"pretrained LPIPS unavailable: {e}") from e

    def distance(self, a, b) -> float:
        ta = torch.from_numpy(_pixels(a)).permute(2, 0, 1).unsqueeze(0).float() * 2 - 1
        tb = torch.from_numpy(_pixels(b)).permute(2, 0, 1).unsqueeze(0).float() * 2 - 1
        with torch.no_grad():
            return float(self._net(ta, tb))

    __call__ = distance


def lpips(a, b, adapter) -> float:
    """Perceptual distance through the configured adapter (stub or external)."""
    if adapter is None:
        raise ValueError("no perceptual-distance adapter configured")
    return float(adapter(a, b))


def hard_histogram(values: np.ndarray, bins: int = 64) -> np.ndarray:
    """Plain counting histogram over [0,1], normalized to sum 1."""
    counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return counts.astype(np.float64) / max(values.size, 1)


@dataclass
class ChannelHistogramReport:
    channel_names: tuple[str, str, str]
    pred_histograms: list[np.ndarray]
    gt_histograms: list[np.ndarray]
    kl_per_channel: list[float]

    def to_dict(self) -> dict:
        return {
            "channels": [
                {
                    "name": n,
                    "kl": k,
                    "pred_hist": p.tolist(),
                    "gt_hist": g.tolist(),
                }
                for n, k, p, g in zip(
                    self.channel_names,
                    self.kl_per_channel,
                    self.pred_histograms,
                    self.gt_histograms,
                )
            ]
        }


def channel_histogram_report(
    pred, gt, bins: int = 64, plot_path: str | None = None
) -> ChannelHistogramReport:
    """Per-channel histogram alignment between a prediction and its target."""
    pp, pg = _pixels(pred), _pixels(gt)
    if pp.shape != pg.shape:
        raise ValueError(f"shape mismatch: {pp.shape} vs {pg.shape}")
    names = ("red", "green", "blue")
    pred_h, gt_h, kls = [], [], []
    for c in range(3):
        hp = hard_histogram(pp[..., c], bins)
        hg = hard_histogram(pg[..., c], bins)
        pred_h.append(hp)
        gt_h.append(hg)
        kls.append(float(kl_divergence(torch.from_numpy(hg), torch.from_numpy(hp))))
    report = ChannelHistogramReport(names, pred_h, gt_h, kls)
    if plot_path is not None:
        _plot_histograms(report, plot_path)
    return report


def _plot_histograms(report: ChannelHistogramReport, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(12, 3))
    x = np.arange(len(report.pred_histograms[0]))
    for ax, name, hp, hg, kl in zip(
        axes, report.channel_names, report.pred_histograms,
        report.gt_histograms, report.kl_per_channel,
    ):
        ax.plot(x, hg, label="ground truth", color="black")
        ax.plot(x, hp, label="colorized", color=name)
        ax.set_title(f"{name} (KL={kl:.4f})")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


@dataclass
class MetricRow:
    sample_id: str
    psnr_db: float
    ssim: float
    lpips: float | None = None
    l1_ab: float | None = None

    def validate(self) -> "MetricRow":
        if not -1.0 <= self.ssim <= 1.0 + 1e-9:
            raise ValueError(f"ssim {self.ssim} outside [-1, 1]")
        if self.psnr_db < 0:
            raise ValueError(f"psnr {self.psnr_db} negative")
        return self


@dataclass
class EvaluationSummary:
    rows: list[MetricRow]
    mean_psnr: float | None
    mean_ssim: float | None
    mean_lpips: float | None
    mean_l1_ab: float | None
    failures: list[tuple[str, str]]

    @property
    def empty(self) -> bool:
        return not self.rows


def _mean_or_none(values: list) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate(samples, predictor, lpips_adapter=None) -> EvaluationSummary:
    """Score a predictor over annotated scenes.

    ``predictor(sample) -> RGBImage`` (or a dict with keys ``rgb`` and
    optionally ``ab_l1``). Per-sample failures are recorded and skipped, not
    fatal. Sample order is preserved so runs are comparable.
    """
    rows: list[MetricRow] = []
    failures: list[tuple[str, str]] = []
    for i, sample in enumerate(samples):
        sample_id = f"sample_{i:05d}"
        try:
            result = predictor(sample)
            if isinstance(result, dict):
                pred_rgb = result["rgb"]
                ab_l1 = result.get("ab_l1")
            else:
                pred_rgb = result
                ab_l1 = None
            row = MetricRow(
                sample_id=sample_id,
                psnr_db=psnr(pred_rgb, sample.image),
                ssim=ssim(pred_rgb, sample.image),
                lpips=(
                    lpips(pred_rgb, sample.image, lpips_adapter)
                    if lpips_adapter is not None
                    else None
                ),
                l1_ab=ab_l1,
            ).validate()
            rows.append(row)
        except Exception as e:  # record, continue
            failures.append((sample_id, str(e)))
    return EvaluationSummary(
        rows=rows,
        mean_psnr=_mean_or_none([r.psnr_db for r in rows]),
        mean_ssim=_mean_or_none([r.ssim for r in rows]),
        mean_lpips=_mean_or_none([r.lpips for r in rows]),
        mean_l1_ab=_mean_or_none([r.l1_ab for r in rows]),
        failures=failures,
    )


def write_metric_table(summary: EvaluationSummary, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "psnr_db", "ssim", "lpips", "l1_ab"])
        for r in summary.rows:
            writer.writerow(
                [
                    r.sample_id,
                    f"{r.psnr_db:.6f}",
                    f"{r.ssim:.8f}",
                    "" if r.lpips is None else f"{r.lpips:.8f}",
                    "" if r.l1_ab is None else f"{r.l1_ab:.8f}",
                ]
            )
        writer.writerow([])
        writer.writerow(
            [
                "mean",
                "" if summary.mean_psnr is None else f"{summary.mean_psnr:.6f}",
                "" if summary.mean_ssim is None else f"{summary.mean_ssim:.8f}",
                "" if summary.mean_lpips is None else f"{summary.mean_lpips:.8f}",
                "" if summary.mean_l1_ab is None else f"{summary.mean_l1_ab:.8f}",
            ]
        )

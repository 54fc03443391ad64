"""Training loops for the instance and fusion stages.

Both stages alternate one discriminator update with one generator update per
step (Adam, lr 2e-4, betas (0.5, 0.999)). The fusion stage consumes merged
images built with a frozen instance-stage checkpoint. Ablation switches:
``use_text=False`` replaces every caption embedding with a constant all-ones
vector (the multiplicative gate stops carrying per-sample information), and
``use_cf_loss=False`` drops the colorfulness term (recorded as 0).

Checkpoints hold named parameter tensors for generator/discriminator, both
optimizer states, both RNG states, the config and its hash, and the metric
history, so a resumed run reproduces the single-run loss trace exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .adapters import detect_instances_stub, encode_text_stub
from .colorspace import lab_to_srgb_t
from .dataset import (
    SceneSample,
    load_manifest,
    make_synthetic_dataset,
    make_training_pair,
    scale_instance,
    scene_lab_planes,
)
from .discriminator import PatchDiscriminator
from .fusion import FusionColorizer
from .imageops import to_tensor_chw
from .ioc import InstanceColorizer
from .losses import (
    FUSION_LAMBDAS,
    IOC_LAMBDAS,
    StubFeatureExtractor,
    classification_loss,
    colorfulness_loss,
    gan_discriminator_loss,
    gan_generator_loss,
    l1_loss,
    perceptual_loss,
    total_fusion_loss,
    total_ioc_loss,
    weighted_total,
)

CHECKPOINT_FORMAT = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, term: str, step: int, values: dict):
        self.term = term
        self.step = step
        self.values = values
        super().__init__(
            f"non-finite loss term {term!r} at step {step}; all terms: {values}"
        )


@dataclass
class TrainConfig:
    stage: str = "ioc"  # ioc | fusion
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    seed: int = 0
    lambdas: tuple[float, ...] | None = None  # None -> stage default
    use_text: bool = True
    use_cf_loss: bool = True
    checkpoint_every: int = 500
    resolution: int = 256
    base_channels: int = 64
    disc_channels: tuple[int, int, int] = (64, 128, 256)
    grad_clip: float | None = None  # max global grad norm; None disables
    hist_bins: int = 64
    perceptual_tap: str = "stage3"
    data_kind: str = "synthetic"  # synthetic | manifest
    synthetic_count: int = 500
    synthetic_seed: int = 0
    synthetic_max_objects: int = 3
    manifest_path: str | None = None
    ioc_checkpoint: str | None = None  # fusion stage input

    def __post_init__(self):
        if self.stage not in ("ioc", "fusion"):
            raise ValueError(f"stage must be ioc|fusion, got {self.stage!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.lambdas is None:
            self.lambdas = IOC_LAMBDAS if self.stage == "ioc" else FUSION_LAMBDAS
        self.lambdas = tuple(float(v) for v in self.lambdas)
        expected = 5 if self.stage == "ioc" else 4
        if len(self.lambdas) != expected:
            raise ValueError(f"{self.stage} stage needs {expected} lambda weights")
        if any(v < 0 for v in self.lambdas):
            raise ValueError("lambda weights must be >= 0")
        self.betas = tuple(self.betas)
        self.disc_channels = tuple(self.disc_channels)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return TrainConfig(**d)

    @staticmethod
    def from_json(path: str) -> "TrainConfig":
        with open(path) as f:
            return TrainConfig.from_dict(json.load(f))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainState:
    config: TrainConfig
    generator: torch.nn.Module
    disc: PatchDiscriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    perceptual_net: StubFeatureExtractor
    data_rng: torch.Generator
    step: int = 0
    history: list = field(default_factory=list)
    last_d_loss: float = 0.0


def load_scenes(config: TrainConfig) -> list[SceneSample]:
    if config.data_kind == "synthetic":
        return make_synthetic_dataset(
            config.synthetic_count,
            seed=config.synthetic_seed,
            max_objects=config.synthetic_max_objects,
        )
    if config.data_kind == "manifest":
        if not config.manifest_path:
            raise ValueError("manifest data source needs manifest_path")
        return load_manifest(config.manifest_path)
    raise ValueError(f"unknown data_kind {config.data_kind!r}")


def build_ioc_training_data(scenes: list[SceneSample], resolution: int, text_encoder=encode_text_stub) -> dict:
    """Flatten scenes into per-instance tensors: L, target ab, embedding, class."""
    Ls, abs_, embs, cls = [], [], [], []
    for sample in scenes:
        for i in range(len(sample.instances)):
            L_n, ab_n, caption, class_id = make_training_pair(sample, i, resolution)
            Ls.append(to_tensor_chw(L_n))
            abs_.append(to_tensor_chw(ab_n))
            embs.append(torch.from_numpy(text_encoder(caption).vector).float())
            cls.append(class_id)
    if not Ls:
        raise ValueError("no instances found in the training scenes")
    return {
        "L": torch.stack(Ls),
        "ab": torch.stack(abs_),
        "emb": torch.stack(embs),
        "class_id": torch.tensor(cls, dtype=torch.long),
    }


def colorize_scene_instances(
    sample: SceneSample, generator: InstanceColorizer, text_encoder=encode_text_stub
):
    """Run the frozen instance generator over every annotated instance."""
    from .merge import ColoredInstance

    resolution = generator.resolution
    colored = []
    records = detect_instances_stub(sample).instances
    generator.eval()
    with torch.no_grad():
        for i, rec in enumerate(records):
            L_n, _, caption, _ = make_training_pair(sample, i, resolution)
            emb = torch.from_numpy(text_encoder(caption).vector).float().unsqueeze(0)
            out = generator(to_tensor_chw(L_n).unsqueeze(0), emb)
            ab_pred = out.ab_pred[0].permute(1, 2, 0).numpy().astype(np.float64)
            colored.append(ColoredInstance(ab_pred=ab_pred, record=rec))
    return records, colored


def build_fusion_training_data(
    scenes: list[SceneSample],
    resolution: int,
    ioc_generator: InstanceColorizer,
    text_encoder=encode_text_stub,
) -> dict:
    """Merged-scene inputs from a frozen instance stage + scene caption embeddings."""
    from .merge import merge_instances

    planes, targets, embs = [], [], []
    for sample in scenes:
        L_n, ab_n = scene_lab_planes(sample, resolution)
        _, colored = colorize_scene_instances(sample, ioc_generator, text_encoder)
        scaled = [
            dataclasses.replace(
                ci,
                record=scale_instance(
                    ci.record, (sample.image.height, sample.image.width), (resolution, resolution)
                ),
            )
            for ci in colored
        ]
        merged = merge_instances(L_n, scaled)
        planes.append(to_tensor_chw(merged.planes))
        targets.append(to_tensor_chw(ab_n))
        embs.append(torch.from_numpy(text_encoder(sample.scene_caption).vector).float())
    return {
        "planes": torch.stack(planes),
        "ab": torch.stack(targets),
        "emb": torch.stack(embs),
    }


def init_state(config: TrainConfig) -> TrainState:
    torch.manual_seed(config.seed)
    if config.stage == "ioc":
        gen: torch.nn.Module = InstanceColorizer(
            resolution=config.resolution, base_channels=config.base_channels
        )
    else:
        gen = FusionColorizer(
            resolution=config.resolution, base_channels=config.base_channels
        )
    disc = PatchDiscriminator(channels=config.disc_channels)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.learning_rate, betas=config.betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=config.betas)
    perceptual_net = StubFeatureExtractor(tap=config.perceptual_tap)
    data_rng = torch.Generator().manual_seed(config.seed + 1)
    return TrainState(
        config=config,
        generator=gen,
        disc=disc,
        opt_g=opt_g,
        opt_d=opt_d,
        perceptual_net=perceptual_net,
        data_rng=data_rng,
    )


def _batch_embedding(batch: dict, config: TrainConfig) -> torch.Tensor:
    if config.use_text:
        return batch["emb"]
    return torch.ones_like(batch["emb"])


def train_step(batch: dict, state: TrainState):
    """One discriminator update followed by one generator update."""
    config = state.config
    state.generator.train()
    state.disc.train()
    emb = _batch_embedding(batch, config)
    if config.stage == "ioc":
        gray, ab_true = batch["L"], batch["ab"]
        forward = lambda: state.generator(gray, emb)
        L_for_disc = gray
    else:
        gray, ab_true = batch["planes"], batch["ab"]
        forward = lambda: state.generator(gray, emb)
        L_for_disc = gray[:, :1]

    # discriminator update on a detached fake
    with torch.no_grad():
        out = forward()
        fake_detached = out.ab_pred if config.stage == "ioc" else out.ab_final
    d_loss = gan_discriminator_loss(state.disc, L_for_disc, ab_true, fake_detached)
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    if config.grad_clip:
        torch.nn.utils.clip_grad_norm_(state.disc.parameters(), config.grad_clip)
    state.opt_d.step()

    # generator update
    out = forward()
    ab_pred = out.ab_pred if config.stage == "ioc" else out.ab_final
    lab_pred = torch.cat([L_for_disc, ab_pred], dim=1)
    lab_true = torch.cat([L_for_disc, ab_true], dim=1)

    terms = {}
    terms["l1"] = l1_loss(ab_pred, ab_true)
    rgb_pred = lab_to_srgb_t(lab_pred)
    rgb_true = lab_to_srgb_t(lab_true)
    terms["perceptual"] = perceptual_loss(rgb_pred, rgb_true, state.perceptual_net)
    if config.use_cf_loss:
        terms["colorfulness"] = colorfulness_loss(lab_pred, lab_true, bins=config.hist_bins)
    else:
        terms["colorfulness"] = ab_pred.new_zeros(())
    terms["gan_g"] = gan_generator_loss(state.disc, L_for_disc, ab_pred)
    if config.stage == "ioc":
        terms["class_ce"] = classification_loss(out.class_logits, batch["class_id"])

    values = {k: float(v.detach()) for k, v in terms.items()}
    values["gan_d"] = float(d_loss.detach())
    for name, val in values.items():
        if not np.isfinite(val):
            raise TrainingDiverged(name, state.step, values)

    ordered = [terms["l1"], terms["perceptual"], terms["colorfulness"], terms["gan_g"]]
    if config.stage == "ioc":
        ordered.append(terms["class_ce"])
    total = weighted_total(ordered, config.lambdas)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    if config.grad_clip:
        torch.nn.utils.clip_grad_norm_(state.generator.parameters(), config.grad_clip)
    state.opt_g.step()

    if config.stage == "ioc":
        report = total_ioc_loss(
            values["l1"], values["perceptual"], values["colorfulness"],
            values["gan_g"], values["class_ce"], lambdas=config.lambdas,
        )
    else:
        report = total_fusion_loss(
            values["l1"], values["perceptual"], values["colorfulness"],
            values["gan_g"], lambdas=config.lambdas,
        )
    state.step += 1
    state.last_d_loss = values["gan_d"]
    return state, report


def sample_batch(data: dict, batch_size: int, rng: torch.Generator) -> dict:
    n = data["ab"].shape[0]
    idx = torch.randint(0, n, (batch_size,), generator=rng)
    return {k: v[idx] for k, v in data.items()}


def save_checkpoint(state: TrainState, path: str) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "stage": state.config.stage,
        "step": state.step,
        "config": state.config.to_dict(),
        "config_hash": state.config.hash(),
        "arch_g": state.generator.arch_descriptor(),
        "arch_d": state.disc.arch_descriptor(),
        "generator": state.generator.state_dict(),
        "discriminator": state.disc.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "data_rng_state": state.data_rng.get_state(),
        "torch_rng_state": torch.get_rng_state(),
        "history": state.history,
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str) -> TrainState:
    """Rebuild a full training state (models, optimizers, RNG) for resuming."""
    payload = torch.load(path, weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    config = TrainConfig.from_dict(payload["config"])
    state = init_state(config)
    state.generator.load_state_dict(payload["generator"])
    state.disc.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.data_rng.set_state(payload["data_rng_state"])
    torch.set_rng_state(payload["torch_rng_state"])
    state.step = payload["step"]
    state.history = list(payload["history"])
    return state


def load_generator(path: str) -> torch.nn.Module:
    """Inference-only load: rebuild the generator by architecture descriptor."""
    payload = torch.load(path, weights_only=False)
    arch = payload["arch_g"]
    if arch["kind"] == "ioc":
        gen: torch.nn.Module = InstanceColorizer(
            resolution=arch["resolution"],
            base_channels=arch["base_channels"],
            num_classes=arch["num_classes"],
            in_channels=arch["in_channels"],
        )
    elif arch["kind"] == "fusion":
        gen = FusionColorizer(
            resolution=arch["resolution"], base_channels=arch["base_channels"]
        )
    else:
        raise ValueError(f"unknown generator kind {arch['kind']!r}")
    gen.load_state_dict(payload["generator"])
    gen.eval()
    return gen


@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    history: list
    state: TrainState


def train(
    config: TrainConfig,
    out_dir: str,
    scenes: list[SceneSample] | None = None,
    resume_from: str | None = None,
) -> TrainResult:
    """Run the configured stage for ``config.steps`` steps, checkpointing as it goes."""
    os.makedirs(out_dir, exist_ok=True)
    if resume_from:
        state = load_checkpoint(resume_from)
        # weights/optimizers/RNG come from the checkpoint; the step target
        # comes from the caller so a resumed run can continue past it
        state.config.steps = config.steps
        config = state.config
    else:
        state = init_state(config)
    if scenes is None:
        scenes = load_scenes(config)
    if config.stage == "ioc":
        data = build_ioc_training_data(scenes, config.resolution)
    else:
        if not config.ioc_checkpoint:
            raise ValueError("fusion stage needs ioc_checkpoint")
        frozen = load_generator(config.ioc_checkpoint)
        if not isinstance(frozen, InstanceColorizer):
            raise ValueError("ioc_checkpoint does not hold an instance-stage generator")
        data = build_fusion_training_data(scenes, config.resolution, frozen)

    metrics_path = os.path.join(out_dir, f"{config.stage}_metrics.jsonl")
    mode = "a" if resume_from else "w"
    final_path = os.path.join(out_dir, f"{config.stage}_final.pt")
    with open(metrics_path, mode) as metrics_file:
        while state.step < config.steps:
            batch = sample_batch(data, config.batch_size, state.data_rng)
            state, report = train_step(batch, state)
            record = {
                "step": state.step,
                "l1": report.l1,
                "perceptual": report.perceptual,
                "colorfulness": report.colorfulness,
                "gan_g": report.gan_g,
                "class_ce": report.class_ce,
                "total": report.total,
                "gan_d": state.last_d_loss,
            }
            state.history.append(record)
            metrics_file.write(json.dumps(record) + "\n")
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_checkpoint(state, os.path.join(out_dir, f"{config.stage}_step{state.step}.pt"))
    save_checkpoint(state, final_path)
    return TrainResult(
        checkpoint_path=final_path,
        metrics_path=metrics_path,
        history=state.history,
        state=state,
    )

import json

import pytest
import torch

from textcolorize.dataset import make_synthetic_dataset
from textcolorize.training import (
    TrainConfig,
    TrainingDiverged,
    build_ioc_training_data,
    init_state,
    load_checkpoint,
    load_generator,
    sample_batch,
    train,
    train_step,
)


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        stage="ioc",
        steps=3,
        batch_size=4,
        resolution=32,
        base_channels=8,
        disc_channels=(8, 16, 16),
        synthetic_count=6,
        synthetic_seed=0,
        seed=0,
        checkpoint_every=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_data():
    scenes = make_synthetic_dataset(6, seed=0)
    return build_ioc_training_data(scenes, 32)


def test_zero_lambdas_leave_generator_unchanged(tiny_data):
    torch.set_num_threads(1)
    config = tiny_config(lambdas=(0, 0, 0, 0, 0))
    state = init_state(config)
    before = {k: v.clone() for k, v in state.generator.state_dict().items()}
    batch = sample_batch(tiny_data, config.batch_size, state.data_rng)
    state, report = train_step(batch, state)
    assert report.total == 0.0
    after = state.generator.state_dict()
    for key, tensor in before.items():
        if "running" in key or "num_batches" in key:
            continue  # BN statistics are buffers, not parameters
        assert torch.equal(tensor, after[key]), key


def test_deterministic_loss_sequences(tiny_data):
    torch.set_num_threads(1)
    reports = []
    for _ in range(2):
        config = tiny_config(steps=10)
        state = init_state(config)
        run = []
        for _step in range(10):
            batch = sample_batch(tiny_data, config.batch_size, state.data_rng)
            state, report = train_step(batch, state)
            run.append((report.l1, report.perceptual, report.colorfulness,
                        report.gan_g, report.class_ce, report.total))
        reports.append(run)
    assert reports[0] == reports[1]


def test_zero_steps_checkpoint_equals_init(tmp_path):
    config = tiny_config(steps=0)
    result = train(config, str(tmp_path / "run"))
    fresh = init_state(tiny_config(steps=0))
    loaded = load_checkpoint(result.checkpoint_path)
    assert loaded.step == 0
    for key, tensor in fresh.generator.state_dict().items():
        assert torch.equal(tensor, loaded.generator.state_dict()[key]), key


def test_resume_reproduces_single_run_trace(tmp_path):
    torch.set_num_threads(1)
    full = train(tiny_config(steps=8), str(tmp_path / "full"))
    half = train(tiny_config(steps=4), str(tmp_path / "half"))
    resumed = train(
        tiny_config(steps=8),
        str(tmp_path / "resumed"),
        resume_from=half.checkpoint_path,
    )
    assert len(full.history) == len(resumed.history) == 8
    for a, b in zip(full.history, resumed.history):
        assert a["step"] == b["step"]
        assert abs(a["total"] - b["total"]) <= 1e-6
        assert abs(a["l1"] - b["l1"]) <= 1e-6


def test_checkpoint_reload_reproduces_forward(tmp_path, tiny_data):
    config = tiny_config(steps=2)
    result = train(config, str(tmp_path / "run"))
    gen = load_generator(result.checkpoint_path)
    batch = {k: v[:2] for k, v in tiny_data.items()}
    result.state.generator.eval()
    with torch.no_grad():
        want = result.state.generator(batch["L"], batch["emb"])
        got = gen(batch["L"], batch["emb"])
    assert torch.equal(want.ab_pred, got.ab_pred)
    assert torch.equal(want.class_logits, got.class_logits)


def test_cf_loss_flag_records_zero(tmp_path):
    result = train(tiny_config(steps=3, use_cf_loss=False), str(tmp_path / "run"))
    assert all(r["colorfulness"] == 0.0 for r in result.history)


def test_use_text_false_runs_and_differs(tmp_path):
    with_text = train(tiny_config(steps=3), str(tmp_path / "a"))
    without = train(tiny_config(steps=3, use_text=False), str(tmp_path / "b"))
    assert with_text.history[0]["l1"] != without.history[0]["l1"]


def test_metrics_log_is_line_delimited_json(tmp_path):
    result = train(tiny_config(steps=3), str(tmp_path / "run"))
    lines = open(result.metrics_path).read().splitlines()
    assert len(lines) == 3
    for i, line in enumerate(lines):
        record = json.loads(line)
        assert record["step"] == i + 1
        assert set(record) >= {"l1", "perceptual", "colorfulness", "gan_g", "total", "gan_d"}


def test_non_finite_loss_aborts_with_term_name(tiny_data):
    config = tiny_config()
    state = init_state(config)
    with torch.no_grad():
        state.generator.decoder.head.weight.fill_(float("nan"))
    batch = sample_batch(tiny_data, config.batch_size, state.data_rng)
    with pytest.raises(TrainingDiverged) as err:
        train_step(batch, state)
    assert err.value.term in {"l1", "perceptual", "colorfulness", "gan_g", "class_ce", "gan_d"}
    assert err.value.values  # diagnostic dump present


def test_fusion_stage_trains_from_frozen_ioc(tmp_path):
    torch.set_num_threads(1)
    ioc_result = train(tiny_config(steps=2), str(tmp_path / "ioc"))
    fusion_config = tiny_config(
        stage="fusion",
        steps=2,
        lambdas=None,
        ioc_checkpoint=ioc_result.checkpoint_path,
    )
    result = train(fusion_config, str(tmp_path / "fusion"))
    assert len(result.history) == 2
    assert all(r["class_ce"] is None for r in result.history)
    gen = load_generator(result.checkpoint_path)
    from textcolorize.fusion import FusionColorizer

    assert isinstance(gen, FusionColorizer)


def test_fusion_stage_requires_ioc_checkpoint(tmp_path):
    with pytest.raises(ValueError, match="ioc_checkpoint"):
        train(tiny_config(stage="fusion", lambdas=None), str(tmp_path / "x"))


def test_config_validation():
    with pytest.raises(ValueError, match="stage"):
        TrainConfig(stage="bogus")
    with pytest.raises(ValueError, match="lambda"):
        TrainConfig(stage="ioc", lambdas=(1, 2))
    with pytest.raises(ValueError, match=">= 0"):
        TrainConfig(stage="ioc", lambdas=(-1, 1, 1, 1, 1))
    with pytest.raises(ValueError, match="unknown config"):
        TrainConfig.from_dict({"stage": "ioc", "bogus_field": 1})


def test_config_json_round_trip(tmp_path):
    config = tiny_config(use_text=False, lambdas=(2, 1, 1, 1, 1))
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config.to_dict()))
    loaded = TrainConfig.from_json(str(path))
    assert loaded == config
    assert loaded.hash() == config.hash()

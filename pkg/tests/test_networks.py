import numpy as np
import pytest
import torch

from textcolorize.discriminator import PatchDiscriminator
from textcolorize.fusion import FusionColorizer
from textcolorize.ioc import InstanceColorizer, TextProjection, stage_channels


def unit_emb(seed=0, batch=1, nonnegative=False):
    g = torch.Generator().manual_seed(seed)
    v = torch.randn(batch, 256, generator=g)
    if nonnegative:
        v = v.abs()
    return v / v.norm(dim=1, keepdim=True)


# --------------------------------------------------------------------------
# text projection
# --------------------------------------------------------------------------


def test_projection_output_shape():
    torch.manual_seed(0)
    proj = TextProjection()
    out = proj(unit_emb())
    assert out.shape == (1, 64, 8, 8)
    assert out.numel() == 4096


def test_projection_zero_weights_give_zero_block():
    proj = TextProjection()
    with torch.no_grad():
        for p in proj.parameters():
            p.zero_()
    out = proj(unit_emb(3))
    assert torch.all(out == 0)


def test_projection_sparse_identity_construction():
    # layer k copies its input into the leading slots of the next width;
    # with a nonnegative embedding the interleaved ReLUs are inert and the
    # block's leading entries reproduce the embedding exactly
    proj = TextProjection()
    with torch.no_grad():
        for fc in (proj.fc1, proj.fc2, proj.fc3):
            fc.weight.zero_()
            fc.bias.zero_()
            n = min(fc.in_features, fc.out_features)
            fc.weight[range(n), range(n)] = 1.0
    emb = unit_emb(7, nonnegative=True)
    out = proj(emb).reshape(1, -1)
    assert torch.allclose(out[0, :256], emb[0], atol=0)
    assert torch.all(out[0, 256:] == 0)


def test_projection_rejects_bad_shape():
    proj = TextProjection()
    with pytest.raises(ValueError, match="256"):
        proj(torch.zeros(1, 128))


def test_projection_rejects_non_finite():
    proj = TextProjection()
    bad = torch.full((1, 256), float("nan"))
    with pytest.raises(ValueError, match="finite"):
        proj(bad)


# --------------------------------------------------------------------------
# stage plan
# --------------------------------------------------------------------------


def test_stage_channels_at_full_resolution():
    assert stage_channels(256, 64) == [64, 128, 256, 512, 64]


def test_stage_channels_reduced():
    assert stage_channels(64, 16) == [16, 32, 64]


def test_stage_channels_rejects_bad_resolution():
    with pytest.raises(ValueError):
        stage_channels(100, 64)


# --------------------------------------------------------------------------
# instance colorizer
# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_ioc():
    torch.manual_seed(0)
    return InstanceColorizer(resolution=64, base_channels=16)


def test_ioc_output_shapes(small_ioc):
    out = small_ioc(torch.rand(2, 1, 64, 64), unit_emb(0, batch=2))
    assert out.ab_pred.shape == (2, 2, 64, 64)
    assert out.class_logits.shape == (2, 80)
    assert out.ab_pred.abs().max() <= 1.0


def test_ioc_zero_embedding_zero_bias_annihilates(small_ioc):
    with torch.no_grad():
        for fc in (small_ioc.text_projection.fc1,
                   small_ioc.text_projection.fc2,
                   small_ioc.text_projection.fc3):
            fc.bias.zero_()
    try:
        conditioned, _ = small_ioc.conditioned_bottleneck(
            torch.rand(1, 1, 64, 64), torch.zeros(1, 256)
        )
        assert torch.all(conditioned == 0)
    finally:
        torch.nn.init.ones_(small_ioc.text_projection.fc3.bias)


def test_ioc_text_conditioning_reaches_output(small_ioc):
    small_ioc.eval()
    img = torch.rand(1, 1, 64, 64)
    out1 = small_ioc(img, unit_emb(1)).ab_pred
    out2 = small_ioc(img, unit_emb(2)).ab_pred
    assert (out1 - out2).abs().max() > 0


def test_ioc_multiplicative_conditioning_scales_exactly(small_ioc):
    # scaling the projected block by a power of two scales the conditioned
    # bottleneck bitwise-exactly (float multiplication by 2 is lossless)
    img = torch.rand(1, 1, 64, 64)
    emb = unit_emb(4)
    small_ioc.eval()
    with torch.no_grad():
        feats = small_ioc.encoder(img)
        gate = small_ioc.text_projection(emb)
        assert torch.equal(feats[-1] * (2.0 * gate), 2.0 * (feats[-1] * gate))


def test_ioc_deterministic_forward(small_ioc):
    small_ioc.eval()
    img = torch.rand(1, 1, 64, 64)
    emb = unit_emb(5)
    with torch.no_grad():
        a = small_ioc(img, emb)
        b = small_ioc(img, emb)
    assert torch.equal(a.ab_pred, b.ab_pred)
    assert torch.equal(a.class_logits, b.class_logits)


def test_ioc_shape_mismatch_rejected(small_ioc):
    with pytest.raises(ValueError, match="shape"):
        small_ioc(torch.rand(1, 1, 32, 32), unit_emb())
    with pytest.raises(ValueError, match="batch"):
        small_ioc(torch.rand(2, 1, 64, 64), unit_emb(0, batch=3))


def test_ioc_full_resolution_shapes():
    torch.manual_seed(0)
    model = InstanceColorizer(resolution=256, base_channels=64)
    out = model(torch.rand(1, 1, 256, 256), unit_emb())
    assert out.ab_pred.shape == (1, 2, 256, 256)
    assert out.class_logits.shape == (1, 80)
    assert model.channels == [64, 128, 256, 512, 64]


# --------------------------------------------------------------------------
# fusion
# --------------------------------------------------------------------------


def test_fusion_output_shape():
    torch.manual_seed(0)
    model = FusionColorizer(resolution=64, base_channels=16)
    out = model(torch.rand(2, 3, 64, 64), unit_emb(0, batch=2))
    assert out.ab_final.shape == (2, 2, 64, 64)


def test_fusion_zero_embedding_gates_out_bottleneck():
    torch.manual_seed(0)
    model = FusionColorizer(resolution=64, base_channels=16)
    with torch.no_grad():
        for fc in (model.text_projection.fc1, model.text_projection.fc2,
                   model.text_projection.fc3):
            fc.bias.zero_()
    # with the gate annihilated, the bottleneck is zero for any input image
    for seed in (1, 2):
        torch.manual_seed(seed)
        conditioned, _ = model.conditioned_bottleneck(
            torch.rand(1, 3, 64, 64), torch.zeros(1, 256)
        )
        assert torch.all(conditioned == 0)


def test_fusion_shape_mismatch_rejected():
    torch.manual_seed(0)
    model = FusionColorizer(resolution=64, base_channels=16)
    with pytest.raises(ValueError, match="merged input"):
        model(torch.rand(1, 1, 64, 64), unit_emb())


def test_fusion_deterministic_forward():
    torch.manual_seed(0)
    model = FusionColorizer(resolution=64, base_channels=16)
    model.eval()
    x, emb = torch.rand(1, 3, 64, 64), unit_emb(3)
    with torch.no_grad():
        assert torch.equal(model(x, emb).ab_final, model(x, emb).ab_final)


def test_fusion_multiplicative_conditioning_scales_exactly():
    torch.manual_seed(0)
    model = FusionColorizer(resolution=64, base_channels=16)
    model.eval()
    x, emb = torch.rand(1, 3, 64, 64), unit_emb(4)
    with torch.no_grad():
        feats = model.encoder(x)
        gate = model.text_projection(emb)
        assert torch.equal(feats[-1] * (2.0 * gate), 2.0 * (feats[-1] * gate))


# --------------------------------------------------------------------------
# discriminator
# --------------------------------------------------------------------------


def test_disc_output_grid_256():
    torch.manual_seed(0)
    disc = PatchDiscriminator()
    logits = disc(torch.rand(1, 1, 256, 256), torch.rand(1, 2, 256, 256))
    assert logits.shape == (1, 1, 32, 32)


def test_disc_zero_params_score_half():
    torch.manual_seed(0)
    disc = PatchDiscriminator(channels=(16, 32, 64))
    with torch.no_grad():
        for p in disc.parameters():
            p.zero_()
    logits = disc(torch.rand(1, 1, 64, 64), torch.rand(1, 2, 64, 64))
    assert torch.all(logits == 0)
    assert torch.all(torch.sigmoid(logits) == 0.5)


def test_disc_distinguishes_real_from_fake():
    torch.manual_seed(1)
    disc = PatchDiscriminator(channels=(16, 32, 64))
    L = torch.rand(1, 1, 64, 64)
    real = torch.rand(1, 2, 64, 64) * 2 - 1
    fake = torch.rand(1, 2, 64, 64) * 2 - 1
    assert (disc(L, real) - disc(L, fake)).abs().max() > 0


def test_disc_translation_covariance():
    # the patch lattice has stride 8 (three stride-2 stages): shifting the
    # input by one lattice step shifts patch responses by one cell wherever
    # the ~38px receptive field stays clear of the padded borders
    torch.manual_seed(2)
    disc = PatchDiscriminator(channels=(16, 32, 64))
    g = torch.Generator().manual_seed(3)
    wide = torch.rand(1, 3, 64, 136, generator=g)
    crop_a = wide[..., :, 0:128]
    crop_b = wide[..., :, 8:136]  # crop_a translated left by one lattice step
    with torch.no_grad():
        out_a = disc.net(crop_a)
        out_b = disc.net(crop_b)
    # out_a cell j+1 sees the same pixels as out_b cell j; keep 4 cells margin
    assert torch.allclose(out_a[..., :, 4:12], out_b[..., :, 3:11], atol=1e-5)


def test_disc_shape_mismatch_rejected():
    disc = PatchDiscriminator(channels=(16, 32, 64))
    with pytest.raises(ValueError):
        disc(torch.rand(1, 1, 64, 64), torch.rand(1, 2, 32, 32))
    with pytest.raises(ValueError):
        disc(torch.rand(1, 2, 64, 64), torch.rand(1, 2, 64, 64))

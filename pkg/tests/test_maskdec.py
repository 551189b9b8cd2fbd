from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ifdl.maskdec import (
    DenseFeatureEncoder,
    MaskDecoder,
    MaskDecoderConfig,
    binarize,
    decode_mask,
    dense_features,
)
from ifdl.model import Stage1Model
from ifdl.train.stage1 import Stage1TrainConfig, train_stage1
from ifdl.train.common import OptimizerConfig, ScheduleConfig
from helpers import F64, directional_fd, fixture_tensors, max_rel_error, module_fd, tiny_stage1_config


def test_dense_features_shape_and_determinism():
    torch.manual_seed(0)
    provider = DenseFeatureEncoder(MaskDecoderConfig())
    x = torch.rand(3, 64, 64)
    a, b = dense_features(x, provider), dense_features(x, provider)
    assert a.shape == (64, 16, 16)
    assert torch.equal(a, b)
    assert provider.frozen


def test_dense_features_shape_mismatch():
    with pytest.raises(ValueError):
        dense_features(torch.rand(3, 32, 32), DenseFeatureEncoder(MaskDecoderConfig()))


def test_resize_option_keeps_grid():
    cfg = MaskDecoderConfig(image_size=48, resize_to=64)
    feats = dense_features(torch.rand(2, 3, 48, 48), DenseFeatureEncoder(cfg))
    assert feats.shape == (2, 64, 16, 16)


@pytest.mark.parametrize("size", [32, 48, 64])
def test_decoder_output_matches_image_size(size):
    cfg = MaskDecoderConfig(image_size=size)
    feats = dense_features(torch.rand(2, 3, size, size), DenseFeatureEncoder(cfg))
    logits = decode_mask(feats, torch.randn(2, 256), MaskDecoder(cfg))
    assert logits.shape == (2, size, size)
    assert torch.isfinite(logits).all()


def test_stage1_model_resolution_with_resize():
    from ifdl.encoder import EncoderConfig
    from ifdl.model import Stage1Config

    cfg = Stage1Config(
        encoder=EncoderConfig(image_size=48, patch_size=8, embed_dim=32),
        decoder=MaskDecoderConfig(image_size=48, resize_to=64),
    )
    _, mask_logits = Stage1Model(cfg)(torch.rand(2, 3, 48, 48))
    assert mask_logits.shape == (2, 48, 48)


def test_decoder_prompt_dependence():
    torch.manual_seed(1)
    cfg = MaskDecoderConfig()
    feats = dense_features(torch.rand(3, 64, 64), DenseFeatureEncoder(cfg))
    dec = MaskDecoder(cfg)
    p1, p2 = torch.randn(256), torch.randn(256)
    assert torch.equal(decode_mask(feats, p1, dec), decode_mask(feats, p1.clone(), dec))
    assert not torch.equal(decode_mask(feats, p1, dec), decode_mask(feats, p2, dec))


def test_decoder_dimension_mismatch():
    cfg = MaskDecoderConfig()
    feats = dense_features(torch.rand(3, 64, 64), DenseFeatureEncoder(cfg))
    with pytest.raises(ValueError):
        decode_mask(feats, torch.randn(128), MaskDecoder(cfg))


def test_decoder_gradient_wrt_prompt():
    torch.manual_seed(2)
    cfg = MaskDecoderConfig(image_size=32)
    feats = dense_features(torch.rand(3, 32, 32, dtype=F64), DenseFeatureEncoder(cfg).to(F64))
    dec = MaskDecoder(cfg).to(F64)
    prompt = torch.randn(256, dtype=F64, requires_grad=True)
    pairs = directional_fd(lambda p: decode_mask(feats, p, dec).mean(), [prompt], probes=20)
    assert max_rel_error(pairs) < 1e-4


def test_decoder_gradient_wrt_parameters():
    torch.manual_seed(3)
    cfg = MaskDecoderConfig(image_size=32, feature_dim=32, prompt_dim=64, upscale_dims=(16, 8))
    feats = dense_features(torch.rand(2, 3, 32, 32, dtype=F64), DenseFeatureEncoder(cfg).to(F64))
    dec = MaskDecoder(cfg).to(F64)
    prompt = torch.randn(2, 64, dtype=F64)
    probe = torch.randn(2, 32, 32, dtype=F64)

    def loss():
        return (dec(feats, prompt) * probe).sum()

    params = [p for p in dec.parameters()]
    assert max_rel_error(module_fd(dec, loss, params, probes=20, seed=4)) < 1e-4


def test_binarize_boundary_conventions():
    assert binarize(torch.zeros(4, 4)).all()
    assert not binarize(torch.full((4, 4), -10.0)).any()
    with pytest.raises(ValueError):
        binarize(torch.zeros(2, 2), threshold=1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.99))
def test_binarize_matches_per_pixel_sigmoid(seed, threshold):
    z = torch.randn(6, 7, generator=torch.Generator().manual_seed(seed), dtype=F64) * 4
    got = binarize(z, threshold)
    zl = z.tolist()
    for i in range(6):
        for j in range(7):
            assert got[i, j] == (1.0 / (1.0 + np.exp(-zl[i][j])) >= threshold)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.98), st.floats(0.0, 0.98))
def test_binarize_monotone_in_threshold(seed, t1, gap):
    t2 = min(0.99, t1 + gap)
    z = torch.randn(8, 8, generator=torch.Generator().manual_seed(seed))
    low, high = binarize(z, t1), binarize(z, t2)
    assert not (high & ~low).any()


def test_frozen_provider_untouched_by_training(tmp_path):
    data = fixture_tensors(tmp_path, counts=(3, 3, 3))
    model = Stage1Model.build(tiny_stage1_config(), seed=0, dtype=F64)
    before = {k: v.clone() for k, v in model.dense.state_dict().items()}
    others = {k: v.clone() for k, v in model.decoder.state_dict().items()}
    cfg = Stage1TrainConfig(
        optimizer=OptimizerConfig(learning_rate=1e-2),
        schedule=ScheduleConfig(total_steps=4, warmup_steps=1),
        batch_size=3,
        accum=1,
    )
    train_stage1(data, model, cfg)
    after = model.dense.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)
    assert any(not torch.equal(others[k], v) for k, v in model.decoder.state_dict().items())


def test_unfrozen_provider_does_train(tmp_path):
    data = fixture_tensors(tmp_path, counts=(2, 2, 2))
    model = Stage1Model.build(tiny_stage1_config(), seed=0, dtype=F64)
    model.dense.set_frozen(False)
    before = {k: v.clone() for k, v in model.dense.state_dict().items()}
    cfg = Stage1TrainConfig(schedule=ScheduleConfig(total_steps=3, warmup_steps=1), batch_size=2, accum=1)
    train_stage1(data, model, cfg)
    assert any(not torch.equal(before[k], v) for k, v in model.dense.state_dict().items())

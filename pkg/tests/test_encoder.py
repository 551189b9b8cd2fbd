from __future__ import annotations

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ifdl.encoder import EncoderConfig, PatchEncoder, encode, patchify, sincos_2d, unpatchify
from helpers import F64, directional_fd, max_rel_error, module_fd


def test_patchify_single_patch():
    img = torch.arange(12, dtype=F64).reshape(3, 2, 2)
    out = patchify(img, 2)
    assert out.shape == (1, 12)
    assert out[0].tolist() == img.flatten().tolist()


def test_patchify_row_major_layout():
    img = torch.arange(48, dtype=F64).reshape(3, 4, 4)
    out = patchify(img, 2)
    assert out.shape == (4, 12)
    assert torch.equal(out[0], img[:, :2, :2].flatten())
    assert torch.equal(out[1], img[:, :2, 2:].flatten())
    assert torch.equal(out[2], img[:, 2:, :2].flatten())
    assert torch.equal(out[3], img[:, 2:, 2:].flatten())


def test_patchify_indivisible():
    with pytest.raises(ValueError):
        patchify(torch.zeros(3, 5, 4), 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 2, 4, 8]), st.integers(1, 3))
def test_unpatchify_round_trip(seed, p, batch):
    x = torch.rand(batch, 3, 8, 8, generator=torch.Generator().manual_seed(seed), dtype=F64)
    assert torch.equal(unpatchify(patchify(x, p), p, 8, 8), x)


def test_encoder_default_shape_and_determinism():
    torch.manual_seed(0)
    enc = PatchEncoder(EncoderConfig())
    x = torch.rand(3, 64, 64)
    a, b = encode(x, enc), encode(x, enc)
    assert a.cls_token.shape == (64,)
    assert a.patch_tokens.shape == (64, 64)
    assert torch.cat([a.cls_token[None], a.patch_tokens]).shape == (65, 64)
    assert torch.equal(a.cls_token, b.cls_token) and torch.equal(a.patch_tokens, b.patch_tokens)
    assert torch.isfinite(a.patch_tokens).all()


@pytest.mark.parametrize("size, patch", [(32, 8), (32, 4), (48, 16)])
def test_encoder_token_count(size, patch):
    enc = PatchEncoder(EncoderConfig(image_size=size, patch_size=patch, embed_dim=32))
    out = enc(torch.rand(2, 3, size, size))
    assert out.patch_tokens.shape == (2, (size // patch) ** 2, 32)


def test_encoder_rejects_wrong_size_and_nonfinite():
    enc = PatchEncoder(EncoderConfig())
    with pytest.raises(ValueError):
        encode(torch.rand(3, 32, 32), enc)
    with torch.no_grad():
        enc.patch_embed.weight[0, 0] = float("nan")
    with pytest.raises(ValueError, match="non-finite"):
        encode(torch.rand(3, 64, 64), enc)


@pytest.mark.parametrize("kwargs", [dict(image_size=60), dict(embed_dim=66, heads=4), dict(pos_init="x")])
def test_encoder_config_validation(kwargs):
    with pytest.raises(ValueError):
        EncoderConfig(**kwargs)


def test_sincos_table():
    t = sincos_2d(3, 8)
    assert t.shape == (9, 8)
    # position (row 1, col 2), first frequency is 1
    row = t[1 * 3 + 2]
    assert row[0].item() == pytest.approx(torch.sin(torch.tensor(1.0, dtype=F64)).item(), abs=1e-15)
    assert row[4].item() == pytest.approx(torch.sin(torch.tensor(2.0, dtype=F64)).item(), abs=1e-15)


def test_trainable_flag():
    enc = PatchEncoder(EncoderConfig(trainable=False))
    assert not enc.trainable
    enc.set_trainable(True)
    assert all(p.requires_grad for p in enc.parameters())


def test_encoder_gradient_vs_finite_differences():
    torch.manual_seed(1)
    enc = PatchEncoder(EncoderConfig(image_size=16, patch_size=4, embed_dim=16, heads=2)).to(F64)
    x = torch.rand(3, 16, 16, dtype=F64)
    probe = torch.randn(16, 16, dtype=F64)

    def loss():
        out = enc(x)
        return (out.patch_tokens * probe).sum() + out.cls_token.sum()

    for name, param in enc.named_parameters():
        pairs = module_fd(enc, loss, [param], probes=20, seed=len(name))
        assert max_rel_error(pairs) < 1e-4, name


def test_encoder_input_gradient():
    torch.manual_seed(3)
    enc = PatchEncoder(EncoderConfig(image_size=16, patch_size=4, embed_dim=16, heads=2)).to(F64)
    x = torch.rand(3, 16, 16, dtype=F64, requires_grad=True)
    # a random linear read-out; squared LayerNorm outputs would be nearly constant
    probe = torch.randn(16, 16, dtype=F64)
    pairs = directional_fd(lambda img: (enc(img).patch_tokens * probe).sum(), [x])
    assert max_rel_error(pairs) < 1e-4

"""Independent oracles shared by the test modules."""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Sequence

import torch

from ifdl.data import FixtureConfig, generate_fixture, load_manifest
from ifdl.encoder import EncoderConfig
from ifdl.maskdec import MaskDecoderConfig
from ifdl.model import Stage1Config
from ifdl.train.common import load_tensors

F64 = torch.float64


def directional_fd(
    f: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    probes: int = 20,
    eps: float = 1e-6,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """Autograd directional derivatives vs central differences along random directions.

    ``inputs`` must be float64 leaf tensors with ``requires_grad``. Returns one
    (analytic, numeric) pair per probe.
    """
    out = f(*inputs)
    grads = torch.autograd.grad(out, list(inputs))
    g = torch.Generator().manual_seed(seed)
    pairs = []
    for _ in range(probes):
        dirs = [torch.randn(x.shape, generator=g, dtype=F64) for x in inputs]
        analytic = float(sum((gr * d).sum() for gr, d in zip(grads, dirs)))
        with torch.no_grad():
            plus = f(*[x + eps * d for x, d in zip(inputs, dirs)])
            minus = f(*[x - eps * d for x, d in zip(inputs, dirs)])
        pairs.append((analytic, float(plus - minus) / (2 * eps)))
    return pairs


def max_rel_error(pairs: Sequence[tuple[float, float]]) -> float:
    return max(abs(a - n) / max(abs(a), abs(n)) for a, n in pairs)


def module_fd(module: torch.nn.Module, loss_fn: Callable[[], torch.Tensor], params, probes: int = 20, seed: int = 0):
    """Directional checks on module parameters: ``loss_fn`` reads the live module."""
    params = list(params)
    originals = [p.detach().clone() for p in params]

    def f(*values):
        for p, v in zip(params, values):
            p.copy_(v)
        return loss_fn()

    out = loss_fn()
    grads = torch.autograd.grad(out, params)
    g = torch.Generator().manual_seed(seed)
    pairs = []
    eps = 1e-6
    for _ in range(probes):
        dirs = [torch.randn(p.shape, generator=g, dtype=F64) for p in params]
        analytic = float(sum((gr * d).sum() for gr, d in zip(grads, dirs)))
        with torch.no_grad():
            plus = f(*[o + eps * d for o, d in zip(originals, dirs)])
            minus = f(*[o - eps * d for o, d in zip(originals, dirs)])
        pairs.append((analytic, float(plus - minus) / (2 * eps)))
    with torch.no_grad():
        for p, o in zip(params, originals):
            p.copy_(o)
    return pairs


def tiny_stage1_config(size: int = 32) -> Stage1Config:
    return Stage1Config(
        encoder=EncoderConfig(image_size=size, patch_size=8, embed_dim=32, depth=1, heads=4),
        decoder=MaskDecoderConfig(image_size=size, feature_dim=32, prompt_dim=64, upscale_dims=(16, 8)),
        prompt_heads=4,
    )


def make_fixture(root: Path, counts=(4, 4, 4), size: int = 32, seed: int = 5):
    generate_fixture(FixtureConfig(image_size=size, counts=counts), seed, root)
    return load_manifest(root / "manifest.jsonl")


def fixture_tensors(root: Path, counts=(4, 4, 4), size: int = 32, seed: int = 5, dtype=F64):
    return load_tensors(make_fixture(root, counts, size, seed), dtype)

"""Prompt-conditioned mask decoder over a frozen dense feature map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ifdl.encoder import MLP


@dataclass(frozen=True)
class MaskDecoderConfig:
    image_size: int = 64
    stride: int = 4
    feature_dim: int = 64
    prompt_dim: int = 256
    heads: int = 4
    upscale_dims: tuple[int, int] = (32, 16)
    frozen_features: bool = True
    # Working resolution of the dense provider; None keeps the native image size.
    resize_to: int | None = None

    def __post_init__(self):
        work = self.working_size
        if work % self.stride:
            raise ValueError(f"working size {work} not divisible by stride {self.stride}")
        if self.stride != 4:
            raise ValueError("decoder upsamples by exactly 4 (two x2 stages); stride must be 4")
        if self.feature_dim % self.heads:
            raise ValueError("feature_dim must be divisible by heads")

    @property
    def working_size(self) -> int:
        return self.resize_to or self.image_size

    @property
    def grid(self) -> int:
        return self.working_size // self.stride


class LayerNorm2d(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        u = x.mean(1, keepdim=True)
        s = (x - u).pow(2).mean(1, keepdim=True)
        x = (x - u) / torch.sqrt(s + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class DenseFeatureEncoder(nn.Module):
    """Stride-4 convolutional feature provider; frozen unless explicitly unfrozen."""

    def __init__(self, config: MaskDecoderConfig = MaskDecoderConfig()):
        super().__init__()
        self.config = config
        c = config.feature_dim
        self.stem = nn.Conv2d(3, c, kernel_size=config.stride, stride=config.stride)
        self.mix = nn.Sequential(nn.Conv2d(c, c, 3, padding=1), nn.GELU(), nn.Conv2d(c, c, 1))
        self.set_frozen(config.frozen_features)

    def set_frozen(self, frozen: bool) -> None:
        for p in self.parameters():
            p.requires_grad_(not frozen)

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """(B, 3, S, S) -> (B, C, S/4, S/4)."""
        size = self.config.working_size
        if image.shape[-2:] != (size, size):
            image = F.interpolate(image, size=(size, size), mode="bilinear", align_corners=False)
        x = self.stem(image)
        return x + self.mix(x)


def dense_features(image: torch.Tensor, provider: DenseFeatureEncoder) -> torch.Tensor:
    cfg = provider.config
    if image.shape[-3:] != (3, cfg.image_size, cfg.image_size):
        raise ValueError(f"expected (B, 3, {cfg.image_size}, {cfg.image_size}) image, got {tuple(image.shape)}")
    squeeze = image.dim() == 3
    out = provider(image.unsqueeze(0) if squeeze else image)
    return out[0] if squeeze else out


class RefinementBlock(nn.Module):
    """Prompt token reads from the grid, then writes back and the grid is refined locally."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm_t = nn.LayerNorm(dim)
        self.norm_f = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = MLP(dim, 2 * dim)
        self.norm_back = nn.LayerNorm(dim)
        self.back = nn.Linear(dim, dim)
        self.norm_conv = LayerNorm2d(dim)
        self.conv = nn.Sequential(nn.Conv2d(dim, dim, 3, padding=1), nn.GELU(), nn.Conv2d(dim, dim, 1))

    def forward(self, token: torch.Tensor, feats: torch.Tensor, pos: torch.Tensor, grid: int):
        b, n, d = feats.shape
        hd = d // self.heads
        keys_in = self.norm_f(feats) + pos
        q = self.q(self.norm_t(token)).reshape(b, self.heads, 1, hd)
        k = self.k(keys_in).reshape(b, n, self.heads, hd).transpose(1, 2)
        v = self.v(self.norm_f(feats)).reshape(b, n, self.heads, hd).transpose(1, 2)
        attn = (q @ k.transpose(-1, -2) / hd**0.5).softmax(-1)
        token = token + self.o((attn @ v).reshape(b, d))
        token = token + self.mlp(self.norm_mlp(token))
        # a single key makes grid-to-token attention weights identically 1
        feats = feats + self.back(self.norm_back(token)).unsqueeze(1)
        spatial = feats.transpose(1, 2).reshape(b, d, grid, grid)
        spatial = spatial + self.conv(self.norm_conv(spatial))
        return token, spatial.reshape(b, d, n).transpose(1, 2)


class MaskDecoder(nn.Module):
    def __init__(self, config: MaskDecoderConfig = MaskDecoderConfig()):
        super().__init__()
        self.config = config
        c = config.feature_dim
        u1, u2 = config.upscale_dims
        self.prompt_in = nn.Linear(config.prompt_dim, c)
        self.pos = nn.Parameter(torch.randn(config.grid**2, c) * 0.02)
        self.blocks = nn.ModuleList(RefinementBlock(c, config.heads) for _ in range(2))
        self.up = nn.Sequential(
            nn.ConvTranspose2d(c, u1, 2, stride=2),
            LayerNorm2d(u1),
            nn.GELU(),
            nn.ConvTranspose2d(u1, u2, 2, stride=2),
            nn.GELU(),
        )
        self.hyper = MLP(c, c, u2)
        self.out_bias = nn.Parameter(torch.zeros(()))

    def forward(self, features: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        """features (B, C, h, w), prompt (B, prompt_dim) -> logits (B, 4h, 4w)."""
        b, c, h, w = features.shape
        if prompt.shape[-1] != self.config.prompt_dim:
            raise ValueError(f"prompt dim {prompt.shape[-1]} != decoder prompt_dim {self.config.prompt_dim}")
        if c != self.config.feature_dim or h != self.config.grid or w != self.config.grid:
            raise ValueError(f"feature map {tuple(features.shape[1:])} does not match decoder config")
        token = self.prompt_in(prompt)
        feats = features.flatten(2).transpose(1, 2)
        for block in self.blocks:
            token, feats = block(token, feats, self.pos, h)
        up = self.up(feats.transpose(1, 2).reshape(b, c, h, w))
        return torch.einsum("bchw,bc->bhw", up, self.hyper(token)) + self.out_bias


def decode_mask(features: torch.Tensor, prompt: torch.Tensor, decoder: MaskDecoder) -> torch.Tensor:
    squeeze = features.dim() == 3
    if squeeze:
        features, prompt = features.unsqueeze(0), prompt.unsqueeze(0)
    out = decoder(features, prompt)
    return out[0] if squeeze else out


def binarize(logits, threshold: float = 0.5) -> np.ndarray:
    """Pixel is tampered iff sigmoid(logit) >= threshold (so logit >= 0 at 0.5)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    z = torch.as_tensor(logits).detach().to(torch.float64)
    return (torch.sigmoid(z) >= threshold).cpu().numpy()


def sigmoid_probs(logits) -> np.ndarray:
    return torch.sigmoid(torch.as_tensor(logits).detach().to(torch.float64)).cpu().numpy()

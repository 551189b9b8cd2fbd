"""Patch-transformer image encoder: one class token plus N patch tokens."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    trainable: bool = True
    pos_init: str = "sincos"  # "sincos" (fixed 2D sin-cos pattern, scaled) or "normal" (std 0.02)
    pos_scale: float = 0.25

    def __post_init__(self):
        if self.pos_init not in ("sincos", "normal"):
            raise ValueError(f"unknown pos_init {self.pos_init!r}")
        if self.pos_init == "sincos" and self.embed_dim % 4:
            raise ValueError("sincos positions need embed_dim divisible by 4")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


def sincos_2d(grid: int, dim: int) -> torch.Tensor:
    """(grid*grid, dim) row-major 2D sin-cos table; first half encodes rows, second half columns."""
    q = dim // 4
    omega = 1.0 / 10000 ** (torch.arange(q, dtype=torch.float64) / q)
    ys, xs = torch.meshgrid(torch.arange(grid, dtype=torch.float64), torch.arange(grid, dtype=torch.float64), indexing="ij")
    oy = ys.reshape(-1, 1) * omega
    ox = xs.reshape(-1, 1) * omega
    return torch.cat([oy.sin(), oy.cos(), ox.sin(), ox.cos()], dim=1)


@dataclass
class TokenSequence:
    cls_token: torch.Tensor  # (..., D)
    patch_tokens: torch.Tensor  # (..., N, D)


def patchify(image: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(..., C, H, W) -> (..., N, C*p*p), patches in row-major order.

    Each patch vector is its C×p×p block flattened channel-first.
    """
    *lead, c, h, w = image.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"image {h}x{w} not divisible by patch size {p}")
    x = image.reshape(*lead, c, h // p, p, w // p, p)
    nd = len(lead)
    # (..., gh, gw, C, p, p)
    x = x.permute(*range(nd), nd + 1, nd + 3, nd, nd + 2, nd + 4)
    return x.reshape(*lead, (h // p) * (w // p), c * p * p)


def unpatchify(patches: torch.Tensor, patch_size: int, height: int, width: int, channels: int = 3) -> torch.Tensor:
    *lead, n, _ = patches.shape
    p = patch_size
    gh, gw = height // p, width // p
    if gh * gw != n:
        raise ValueError(f"{n} patches do not tile a {height}x{width} image at patch size {p}")
    nd = len(lead)
    x = patches.reshape(*lead, gh, gw, channels, p, p)
    x = x.permute(*range(nd), nd + 2, nd, nd + 3, nd + 1, nd + 4)
    return x.reshape(*lead, channels, height, width)


class MLP(nn.Module):
    def __init__(self, dim: int, hidden: int, out: int | None = None):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, out or dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4, causal: bool = False):
        super().__init__()
        self.heads = heads
        self.causal = causal
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, mlp_ratio * dim)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        *lead, t, d = x.shape
        hd = d // self.heads
        q, k, v = self.qkv(x).reshape(*lead, t, 3, self.heads, hd).unbind(-3)
        q, k, v = (z.transpose(-3, -2) for z in (q, k, v))  # (..., heads, T, hd)
        scores = q @ k.transpose(-1, -2) / hd**0.5
        if self.causal:
            mask = torch.ones(t, t, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(mask, float("-inf"))
        out = scores.softmax(-1) @ v
        return self.proj(out.transpose(-3, -2).reshape(*lead, t, d))

    def forward(self, x):
        x = x + self.attention(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchEncoder(nn.Module):
    def __init__(self, config: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.patch_embed = nn.Linear(3 * config.patch_size**2, d)
        self.cls_token = nn.Parameter(torch.zeros(d))
        self.pos_embed = nn.Parameter(torch.zeros(config.num_patches, d))
        self.blocks = nn.ModuleList(Block(d, config.heads) for _ in range(config.depth))
        self.norm = nn.LayerNorm(d)
        nn.init.normal_(self.cls_token, std=0.02)
        if config.pos_init == "sincos":
            grid = config.image_size // config.patch_size
            with torch.no_grad():
                self.pos_embed.copy_(config.pos_scale * sincos_2d(grid, d))
        else:
            nn.init.normal_(self.pos_embed, std=0.02)
        self.set_trainable(config.trainable)

    def set_trainable(self, trainable: bool) -> None:
        for p in self.parameters():
            p.requires_grad_(trainable)

    @property
    def trainable(self) -> bool:
        return any(p.requires_grad for p in self.parameters())

    def forward(self, image: torch.Tensor) -> TokenSequence:
        size = self.config.image_size
        if image.shape[-3:] != (3, size, size):
            raise ValueError(f"expected (..., 3, {size}, {size}) image, got {tuple(image.shape)}")
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        tokens = self.patch_embed(patchify(image, self.config.patch_size)) + self.pos_embed
        cls = self.cls_token.expand(tokens.shape[0], 1, -1)
        x = torch.cat([cls, tokens], dim=1)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        if squeeze:
            x = x[0]
        return TokenSequence(cls_token=x[..., 0, :], patch_tokens=x[..., 1:, :])


def check_finite_params(module: nn.Module) -> None:
    for name, p in module.named_parameters():
        if not torch.isfinite(p).all():
            raise ValueError(f"non-finite values in parameter {name}")


def encode(image: torch.Tensor, encoder: PatchEncoder) -> TokenSequence:
    """Run the encoder after validating its parameters."""
    check_finite_params(encoder)
    return encoder(image.to(encoder.patch_embed.weight.dtype))

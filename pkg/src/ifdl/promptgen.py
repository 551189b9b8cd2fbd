"""Stage-1 heads: class-token classifier and the logits-conditioned segmentation prompt."""

from __future__ import annotations

import torch
from torch import nn


class ClassHead(nn.Module):
    """Affine map from the class token to K class logits."""

    def __init__(self, dim: int, num_classes: int = 3):
        super().__init__()
        self.linear = nn.Linear(dim, num_classes)

    def forward(self, cls_token: torch.Tensor) -> torch.Tensor:
        if cls_token.shape[-1] != self.linear.in_features:
            raise ValueError(f"class token has dim {cls_token.shape[-1]}, head expects {self.linear.in_features}")
        return self.linear(cls_token)


def classify(cls_token: torch.Tensor, head: ClassHead) -> torch.Tensor:
    return head(cls_token)


class PromptAttention(nn.Module):
    """Turns class logits and patch tokens into one prompt embedding.

    The raw logits are projected to a single query; patch tokens are projected into
    the same space and serve as keys and values of a multi-head attention layer.
    The attention output is added back onto every projected patch feature and the
    result is average-pooled over patches.
    """

    def __init__(self, num_classes: int, token_dim: int, prompt_dim: int = 256, heads: int = 4):
        super().__init__()
        if prompt_dim % heads:
            raise ValueError(f"prompt_dim {prompt_dim} not divisible by heads {heads}")
        self.heads = heads
        self.prompt_dim = prompt_dim
        self.proj_logits = nn.Linear(num_classes, prompt_dim)
        self.proj_patches = nn.Linear(token_dim, prompt_dim)
        self.q = nn.Linear(prompt_dim, prompt_dim)
        self.k = nn.Linear(prompt_dim, prompt_dim)
        self.v = nn.Linear(prompt_dim, prompt_dim)
        self.out = nn.Linear(prompt_dim, prompt_dim)

    def _check(self, logits: torch.Tensor, patch_tokens: torch.Tensor) -> None:
        if patch_tokens.shape[-2] == 0:
            raise ValueError("need at least one patch token")
        if logits.shape[-1] != self.proj_logits.in_features:
            raise ValueError(f"logits have {logits.shape[-1]} classes, module expects {self.proj_logits.in_features}")
        if patch_tokens.shape[-1] != self.proj_patches.in_features:
            raise ValueError(
                f"patch tokens have dim {patch_tokens.shape[-1]}, module expects {self.proj_patches.in_features}"
            )

    def attend(self, logits: torch.Tensor, projected: torch.Tensor) -> torch.Tensor:
        """Single-query multi-head attention; returns (..., prompt_dim)."""
        *lead, n, d = projected.shape
        hd = d // self.heads
        q = self.q(self.proj_logits(logits)).reshape(*lead, self.heads, 1, hd)
        k = self.k(projected).reshape(*lead, n, self.heads, hd).transpose(-3, -2)
        v = self.v(projected).reshape(*lead, n, self.heads, hd).transpose(-3, -2)
        weights = (q @ k.transpose(-1, -2) / hd**0.5).softmax(-1)  # (..., heads, 1, N)
        return self.out((weights @ v).reshape(*lead, d))

    def forward(self, logits: torch.Tensor, patch_tokens: torch.Tensor) -> torch.Tensor:
        self._check(logits, patch_tokens)
        projected = self.proj_patches(patch_tokens)
        enhanced = projected + self.attend(logits, projected).unsqueeze(-2)
        return enhanced.mean(-2)


def make_prompt(logits: torch.Tensor, patch_tokens: torch.Tensor, module: PromptAttention) -> torch.Tensor:
    return module(logits, patch_tokens)

"""Stage-1 detection + localization model assembled from its parts."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn
from torch.nn import functional as F

from ifdl.data import NUM_CLASSES
from ifdl.encoder import EncoderConfig, PatchEncoder
from ifdl.maskdec import DenseFeatureEncoder, MaskDecoder, MaskDecoderConfig
from ifdl.promptgen import ClassHead, PromptAttention


@dataclass(frozen=True)
class Stage1Config:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: MaskDecoderConfig = field(default_factory=MaskDecoderConfig)
    num_classes: int = NUM_CLASSES
    prompt_heads: int = 4

    def __post_init__(self):
        if self.encoder.image_size != self.decoder.image_size:
            raise ValueError("encoder and decoder must agree on image_size")


class Stage1Model(nn.Module):
    def __init__(self, config: Stage1Config = Stage1Config()):
        super().__init__()
        self.config = config
        enc = config.encoder
        self.encoder = PatchEncoder(enc)
        self.class_head = ClassHead(enc.embed_dim, config.num_classes)
        self.prompt = PromptAttention(
            config.num_classes, enc.embed_dim, config.decoder.prompt_dim, config.prompt_heads
        )
        self.dense = DenseFeatureEncoder(config.decoder)
        self.decoder = MaskDecoder(config.decoder)

    @classmethod
    def build(cls, config: Stage1Config = Stage1Config(), seed: int = 0, dtype: torch.dtype = torch.float32):
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            model = cls(config)
        return model.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.class_head.linear.weight.dtype

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """images (B, 3, H, W) in [0, 1] -> class logits (B, K), mask logits (B, H, W)."""
        tokens = self.encoder(images)
        class_logits = self.class_head(tokens.cls_token)
        prompt = self.prompt(class_logits, tokens.patch_tokens)
        mask_logits = self.decoder(self.dense(images), prompt)
        if mask_logits.shape[-2:] != images.shape[-2:]:
            mask_logits = F.interpolate(
                mask_logits.unsqueeze(1), size=images.shape[-2:], mode="bilinear", align_corners=False
            )[:, 0]
        return class_logits, mask_logits

    @torch.no_grad()
    def predict(self, images: torch.Tensor, batch_size: int = 32) -> tuple[torch.Tensor, torch.Tensor]:
        outs_c, outs_m = [], []
        for start in range(0, images.shape[0], batch_size):
            c, m = self(images[start : start + batch_size].to(self.dtype))
            outs_c.append(c)
            outs_m.append(m)
        return torch.cat(outs_c), torch.cat(outs_m)

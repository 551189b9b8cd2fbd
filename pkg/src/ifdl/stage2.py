"""Region-aware visual feature blending and the explanation generator."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ifdl.data import FOREIGN_COLORS, SECTION_NAMES, SHAPES, ExplanationSections
from ifdl.encoder import Block, EncoderConfig, PatchEncoder, TokenSequence
from ifdl.losses import sequence_ce_loss

# ---------------------------------------------------------------------------
# vocabulary

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SECTION_TOKENS = tuple(f"<{name}>" for name in SECTION_NAMES)

_WORDS = (
    "tampered image with a pasted the region of over background has noisy texture and sharp edges "
    "unlike smooth scene was in top bottom left right real authentic fully synthetic entire no "
    "manipulation describe forgery"
).split()

VOCAB: tuple[str, ...] = (PAD, BOS, EOS, UNK, *SECTION_TOKENS, *_WORDS, *SHAPES, *FOREIGN_COLORS)
TOKEN_ID = {tok: i for i, tok in enumerate(VOCAB)}
PAD_ID, BOS_ID, EOS_ID, UNK_ID = (TOKEN_ID[t] for t in (PAD, BOS, EOS, UNK))


def encode_text(words: str) -> list[int]:
    return [TOKEN_ID.get(w, UNK_ID) for w in words.lower().split()]


def explanation_to_tokens(expl: ExplanationSections) -> list[int]:
    """Section-tagged token stream, terminated by eos."""
    out: list[int] = []
    for tag, text in zip(SECTION_TOKENS, expl.as_tuple()):
        out.append(TOKEN_ID[tag])
        out.extend(encode_text(text))
    out.append(EOS_ID)
    return out


def tokens_to_explanation(tokens: Sequence[int]) -> ExplanationSections:
    """Inverse of :func:`explanation_to_tokens`; text before the first tag is dropped."""
    sections: dict[str, list[str]] = {name: [] for name in SECTION_NAMES}
    current = None
    for t in tokens:
        t = int(t)
        if t == EOS_ID:
            break
        tok = VOCAB[t] if 0 <= t < len(VOCAB) else UNK
        if tok in SECTION_TOKENS:
            current = SECTION_NAMES[SECTION_TOKENS.index(tok)]
        elif current is not None and tok not in (PAD, BOS):
            sections[current].append(tok)
    return ExplanationSections(**{k: " ".join(v) for k, v in sections.items()})


# ---------------------------------------------------------------------------
# region-aware blending


class MaskSource(Enum):
    GROUND_TRUTH = "ground_truth"
    PREDICTED = "predicted"


@dataclass(frozen=True)
class BlendConfig:
    alpha: float = 0.5
    mask_source: MaskSource = MaskSource.GROUND_TRUTH

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass
class VisualTokens:
    tokens: torch.Tensor  # (..., N, D) blended patch tokens
    cls_token: torch.Tensor | None = None  # (..., D) from the unmasked image

    def prefix(self) -> torch.Tensor:
        if self.cls_token is None:
            return self.tokens
        return torch.cat([self.cls_token.unsqueeze(-2), self.tokens], dim=-2)


def apply_mask(image: torch.Tensor, mask) -> torch.Tensor:
    """x ⊙ M: zero every pixel outside the mask."""
    mask = torch.as_tensor(np.asarray(mask) if not torch.is_tensor(mask) else mask)
    if image.shape[-2:] != mask.shape[-2:]:
        raise ValueError(f"mask {tuple(mask.shape)} does not match image {tuple(image.shape)}")
    return image * mask.to(image.dtype).unsqueeze(-3)


def region_enhance(image: torch.Tensor, mask, alpha, encoder: PatchEncoder) -> VisualTokens:
    """alpha * enc(x) + (1 - alpha) * enc(x ⊙ M) over patch tokens; the class token of enc(x) passes through."""
    if not torch.is_tensor(alpha) and not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    masked = apply_mask(image, mask)
    both = encoder(torch.stack([image, masked]))
    full, part = both.patch_tokens[0], both.patch_tokens[1]
    return VisualTokens(tokens=alpha * full + (1 - alpha) * part, cls_token=both.cls_token[0])


def region_enhance_batch(images: torch.Tensor, masks: torch.Tensor, alpha, encoder: PatchEncoder) -> VisualTokens:
    b = images.shape[0]
    both: TokenSequence = encoder(torch.cat([images, apply_mask(images, masks)]))
    full, part = both.patch_tokens[:b], both.patch_tokens[b:]
    return VisualTokens(tokens=alpha * full + (1 - alpha) * part, cls_token=both.cls_token[:b])


def feature_cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@torch.no_grad()
def bias_diagnostic(encoder: PatchEncoder, image_a: torch.Tensor, image_b: torch.Tensor) -> dict[str, float]:
    """Cosine similarity of two images' global features (class token and mean patch token)."""
    ta, tb = encoder(image_a), encoder(image_b)
    return {
        "cls": feature_cosine(ta.cls_token, tb.cls_token),
        "mean_patch": feature_cosine(ta.patch_tokens.mean(0), tb.patch_tokens.mean(0)),
    }


# ---------------------------------------------------------------------------
# language head


@dataclass(frozen=True)
class LanguageHeadConfig:
    vocab_size: int = 64
    context: int = 160
    dim: int = 64
    depth: int = 2
    heads: int = 4

    def __post_init__(self):
        if self.vocab_size < len(VOCAB):
            raise ValueError(f"vocab_size {self.vocab_size} < {len(VOCAB)} fixture tokens")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")


@dataclass(frozen=True)
class Stage2Config:
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(trainable=False))
    language: LanguageHeadConfig = field(default_factory=LanguageHeadConfig)


class LanguageHead(nn.Module):
    """Causal transformer over [visual prefix][text tokens]."""

    def __init__(self, config: LanguageHeadConfig = LanguageHeadConfig()):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(config.vocab_size, config.dim)
        self.pos = nn.Parameter(torch.randn(config.context, config.dim) * 0.02)
        self.blocks = nn.ModuleList(Block(config.dim, config.heads, causal=True) for _ in range(config.depth))
        self.norm = nn.LayerNorm(config.dim)
        self.lm_head = nn.Linear(config.dim, config.vocab_size)

    def forward(self, prefix: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """prefix (B, P, dim), tokens (B, T) -> logits (B, T, V) for the text positions."""
        p, t = prefix.shape[1], tokens.shape[1]
        if p + t > self.config.context:
            raise ValueError(f"sequence of {p + t} exceeds context {self.config.context}")
        x = torch.cat([prefix, self.embed(tokens)], dim=1) + self.pos[: p + t]
        for block in self.blocks:
            x = block(x)
        return self.lm_head(self.norm(x[:, p:]))


class Stage2Model(nn.Module):
    def __init__(self, config: Stage2Config = Stage2Config()):
        super().__init__()
        self.config = config
        self.encoder = PatchEncoder(config.encoder)
        self.adapter = nn.Linear(config.encoder.embed_dim, config.language.dim)
        self.lm = LanguageHead(config.language)

    @classmethod
    def build(cls, config: Stage2Config = Stage2Config(), seed: int = 0, dtype: torch.dtype = torch.float32):
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            model = cls(config)
        return model.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.adapter.weight.dtype

    def visual(self, images: torch.Tensor, masks: torch.Tensor, alpha) -> VisualTokens:
        return region_enhance_batch(images, masks, alpha, self.encoder)

    def forward(self, visual: VisualTokens, tokens: torch.Tensor) -> torch.Tensor:
        return self.lm(self.adapter(visual.prefix()), tokens)


def teacher_forcing_batch(
    token_lists: Sequence[Sequence[int]], prompt: Sequence[int] = (BOS_ID,)
) -> tuple[torch.Tensor, torch.Tensor]:
    """Build (inputs, targets) for next-token training; prompt positions are not scored."""
    seqs = [list(prompt) + list(t) for t in token_lists]
    length = max(len(s) for s in seqs) - 1
    inputs = torch.full((len(seqs), length), PAD_ID, dtype=torch.long)
    targets = torch.full((len(seqs), length), PAD_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        inputs[i, : len(s) - 1] = torch.tensor(s[:-1])
        targets[i, : len(s) - 1] = torch.tensor(s[1:])
        targets[i, : len(prompt) - 1] = PAD_ID
    return inputs, targets


def stage2_loss(
    model: Stage2Model,
    images: torch.Tensor,
    masks: torch.Tensor,
    inputs: torch.Tensor,
    targets: torch.Tensor,
    alpha: float = 0.5,
    norm: float | None = None,
) -> torch.Tensor:
    """Teacher-forced sequence CE of the explanation given blended visual tokens."""
    if model.encoder.trainable:
        visual = model.visual(images, masks, alpha)
    else:
        with torch.no_grad():
            visual = model.visual(images, masks, alpha)
    logits = model(visual, inputs)
    return sequence_ce_loss(logits, targets, pad_id=PAD_ID, norm=norm)


@torch.no_grad()
def generate_explanation(
    visual: VisualTokens, prompt_tokens: Sequence[int], model: Stage2Model, max_new_tokens: int | None = None
) -> list[int]:
    """Greedy decoding for one sample; always returns a sequence ending in eos."""
    return generate_batch(
        VisualTokens(
            tokens=visual.tokens.unsqueeze(0),
            cls_token=None if visual.cls_token is None else visual.cls_token.unsqueeze(0),
        ),
        prompt_tokens,
        model,
        max_new_tokens,
    )[0]


@torch.no_grad()
def generate_batch(
    visual: VisualTokens, prompt_tokens: Sequence[int], model: Stage2Model, max_new_tokens: int | None = None
) -> list[list[int]]:
    """Greedy decoding until eos or the context limit.

    When the limit is hit before eos, eos is appended so every output terminates.
    """
    context = model.config.language.context
    prefix = model.adapter(visual.prefix())
    b, p = prefix.shape[0], prefix.shape[1]
    if any(not 0 <= t < model.config.language.vocab_size for t in prompt_tokens):
        raise ValueError("prompt token outside the vocabulary")
    budget = context - p - len(prompt_tokens)
    if budget < 1:
        raise ValueError(f"visual prefix ({p}) plus prompt ({len(prompt_tokens)}) fills the context ({context})")
    if max_new_tokens is not None:
        budget = min(budget, max_new_tokens)
    seq = torch.tensor(list(prompt_tokens), dtype=torch.long).repeat(b, 1)
    out: list[list[int]] = [[] for _ in range(b)]
    done = [False] * b
    for _ in range(budget):
        logits = model.lm(prefix, seq)[:, -1]
        nxt = logits.argmax(-1)
        for i in range(b):
            if not done[i]:
                out[i].append(int(nxt[i]))
                done[i] = int(nxt[i]) == EOS_ID
        if all(done):
            break
        seq = torch.cat([seq, nxt[:, None]], dim=1)
    for i in range(b):
        if not done[i]:  # ran out of budget: the last slot becomes eos
            out[i][-1] = EOS_ID
    return out

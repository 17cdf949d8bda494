"""Projection adapters, the causal language model and low-rank adaptation."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from mpoxvlm.nn import Block, init_weights


@dataclass(frozen=True)
class LmConfig:
    dim: int = 256
    depth: int = 4
    heads: int = 4
    max_len: int = 256
    adapter_hidden: int = 256


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 4
    alpha: float = 8.0
    targets: tuple = ("q", "v")


class AdapterMLP(nn.Module):
    """Two-layer MLP with a SiLU between the layers."""

    def __init__(self, d_in: int, hidden: int, d_out: int):
        super().__init__()
        self.fc1 = nn.Linear(d_in, hidden)
        self.fc2 = nn.Linear(hidden, d_out)

    def forward(self, x):
        return self.fc2(F.silu(self.fc1(x)))


class Adapters(nn.Module):
    """W_CLIP maps VL patch features, W_V maps the classifier CLS feature."""

    def __init__(self, d_v: int, hidden: int, d_h: int):
        super().__init__()
        self.d_v, self.d_h = d_v, d_h
        self.clip = AdapterMLP(d_v, hidden, d_h)
        self.cls = AdapterMLP(d_v, hidden, d_h)


def project_clip(adapters: Adapters, features: torch.Tensor) -> torch.Tensor:
    """(k, d_v) -> Z_CLIP of shape (d_h, k); a leading batch dim is carried through."""
    if features.shape[-1] != adapters.d_v or features.dim() not in (2, 3):
        raise ValueError(f"expected features (..., k, {adapters.d_v}), got {tuple(features.shape)}")
    return adapters.clip(features).transpose(-1, -2)


def project_cls(adapters: Adapters, cls_feature: torch.Tensor) -> torch.Tensor:
    """(d_v,) -> Z_V of shape (d_h, 1); a leading batch dim is carried through."""
    if cls_feature.shape[-1] != adapters.d_v or cls_feature.dim() not in (1, 2):
        raise ValueError(f"expected a feature of size {adapters.d_v}, got {tuple(cls_feature.shape)}")
    return adapters.cls(cls_feature).unsqueeze(-1)


class LoRALinear(nn.Module):
    """Frozen base linear map plus a scaled low-rank update (alpha / r) * B @ A."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float, generator: torch.Generator):
        super().__init__()
        if rank <= 0:
            raise ValueError(f"LoRA rank must be positive, got {rank}")
        self.base = base
        self.rank = rank
        self.scale = alpha / rank
        dtype = base.weight.dtype
        self.lora_A = nn.Parameter(torch.empty(rank, base.in_features, dtype=dtype))
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, rank, dtype=dtype))
        bound = 1.0 / math.sqrt(base.in_features)
        with torch.no_grad():
            self.lora_A.uniform_(-bound, bound, generator=generator)
        self.merged = False

    def delta(self) -> torch.Tensor:
        return self.scale * (self.lora_B @ self.lora_A)

    def forward(self, x):
        out = self.base(x)
        if self.merged:
            return out
        return out + self.scale * F.linear(F.linear(x, self.lora_A), self.lora_B)


class DecoderLM(nn.Module):
    def __init__(self, vocab_size: int, cfg: LmConfig):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.tok_emb = nn.Embedding(vocab_size, cfg.dim)
        self.pos_emb = nn.Parameter(torch.zeros(1, cfg.max_len, cfg.dim))
        self.blocks = nn.ModuleList(Block(cfg.dim, cfg.heads, causal=True) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.dim)
        self.head = nn.Linear(cfg.dim, vocab_size, bias=False)

    def forward(self, embeds: torch.Tensor) -> torch.Tensor:
        """(B, L, d_h) input embeddings -> (B, L, V) next-token logits."""
        L = embeds.shape[1]
        if L > self.cfg.max_len:
            raise ValueError(f"sequence length {L} exceeds max_len {self.cfg.max_len}")
        x = embeds + self.pos_emb[:, :L]
        for blk in self.blocks:
            x = blk(x)
        return self.head(self.norm(x))

    def lora_layers(self):
        return [m for m in self.modules() if isinstance(m, LoRALinear)]


def build_lm(vocab_size: int, cfg: LmConfig, seed: int) -> DecoderLM:
    g = torch.Generator().manual_seed(seed)
    lm = DecoderLM(vocab_size, cfg)
    init_weights(lm, g)
    nn.init.normal_(lm.pos_emb, std=0.02, generator=g)
    return lm


def build_adapters(d_v: int, hidden: int, d_h: int, seed: int) -> Adapters:
    g = torch.Generator().manual_seed(seed)
    adapters = Adapters(d_v, hidden, d_h)
    for m in adapters.modules():
        if isinstance(m, nn.Linear):
            bound = 1.0 / math.sqrt(m.in_features)
            nn.init.uniform_(m.weight, -bound, bound, generator=g)
            nn.init.zeros_(m.bias)
    return adapters


def attach_lora(lm: DecoderLM, cfg: LoraConfig, seed: int) -> DecoderLM:
    """Wrap the target attention projections of every block in place."""
    if lm.lora_layers():
        raise ValueError("LoRA adapters are already attached")
    g = torch.Generator().manual_seed(seed)
    for blk in lm.blocks:
        for name in cfg.targets:
            setattr(blk.attn, name, LoRALinear(getattr(blk.attn, name), cfg.rank, cfg.alpha, g))
    return lm


def lora_merge(lm: DecoderLM) -> DecoderLM:
    """Return a copy whose base weights absorb the LoRA update.

    The copy is flagged as merged; merging it again raises.
    """
    layers = lm.lora_layers()
    if not layers:
        raise ValueError("model has no LoRA adapters to merge")
    if any(m.merged for m in layers):
        raise ValueError("LoRA adapters are already merged")
    merged = copy.deepcopy(lm)
    with torch.no_grad():
        for m in merged.lora_layers():
            m.base.weight += m.delta()
            m.merged = True
    return merged

"""Patch tokenizer, the two visual encoders, masked-autoencoder pretraining
and the classifier-only prediction head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from mpoxvlm.nn import Block, init_weights


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    patch: int = 8
    dim: int = 128
    depth: int = 4
    heads: int = 4

    @property
    def tokens(self) -> int:
        if self.image_size % self.patch:
            raise ValueError(f"image_size {self.image_size} not divisible by patch {self.patch}")
        return (self.image_size // self.patch) ** 2


@dataclass(frozen=True)
class MaeConfig:
    mask_ratio: float = 0.75
    dec_dim: int = 64
    dec_depth: int = 2
    dec_heads: int = 4


def num_masked(mask_ratio: float, k: int) -> int:
    if not 0.0 <= mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must lie in [0, 1), got {mask_ratio}")
    return int(round(mask_ratio * k))


def preprocess(image: np.ndarray, target_size: int) -> np.ndarray:
    """Center-crop to a square, then bilinear-resize to ``target_size``."""
    h, w = image.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    crop = image[top : top + s, left : left + s]
    if s == target_size:
        return crop.copy()
    channels = [
        np.asarray(
            Image.fromarray(crop[..., c].astype(np.float32), mode="F").resize(
                (target_size, target_size), Image.BILINEAR
            )
        )
        for c in range(crop.shape[2])
    ]
    return np.clip(np.stack(channels, axis=-1), 0.0, 1.0).astype(image.dtype)


# Per-channel statistics of the default synthetic set, frozen as constants so
# normalisation never depends on which split is loaded.
PIXEL_MEAN = (0.715, 0.546, 0.438)
PIXEL_STD = (0.209, 0.210, 0.206)


def normalize_pixels(images: torch.Tensor) -> torch.Tensor:
    """(B, H, W, C) in [0, 1] -> standardised per channel."""
    mean = images.new_tensor(PIXEL_MEAN)
    std = images.new_tensor(PIXEL_STD)
    return (images - mean) / std


def augment(images: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    """Per-sample random horizontal flip and quarter-turn rotation."""
    b = images.shape[0]
    flips = torch.rand(b, generator=generator) < 0.5
    turns = torch.randint(0, 4, (b,), generator=generator)
    out = torch.where(flips[:, None, None, None], images.flip(2), images)
    return torch.stack([torch.rot90(x, int(k), (0, 1)) for x, k in zip(out, turns)])


def patchify(images: torch.Tensor, patch: int) -> torch.Tensor:
    """(B, H, W, C) -> (B, k, patch*patch*C), patches in row-major order."""
    b, h, w, c = images.shape
    if h % patch or w % patch:
        raise ValueError(f"image size {h}x{w} not divisible by patch size {patch}")
    x = images.reshape(b, h // patch, patch, w // patch, patch, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, (h // patch) * (w // patch), patch * patch * c)


class PatchTokenizer(nn.Module):
    """Linear patch embedding plus learned positional embedding."""

    def __init__(self, image_size: int, patch: int, dim: int, channels: int = 3):
        super().__init__()
        if image_size % patch:
            raise ValueError(f"image_size {image_size} not divisible by patch {patch}")
        self.image_size = image_size
        self.patch = patch
        self.k = (image_size // patch) ** 2
        self.proj = nn.Linear(patch * patch * channels, dim)
        self.pos = nn.Parameter(torch.zeros(1, self.k, dim))

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """Patch embeddings before the positional term."""
        if images.shape[1] != self.image_size or images.shape[2] != self.image_size:
            raise ValueError(
                f"expected {self.image_size}x{self.image_size} images, got {tuple(images.shape[1:3])}"
            )
        return self.proj(patchify(images, self.patch))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.embed(images) + self.pos


def _check_tokens(tokens: torch.Tensor, k: int, dim: int) -> None:
    if tokens.dim() != 3 or tokens.shape[1] != k or tokens.shape[2] != dim:
        raise ValueError(f"expected tokens of shape (B, {k}, {dim}), got {tuple(tokens.shape)}")


class VLEncoder(nn.Module):
    """Bidirectional transformer over patch tokens (the frozen visual-language path)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.k, self.dim = cfg.tokens, cfg.dim
        self.blocks = nn.ModuleList(Block(cfg.dim, cfg.heads) for _ in range(cfg.depth))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        _check_tokens(tokens, self.k, self.dim)
        x = tokens
        for blk in self.blocks:
            x = blk(x)
        return x


class ClassifyHead(nn.Module):
    """Binary head on the CLS feature; logit order is (non-mpox, mpox)."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc = nn.Linear(dim, 2)

    def forward(self, cls_feature: torch.Tensor) -> torch.Tensor:
        return self.fc(self.norm(cls_feature))


class ViTClassifier(nn.Module):
    """ViT encoder with a learned CLS token; position 0 of the output is CLS."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.k, self.dim = cfg.tokens, cfg.dim
        self.cls = nn.Parameter(torch.zeros(1, 1, cfg.dim))
        self.cls_pos = nn.Parameter(torch.zeros(1, 1, cfg.dim))
        self.blocks = nn.ModuleList(Block(cfg.dim, cfg.heads) for _ in range(cfg.depth))
        self.head = ClassifyHead(cfg.dim)

    def run(self, tokens: torch.Tensor) -> torch.Tensor:
        """Encode a CLS-prefixed sequence of any number of patch tokens."""
        cls = (self.cls + self.cls_pos).expand(tokens.shape[0], -1, -1)
        x = torch.cat([cls, tokens], dim=1)
        for blk in self.blocks:
            x = blk(x)
        return x

    def forward(self, tokens: torch.Tensor):
        _check_tokens(tokens, self.k, self.dim)
        x = self.run(tokens)
        return x[:, 0], x[:, 1:]


def encode_vl(encoder: VLEncoder, tokens: torch.Tensor) -> torch.Tensor:
    return encoder(tokens)


def encode_classifier(vit: ViTClassifier, tokens: torch.Tensor):
    return vit(tokens)


def classify_head(head: ClassifyHead, cls_feature: torch.Tensor) -> torch.Tensor:
    return head(cls_feature)


def head_prediction(logits: torch.Tensor):
    """(predicted mpox label, mpox score). Ties go to non-mpox."""
    score = logits.softmax(dim=-1)[..., 1]
    return logits[..., 1] > logits[..., 0], score


class MAEDecoder(nn.Module):
    def __init__(self, enc: EncoderConfig, mae: MaeConfig):
        super().__init__()
        self.k = enc.tokens
        self.embed = nn.Linear(enc.dim, mae.dec_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, mae.dec_dim))
        self.pos = nn.Parameter(torch.zeros(1, self.k + 1, mae.dec_dim))
        self.blocks = nn.ModuleList(Block(mae.dec_dim, mae.dec_heads) for _ in range(mae.dec_depth))
        self.norm = nn.LayerNorm(mae.dec_dim)
        self.pred = nn.Linear(mae.dec_dim, enc.patch * enc.patch * 3)

    def forward(self, latent: torch.Tensor, ids_restore: torch.Tensor) -> torch.Tensor:
        """latent: (B, 1 + n_visible, D) with CLS first; returns (B, k, patch pixels)."""
        x = self.embed(latent)
        b, n_vis = x.shape[0], x.shape[1] - 1
        masks = self.mask_token.expand(b, self.k - n_vis, -1)
        patches = torch.cat([x[:, 1:], masks], dim=1)
        index = ids_restore.unsqueeze(-1).expand(-1, -1, x.shape[-1])
        patches = torch.gather(patches, 1, index)
        x = torch.cat([x[:, :1], patches], dim=1) + self.pos
        for blk in self.blocks:
            x = blk(x)
        return self.pred(self.norm(x))[:, 1:]


def random_masking(b: int, k: int, mask_ratio: float, generator: torch.Generator):
    """Per-sample masking without replacement.

    Returns (ids_keep (B, k - m), ids_restore (B, k), mask (B, k) bool).
    """
    m = num_masked(mask_ratio, k)
    noise = torch.rand(b, k, generator=generator)
    ids_shuffle = noise.argsort(dim=1)
    ids_restore = ids_shuffle.argsort(dim=1)
    ids_keep = ids_shuffle[:, : k - m]
    mask = torch.ones(b, k, dtype=torch.bool)
    mask[:, : k - m] = False
    mask = torch.gather(mask, 1, ids_restore)
    return ids_keep, ids_restore, mask


def masked_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error over masked patches only; 0 when nothing is masked."""
    if not mask.any():
        return (pred * 0.0).sum()
    per_patch = ((pred - target) ** 2).mean(dim=-1)
    return per_patch[mask].mean()


def mae_loss(
    tokenizer: PatchTokenizer,
    vit: ViTClassifier,
    decoder: MAEDecoder,
    images: torch.Tensor,
    mask_ratio: float,
    generator: torch.Generator,
    return_parts: bool = False,
):
    tokens = tokenizer(images)
    b, k, d = tokens.shape
    ids_keep, ids_restore, mask = random_masking(b, k, mask_ratio, generator)
    visible = torch.gather(tokens, 1, ids_keep.unsqueeze(-1).expand(-1, -1, d))
    latent = vit.run(visible)
    pred = decoder(latent, ids_restore)
    target = patchify(images, tokenizer.patch)
    loss = masked_mse(pred, target, mask)
    if return_parts:
        return loss, pred, target, mask
    return loss


def mae_step(tokenizer, vit, decoder, images, mask_ratio, generator):
    """One forward/backward pass; returns (loss, {param name: gradient})."""
    named = [
        *(("tokenizer." + n, p) for n, p in tokenizer.named_parameters()),
        *(("vit." + n, p) for n, p in vit.named_parameters() if not n.startswith("head.")),
        *(("decoder." + n, p) for n, p in decoder.named_parameters()),
    ]
    loss = mae_loss(tokenizer, vit, decoder, images, mask_ratio, generator)
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    out = {
        n: (g if g is not None else torch.zeros_like(p)) for (n, p), g in zip(named, grads)
    }
    return loss.detach(), out


class CaptionEncoder(nn.Module):
    """Bag-of-words text tower used only for contrastive pretraining."""

    def __init__(self, vocab_size: int, dim: int, proj_dim: int):
        super().__init__()
        self.emb = nn.Embedding(vocab_size, dim)
        self.proj = nn.Linear(dim, proj_dim)

    def forward(self, ids: torch.Tensor, pad_id: int = 0) -> torch.Tensor:
        keep = (ids != pad_id).unsqueeze(-1).to(self.emb.weight.dtype)
        pooled = (self.emb(ids) * keep).sum(1) / keep.sum(1).clamp_min(1.0)
        return F.normalize(self.proj(pooled), dim=-1)


class ContrastiveHead(nn.Module):
    def __init__(self, dim: int, proj_dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, proj_dim)
        self.logit_scale = nn.Parameter(torch.tensor(float(np.log(1 / 0.07))))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.proj(features.mean(dim=1)), dim=-1)


def contrastive_loss(img: torch.Tensor, txt: torch.Tensor, scale: torch.Tensor, caption_ids=None):
    """Symmetric InfoNCE; samples sharing a caption count as joint positives."""
    logits = scale.exp().clamp(max=100.0) * img @ txt.t()
    n = logits.shape[0]
    if caption_ids is None:
        targets = torch.eye(n, dtype=logits.dtype)
    else:
        c = torch.as_tensor(caption_ids)
        targets = (c[:, None] == c[None, :]).to(logits.dtype)
    targets = targets / targets.sum(dim=1, keepdim=True)
    loss_i = -(targets * logits.log_softmax(dim=1)).sum(1).mean()
    loss_t = -(targets * logits.t().log_softmax(dim=1)).sum(1).mean()
    return 0.5 * (loss_i + loss_t)


def build_encoders(cfg: EncoderConfig, mae: MaeConfig, seed: int):
    """Fresh shared tokenizer, VL encoder, ViT classifier and MAE decoder."""
    g = torch.Generator().manual_seed(seed)
    tok = PatchTokenizer(cfg.image_size, cfg.patch, cfg.dim)
    vl = VLEncoder(cfg)
    vit = ViTClassifier(cfg)
    dec = MAEDecoder(cfg, mae)
    for m in (tok, vl, vit, dec):
        init_weights(m, g)
    for p in (tok.pos, vit.cls, vit.cls_pos, dec.mask_token, dec.pos):
        nn.init.normal_(p, std=0.02, generator=g)
    return tok, vl, vit, dec

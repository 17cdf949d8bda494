"""The assembled dual-encoder vision-language model and its batched paths."""
from __future__ import annotations

from collections import defaultdict

import torch
from torch import nn

from mpoxvlm.encoders import PatchTokenizer, ViTClassifier, VLEncoder
from mpoxvlm.fusion.lm import Adapters, DecoderLM
from mpoxvlm.fusion.sequence import IncludeFlags, text_layout
from mpoxvlm.fusion.tokenizer import TextTokenizer


class MpoxVLM(nn.Module):
    def __init__(
        self,
        patch_tokenizer: PatchTokenizer,
        vl_encoder: VLEncoder,
        classifier: ViTClassifier,
        adapters: Adapters,
        lm: DecoderLM,
        text_tokenizer: TextTokenizer,
        include: IncludeFlags = IncludeFlags(),
    ):
        super().__init__()
        self.patch_tokenizer = patch_tokenizer
        self.vl_encoder = vl_encoder
        self.classifier = classifier
        self.adapters = adapters
        self.lm = lm
        self.text_tokenizer = text_tokenizer
        self.include = include

    @torch.no_grad()
    def features(self, images: torch.Tensor):
        """Frozen encoder outputs: VL patch features (B, k, d_v), CLS feature (B, d_v)."""
        tokens = self.patch_tokenizer(images)
        clip = self.vl_encoder(tokens)
        cls, _ = self.classifier(tokens)
        return clip, cls

    def visual_embeds(self, clip: torch.Tensor, cls: torch.Tensor) -> torch.Tensor:
        parts = []
        if self.include.clip_tokens:
            parts.append(self.adapters.clip(clip))
        if self.include.cls_token:
            parts.append(self.adapters.cls(cls).unsqueeze(1))
        if not parts:
            return clip.new_zeros(clip.shape[0], 0, self.lm.cfg.dim)
        return torch.cat(parts, dim=1)

    def logits(self, clip, cls, text_ids: torch.Tensor) -> torch.Tensor:
        embeds = torch.cat([self.visual_embeds(clip, cls), self.lm.tok_emb(text_ids)], dim=1)
        return self.lm(embeds)

    def loss(self, clip, cls, text_ids, loss_mask) -> torch.Tensor:
        """Token-averaged answer NLL over a right-padded batch."""
        logits = self.logits(clip, cls, text_ids)
        n_vis = logits.shape[1] - text_ids.shape[1]
        pred = logits[:, n_vis - 1 : -1].log_softmax(dim=-1)
        nll = -pred.gather(-1, text_ids.unsqueeze(-1)).squeeze(-1)
        mask = loss_mask.to(nll.dtype)
        return (nll * mask).sum() / mask.sum()

    def layouts(self, instances, answer=None):
        return [
            text_layout(inst, self.text_tokenizer, self.include.context, answer) for inst in instances
        ]


def pad_layouts(layouts, pad_id: int):
    T = max(len(l.ids) for l in layouts)
    ids = torch.full((len(layouts), T), pad_id, dtype=torch.long)
    mask = torch.zeros(len(layouts), T, dtype=torch.bool)
    for i, l in enumerate(layouts):
        ids[i, : len(l.ids)] = torch.tensor(l.ids)
        mask[i, : len(l.loss_mask)] = torch.tensor(l.loss_mask)
    return ids, mask


@torch.no_grad()
def score_and_generate(model: MpoxVLM, clip, cls, instances, max_new: int = 8, batch_size: int = 64):
    """Option scores and greedy answers for many instances.

    Prefixes of equal length are batched together, so no padding enters the
    causal computation. Returns (scores list, generated strings list).
    """
    prefixes = model.layouts(instances, answer=False)
    groups = defaultdict(list)
    for i, l in enumerate(prefixes):
        groups[len(l.ids)].append(i)
    scores = [0.0] * len(instances)
    answers = [""] * len(instances)
    for _, members in sorted(groups.items()):
        for start in range(0, len(members), batch_size):
            idx = members[start : start + batch_size]
            ids = torch.tensor([prefixes[i].ids for i in idx])
            embeds = torch.cat([model.visual_embeds(clip[idx], cls[idx]), model.lm.tok_emb(ids)], dim=1)
            logits = model.lm(embeds)[:, -1]
            for j, i in enumerate(idx):
                scores[i] = _option_score(model, embeds[j], logits[j], instances[i].options)
            for j, text in enumerate(_greedy(model, embeds, logits, max_new)):
                answers[idx[j]] = text
    return scores, answers


def _option_score(model, prefix_embeds, last_logits, options) -> float:
    tok = model.text_tokenizer
    lls = []
    for opt in options[:2]:
        ids = tok.encode(opt)
        if len(ids) == 1:
            lls.append(last_logits.log_softmax(-1)[ids[0]])
            continue
        ids_t = torch.tensor(ids)
        embeds = torch.cat([prefix_embeds, model.lm.tok_emb(ids_t)], dim=0)
        logp = model.lm(embeds.unsqueeze(0))[0].log_softmax(-1)
        start = prefix_embeds.shape[0]
        lls.append(logp[torch.arange(start - 1, start - 1 + len(ids)), ids_t].mean())
    return float(torch.sigmoid(lls[0] - lls[1]))


def _greedy(model, embeds, last_logits, max_new: int):
    tok = model.text_tokenizer
    b = embeds.shape[0]
    out = [[] for _ in range(b)]
    done = [False] * b
    logits = last_logits
    for step in range(max_new):
        nxt = logits.argmax(-1)
        for j in range(b):
            if done[j]:
                continue
            if int(nxt[j]) == tok.eos_id:
                done[j] = True
            else:
                out[j].append(int(nxt[j]))
        if all(done) or step == max_new - 1:
            break
        embeds = torch.cat([embeds, model.lm.tok_emb(nxt).unsqueeze(1)], dim=1)
        logits = model.lm(embeds)[:, -1]
    return [tok.decode(o) for o in out]

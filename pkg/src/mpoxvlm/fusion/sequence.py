"""Multimodal sequence assembly and single-sequence language-model operations.

Layout of one sequence (segments in fixed order, optional ones may be absent)::

    Z_CLIP (k) | Z_V (1) | <bos> X_c <sep> | X_q <sep> | X_o <sep> | Y <eos>

BOS belongs to the first textual segment present; each SEP closes the segment
before it. The loss mask marks answer tokens and the final EOS.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

from mpoxvlm.fusion.lm import DecoderLM
from mpoxvlm.fusion.tokenizer import TextTokenizer

SEGMENTS = ("Z_CLIP", "Z_V", "X_c", "X_q", "X_o", "Y")


@dataclass(frozen=True)
class IncludeFlags:
    context: bool = True
    cls_token: bool = True
    clip_tokens: bool = True


def options_text(options) -> str:
    if len(options) == 0:
        raise ValueError("options must not be empty")
    return "options : " + " or ".join(options)


@dataclass
class TextLayout:
    ids: list
    segments: list
    loss_mask: list = field(default_factory=list)


def text_layout(instance, tokenizer: TextTokenizer, include_context: bool = True, answer=None) -> TextLayout:
    """Token ids of the textual part. ``answer=None`` uses the instance's answer;
    ``answer=False`` stops after the options separator (generation prefix)."""
    parts = []
    if include_context:
        parts.append(("X_c", tokenizer.encode(instance.context_text)))
    parts.append(("X_q", tokenizer.encode(instance.question_text)))
    parts.append(("X_o", tokenizer.encode(options_text(instance.options))))
    ids, segs = [tokenizer.bos_id], [parts[0][0]]
    for seg, toks in parts:
        ids += toks + [tokenizer.sep_id]
        segs += [seg] * (len(toks) + 1)
    mask = [False] * len(ids)
    if answer is not False:
        ans = tokenizer.encode(instance.answer if answer is None else answer) + [tokenizer.eos_id]
        ids += ans
        segs += ["Y"] * len(ans)
        mask += [True] * len(ans)
    return TextLayout(ids, segs, mask)


@dataclass
class AssembledSequence:
    embeds: torch.Tensor  # (L, d_h)
    segments: tuple
    loss_mask: torch.Tensor  # (L,) bool
    token_ids: torch.Tensor  # (L,) long, -1 at visual positions

    def __len__(self) -> int:
        return self.embeds.shape[0]


def assemble_sequence(
    z_clip,
    z_v,
    instance,
    tokenizer: TextTokenizer,
    embedding: torch.nn.Embedding,
    include: IncludeFlags = IncludeFlags(),
    answer=None,
) -> AssembledSequence:
    """Z_CLIP is (d_h, k) and Z_V is (d_h, 1), column-per-token as produced by
    ``project_clip`` / ``project_cls``; either may be None."""
    layout = text_layout(instance, tokenizer, include.context, answer)
    visual, segs = [], []
    if include.clip_tokens and z_clip is not None:
        visual.append(z_clip.t())
        segs += ["Z_CLIP"] * z_clip.shape[1]
    if include.cls_token and z_v is not None:
        visual.append(z_v.t())
        segs += ["Z_V"] * z_v.shape[1]
    ids = torch.tensor(layout.ids, dtype=torch.long)
    embeds = torch.cat([*visual, embedding(ids)], dim=0)
    n_vis = len(segs)
    token_ids = torch.cat([torch.full((n_vis,), -1, dtype=torch.long), ids])
    mask = torch.tensor([False] * n_vis + layout.loss_mask, dtype=torch.bool)
    return AssembledSequence(embeds, tuple(segs + layout.segments), mask, token_ids)


def lm_forward(lm: DecoderLM, seq: AssembledSequence) -> torch.Tensor:
    """(L, V) logits."""
    return lm(seq.embeds.unsqueeze(0))[0]


def answer_nll(lm: DecoderLM, seq: AssembledSequence) -> torch.Tensor:
    """Mean negative log-likelihood of the masked (answer + EOS) tokens."""
    targets = seq.loss_mask.nonzero().flatten()
    if targets.numel() == 0:
        raise ValueError("loss mask is empty")
    if int(targets.min()) == 0:
        raise ValueError("position 0 cannot be a prediction target")
    logp = lm_forward(lm, seq).log_softmax(dim=-1)
    return -logp[targets - 1, seq.token_ids[targets]].mean()


def generate_answer(
    lm: DecoderLM, seq: AssembledSequence, tokenizer: TextTokenizer, embedding, max_new: int = 8
) -> str:
    """Greedy decoding from a prefix until EOS or ``max_new`` tokens."""
    if max_new < 1:
        raise ValueError("max_new must be >= 1")
    embeds = seq.embeds
    out = []
    with torch.no_grad():
        for _ in range(max_new):
            logits = lm(embeds.unsqueeze(0))[0, -1]
            nxt = int(logits.argmax())
            if nxt == tokenizer.eos_id:
                break
            out.append(nxt)
            embeds = torch.cat([embeds, embedding(torch.tensor([nxt]))], dim=0)
    return tokenizer.decode(out)


def option_loglik(lm: DecoderLM, prefix: AssembledSequence, option_ids, embedding) -> torch.Tensor:
    """Length-normalised log-likelihood of ``option_ids`` following ``prefix``."""
    ids = torch.tensor(option_ids, dtype=torch.long)
    embeds = torch.cat([prefix.embeds, embedding(ids)], dim=0)
    logp = lm(embeds.unsqueeze(0))[0].log_softmax(dim=-1)
    start = prefix.embeds.shape[0]
    pos = torch.arange(start - 1, start - 1 + len(option_ids))
    return logp[pos, ids].mean()


def mpox_score(lm: DecoderLM, prefix: AssembledSequence, options, tokenizer: TextTokenizer, embedding):
    """Two-way softmax over the length-normalised option log-likelihoods.

    ``options[0]`` is the mpox option. Returns a float in [0, 1].
    """
    ll_pos = option_loglik(lm, prefix, tokenizer.encode(options[0]), embedding)
    ll_neg = option_loglik(lm, prefix, tokenizer.encode(options[1]), embedding)
    return float(torch.sigmoid(ll_pos - ll_neg))

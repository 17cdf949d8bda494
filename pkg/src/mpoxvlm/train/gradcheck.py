"""Central finite-difference checks of every trainable block in float64."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from mpoxvlm.encoders import ClassifyHead, EncoderConfig, MAEDecoder, MaeConfig, PatchTokenizer
from mpoxvlm.fusion.lm import Adapters, DecoderLM, LmConfig, LoraConfig, attach_lora
from mpoxvlm.nn import MLP, Attention, Block


@dataclass
class Fixture:
    module: nn.Module
    loss: callable  # () -> scalar tensor
    tol: float
    eps: float = 1e-5


def _randomize(module: nn.Module, g: torch.Generator) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.5)


def _linear_quadratic(g):
    lin = nn.Linear(5, 3).double()
    _randomize(lin, g)
    x = torch.randn(7, 5, generator=g, dtype=torch.float64)
    y = torch.randn(7, 3, generator=g, dtype=torch.float64)
    # central differences are exact on a quadratic, so a large step only removes rounding noise
    return Fixture(lin, lambda: ((lin(x) - y) ** 2).sum(), 1e-8, eps=1e-2)


def _patch_embed(g):
    m = PatchTokenizer(8, 4, 6).double()
    _randomize(m, g)
    x = torch.rand(2, 8, 8, 3, generator=g, dtype=torch.float64)
    r = torch.randn(2, 4, 6, generator=g, dtype=torch.float64)
    return Fixture(m, lambda: (m(x) * r).sum(), 1e-4)


def _attention(g, causal=False):
    m = Attention(8, 2, causal=causal).double()
    _randomize(m, g)
    x = torch.randn(2, 5, 8, generator=g, dtype=torch.float64)
    r = torch.randn(2, 5, 8, generator=g, dtype=torch.float64)
    return Fixture(m, lambda: (m(x) * r).sum(), 1e-4)


def _mlp(g):
    m = MLP(8, 16).double()
    _randomize(m, g)
    x = torch.randn(3, 8, generator=g, dtype=torch.float64)
    r = torch.randn(3, 8, generator=g, dtype=torch.float64)
    return Fixture(m, lambda: (m(x) * r).sum(), 1e-4)


def _mae_decoder(g):
    enc = EncoderConfig(image_size=8, patch=4, dim=8, depth=1, heads=2)
    m = MAEDecoder(enc, MaeConfig(mask_ratio=0.5, dec_dim=8, dec_depth=1, dec_heads=2)).double()
    _randomize(m, g)
    latent = torch.randn(2, 3, 8, generator=g, dtype=torch.float64)
    ids_restore = torch.stack([torch.randperm(4, generator=g) for _ in range(2)])
    r = torch.randn(2, 4, 48, generator=g, dtype=torch.float64)
    return Fixture(m, lambda: (m(latent, ids_restore) * r).sum(), 1e-4)


def _classify_head(g):
    m = ClassifyHead(8).double()
    _randomize(m, g)
    x = torch.randn(4, 8, generator=g, dtype=torch.float64)
    y = torch.tensor([0, 1, 1, 0])
    return Fixture(m, lambda: nn.functional.cross_entropy(m(x), y), 1e-4)


def _adapters(g):
    m = Adapters(6, 10, 8).double()
    _randomize(m, g)
    clip = torch.randn(2, 4, 6, generator=g, dtype=torch.float64)
    cls = torch.randn(2, 6, generator=g, dtype=torch.float64)
    r1 = torch.randn(2, 4, 8, generator=g, dtype=torch.float64)
    r2 = torch.randn(2, 8, generator=g, dtype=torch.float64)
    return Fixture(m, lambda: (m.clip(clip) * r1).sum() + (m.cls(cls) * r2).sum(), 1e-4)


def _lm_block(g):
    m = Block(8, 2, causal=True).double()
    _randomize(m, g)
    x = torch.randn(2, 6, 8, generator=g, dtype=torch.float64)
    r = torch.randn(2, 6, 8, generator=g, dtype=torch.float64)
    return Fixture(m, lambda: (m(x) * r).sum(), 1e-4)


def _stack(g):
    """Adapters feeding a one-block LM with LoRA, under the masked answer NLL."""
    adapters = Adapters(6, 10, 8)
    lm = DecoderLM(12, LmConfig(dim=8, depth=1, heads=2, max_len=16))
    attach_lora(lm, LoraConfig(rank=2, alpha=4.0), seed=0)
    m = nn.ModuleDict({"adapters": adapters, "lm": lm}).double()
    _randomize(m, g)
    clip = torch.randn(2, 3, 6, generator=g, dtype=torch.float64)
    cls = torch.randn(2, 6, generator=g, dtype=torch.float64)
    ids = torch.randint(0, 12, (2, 5), generator=g)
    mask = torch.tensor([[0, 0, 0, 1, 1], [0, 0, 1, 1, 1]], dtype=torch.float64)

    def loss():
        vis = torch.cat([adapters.clip(clip), adapters.cls(cls).unsqueeze(1)], dim=1)
        logits = lm(torch.cat([vis, lm.tok_emb(ids)], dim=1))
        pred = logits[:, vis.shape[1] - 1 : -1].log_softmax(-1)
        nll = -pred.gather(-1, ids.unsqueeze(-1)).squeeze(-1)
        return (nll * mask).sum() / mask.sum()

    return Fixture(m, loss, 1e-4)


FIXTURES = {
    "linear_quadratic": _linear_quadratic,
    "patch_embed": _patch_embed,
    "attention": _attention,
    "causal_attention": lambda g: _attention(g, causal=True),
    "mlp": _mlp,
    "mae_decoder": _mae_decoder,
    "classify_head": _classify_head,
    "adapters": _adapters,
    "lm_block": _lm_block,
    "adapter_lm_stack": _stack,
}


FLOOR = 1e-4


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = FLOOR) -> float:
    """max |a - n| / max(|a|, |n|, floor), elementwise.

    Gradients below ``floor`` in magnitude (e.g. attention key biases, whose
    true gradient is exactly zero) are thereby compared in absolute terms.
    """
    denom = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), torch.full_like(analytic, floor))
    return float(((analytic - numeric).abs() / denom).max())


def grad_check(module_id: str, eps: float = None, seed: int = 0, corrupt: bool = False) -> float:
    """Max relative error between autograd and central differences over every
    parameter element of the fixture. ``eps=None`` uses the fixture's step.
    ``corrupt`` perturbs the analytic gradient by 1% as a negative control."""
    if eps is not None and not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if module_id not in FIXTURES:
        raise KeyError(f"unknown gradcheck module {module_id!r}; choose from {sorted(FIXTURES)}")
    g = torch.Generator().manual_seed(seed)
    fx = FIXTURES[module_id](g)
    eps = fx.eps if eps is None else eps
    params = [p for p in fx.module.parameters() if p.requires_grad]
    analytic = torch.autograd.grad(fx.loss(), params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, a in zip(params, analytic):
            a = torch.zeros_like(p) if a is None else a.clone()
            if corrupt:
                a = a * 1.01 + 1e-3
            numeric = torch.empty_like(p)
            flat, num = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(fx.loss())
                flat[i] = orig - eps
                down = float(fx.loss())
                flat[i] = orig
                num[i] = (up - down) / (2 * eps)
            worst = max(worst, relative_error(a, numeric))
    return worst


def tolerance(module_id: str) -> float:
    return FIXTURES[module_id](torch.Generator().manual_seed(0)).tol


def run_all(eps: float = None, seed: int = 0, corrupt: str = "") -> dict:
    """{module id: (max relative error, tolerance, passed)}."""
    out = {}
    for name in FIXTURES:
        err = grad_check(name, eps, seed, corrupt=(name == corrupt))
        tol = tolerance(name)
        out[name] = (err, tol, err < tol)
    return out

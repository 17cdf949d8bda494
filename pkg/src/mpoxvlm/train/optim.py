"""AdamW with decoupled weight decay, cosine annealing and early stopping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch


@dataclass
class OptimState:
    lr: float
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)


@torch.no_grad()
def adamw_update(state: OptimState, params: dict, grads: dict, lr: float = None) -> OptimState:
    """In-place AdamW step over named tensors.

    Decay is applied multiplicatively to the weights, never through the
    gradient. Parameters without a gradient are left untouched.
    """
    lr = state.lr if lr is None else lr
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.exp_avg:
            state.exp_avg[name] = torch.zeros_like(p)
            state.exp_avg_sq[name] = torch.zeros_like(p)
        m, v = state.exp_avg[name], state.exp_avg_sq[name]
        p.mul_(1.0 - lr * state.weight_decay)
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        denom = (v / bc2).sqrt_().add_(state.eps)
        p.addcdiv_(m, denom, value=-lr / bc1)
    return state


class AdamW:
    """Thin stateful wrapper binding :func:`adamw_update` to named parameters."""

    def __init__(self, named_params, lr: float, weight_decay: float = 0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(named_params)
        self.state = OptimState(lr=lr, weight_decay=weight_decay, betas=tuple(betas), eps=eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float = None):
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        adamw_update(self.state, self.params, grads, lr)

    def state_tensors(self) -> dict:
        out = {}
        for n in self.state.exp_avg:
            out[f"exp_avg/{n}"] = self.state.exp_avg[n]
            out[f"exp_avg_sq/{n}"] = self.state.exp_avg_sq[n]
        return out

    def load_state_tensors(self, tensors: dict, step: int):
        self.state.step = step
        self.state.exp_avg = {k[len("exp_avg/") :]: v.clone() for k, v in tensors.items() if k.startswith("exp_avg/")}
        self.state.exp_avg_sq = {
            k[len("exp_avg_sq/") :]: v.clone() for k, v in tensors.items() if k.startswith("exp_avg_sq/")
        }


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    return float(torch.nn.utils.clip_grad_norm_([p for p in params if p.grad is not None], max_norm))


def cosine_lr(step: int, total: int, base: float, floor: float = 0.0) -> float:
    if total <= 0:
        raise ValueError(f"total steps must be positive, got {total}")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * step / total))


def early_stop(history, patience: int, min_delta: float = 0.0) -> bool:
    """True once the last ``patience`` evaluations brought no improvement
    greater than ``min_delta`` over the best value before them."""
    if patience < 1:
        raise ValueError(f"patience must be >= 1, got {patience}")
    best = math.inf
    stale = 0
    for value in history:
        if value < best - min_delta:
            best = value
            stale = 0
        else:
            stale += 1
    return stale >= patience

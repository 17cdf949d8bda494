import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mpoxvlm.train import checkpoint
from mpoxvlm.train.gradcheck import FIXTURES, grad_check, relative_error, run_all, tolerance
from mpoxvlm.train.optim import AdamW, OptimState, adamw_update, cosine_lr, early_stop


def test_adamw_matches_torch():
    torch.manual_seed(0)
    w = torch.randn(5, 3)
    ours = torch.nn.Parameter(w.clone())
    ref = torch.nn.Parameter(w.clone())
    opt = AdamW([("w", ours)], lr=1e-2, weight_decay=0.1)
    topt = torch.optim.AdamW([ref], lr=1e-2, weight_decay=0.1)
    for step in range(20):
        g = torch.randn(5, 3, generator=torch.Generator().manual_seed(step))
        ours.grad, ref.grad = g.clone(), g.clone()
        opt.step()
        topt.step()
    assert torch.allclose(ours, ref, atol=1e-6)


def test_adamw_decay_is_decoupled():
    p = torch.ones(3)
    state = OptimState(lr=0.1, weight_decay=0.5)
    adamw_update(state, {"p": p}, {"p": torch.zeros(3)})
    assert torch.allclose(p, torch.full((3,), 0.95))


def test_adamw_skips_missing_gradients():
    p, q = torch.ones(2), torch.ones(2)
    adamw_update(OptimState(lr=0.1), {"p": p, "q": q}, {"p": torch.ones(2)})
    assert torch.equal(q, torch.ones(2))
    assert not torch.equal(p, torch.ones(2))


def test_adamw_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        adamw_update(OptimState(lr=0.1), {"p": torch.ones(1)}, {"p": torch.tensor([math.nan])})


def test_optimizer_state_round_trip():
    p = torch.nn.Parameter(torch.randn(4))
    opt = AdamW([("p", p)], lr=1e-2)
    p.grad = torch.randn(4)
    opt.step()
    blob = checkpoint.dumps(opt.state_tensors())
    fresh = AdamW([("p", p)], lr=1e-2)
    fresh.load_state_tensors({k: torch.from_numpy(v) for k, v in checkpoint.loads(blob).items()}, opt.state.step)
    p2 = torch.nn.Parameter(p.detach().clone())
    fresh.params = {"p": p2}
    p.grad = p2.grad = torch.ones(4)
    opt.step()
    fresh.step()
    assert torch.equal(p, p2)


@settings(max_examples=50, deadline=None)
@given(total=st.integers(1, 1000), base=st.floats(1e-6, 1.0), floor=st.floats(0.0, 1e-6))
def test_cosine_schedule(total, base, floor):
    assert cosine_lr(0, total, base, floor) == pytest.approx(base)
    assert cosine_lr(total, total, base, floor) == pytest.approx(floor, abs=1e-15)
    values = [cosine_lr(s, total, base, floor) for s in range(total + 1)]
    assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))


def test_cosine_rejects_bad_step():
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 1.0)
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 1.0)


def test_early_stop():
    assert not early_stop([3, 2, 1], patience=2)
    assert early_stop([1, 2, 3], patience=2)
    assert not early_stop([1, 2, 0.5], patience=2)
    assert early_stop([1.0, 0.9999], patience=1, min_delta=0.01)
    with pytest.raises(ValueError):
        early_stop([1], patience=0)


@settings(max_examples=30, deadline=None)
@given(
    shapes=st.lists(st.lists(st.integers(0, 4), max_size=3), min_size=1, max_size=4),
    dtype=st.sampled_from([np.float32, np.float64, np.int64]),
)
def test_checkpoint_round_trip(shapes, dtype):
    rng = np.random.default_rng(0)
    arrays = {f"a{i}": rng.normal(size=s).astype(dtype) for i, s in enumerate(shapes)}
    back = checkpoint.loads(checkpoint.dumps(arrays))
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype and back[k].shape == arrays[k].shape
        assert np.array_equal(back[k], arrays[k])


def test_checkpoint_keeps_scalars_and_is_canonical():
    a = {"s": np.float32(2.5), "t": torch.arange(6).reshape(2, 3).t()}
    blob = checkpoint.dumps(a)
    back = checkpoint.loads(blob)
    assert back["s"].shape == ()
    assert np.array_equal(back["t"], a["t"].numpy())
    assert checkpoint.dumps(dict(reversed(list(a.items())))) == blob


def test_checkpoint_rejects_corruption(tmp_path):
    blob = checkpoint.dumps({"x": np.zeros(3)})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"junk" + blob)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob + b"\0")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(tmp_path / "missing.bin")


def test_relative_error_floor():
    a, n = torch.tensor([0.0, 1.0]), torch.tensor([1e-9, 1.0 + 1e-7])
    assert relative_error(a, n) < 1e-4


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_gradcheck_fixture(name):
    assert grad_check(name) < tolerance(name)


def test_gradcheck_detects_corruption():
    assert grad_check("mlp", corrupt=True) > 1e-3


def test_gradcheck_linear_fixture_tight():
    assert tolerance("linear_quadratic") == 1e-8


def test_gradcheck_rejects_bad_args():
    with pytest.raises(ValueError):
        grad_check("mlp", eps=0.0)
    with pytest.raises(KeyError):
        grad_check("nope")


def test_run_all_flags_corrupted_module():
    results = run_all(corrupt="classify_head")
    assert not results["classify_head"][2]
    assert results["adapters"][2]

import json

import numpy as np
import pytest
import torch

from conftest import tiny_config
from mpoxvlm.eval.evaluate import evaluate_model, run_ablation, train_seeds
from mpoxvlm.eval.rows import ROWS
from mpoxvlm.train import checkpoint
from mpoxvlm.train.pipeline import (
    GROUPS,
    MissingPrerequisite,
    Pipeline,
    StageAborted,
    build_plan,
    plan_stages,
    stage_key,
)


def snapshot(p):
    return {g: p.comp.group_bytes(g) for g in GROUPS}


def changed(before, after):
    return {g for g in GROUPS if before[g] != after[g]}


def test_plans():
    assert plan_stages("classifier") == ("mae", "classify")
    assert plan_stages("full") == ("mae", "classify", "vl", "lm_pretrain", "align", "finetune")
    assert plan_stages("clip_llm") == ("mae", "vl", "lm_pretrain", "align", "finetune")
    plan = build_plan(tiny_config("x"), "full")
    assert plan.get("align").trainable == ("w_clip", "w_v")
    assert plan.get("finetune").trainable == ("lora",)
    assert "lora" in plan.get("align").frozen


@pytest.mark.parametrize("row", list(ROWS))
def test_stage_freezing(tiny_data, tmp_path, row):
    p = Pipeline(tiny_config(tiny_data), 1, tmp_path, row=row)
    expected = {
        "mae": {"patch_embed", "f_v", "mae_decoder"},
        "classify": {"f_v"},
        "vl": {"f_clip", "vl_heads"},
        "lm_pretrain": {"lm_base"},
        "align": {"w_clip", "w_v"},
        "finetune": {"lora"},
    }
    for stage in p.plan.names:
        before = snapshot(p)
        rec = p.run_stage(stage)
        assert changed(before, snapshot(p)) <= expected[stage]
        assert all(a == b for a, b in rec.frozen_hashes.values())
    # the finished run reloads to the same bytes
    after = snapshot(p)
    fresh = Pipeline(tiny_config(tiny_data), 1, tmp_path, row=row)
    fresh.load_trained()
    assert snapshot(fresh) == after


def test_missing_prerequisite(tiny_data, tmp_path):
    p = Pipeline(tiny_config(tiny_data), 1, tmp_path)
    with pytest.raises(MissingPrerequisite):
        p.run_stage("align")
    with pytest.raises(MissingPrerequisite):
        p.load_trained()


def test_resume_is_exact(tiny_data, tmp_path):
    cfg = tiny_config(tiny_data)
    full = Pipeline(cfg, 1, tmp_path / "a")
    rec_full = full.run_stage("mae")
    part = Pipeline(cfg, 1, tmp_path / "b")
    rec = part.run_stage("mae", stop_after=4)
    assert not rec.completed and len(rec.losses) == 4
    resumed = Pipeline(cfg, 1, tmp_path / "b")
    rec_resumed = resumed.run_stage("mae")
    assert rec_resumed.losses == rec_full.losses
    assert snapshot(resumed) == snapshot(full)
    assert not (tmp_path / "b" / "ckpt" / "mae" / "state.bin").exists()


def test_completed_stage_is_skipped(tiny_data, tmp_path):
    cfg = tiny_config(tiny_data)
    Pipeline(cfg, 1, tmp_path).run_stage("mae")
    final = tmp_path / "ckpt" / "mae" / "final.bin"
    stamp = final.stat().st_mtime_ns
    Pipeline(cfg, 1, tmp_path).run_stage("mae")
    assert final.stat().st_mtime_ns == stamp


def test_changed_config_retrains(tiny_data, tmp_path):
    a = tiny_config(tiny_data)
    b = tiny_config(tiny_data, "stages.mae.lr=0.005")
    assert stage_key(a, "mae", 1) != stage_key(b, "mae", 1)
    assert stage_key(a, "mae", 1) == stage_key(tiny_config("elsewhere"), "mae", 1)
    Pipeline(a, 1, tmp_path).run_stage("mae")
    assert not Pipeline(b, 1, tmp_path).has_final("mae")


def test_non_finite_loss_aborts(tiny_data, tmp_path):
    p = Pipeline(tiny_config(tiny_data, "stages.mae.lr=1e30"), 1, tmp_path)
    p.data.images[p.data.split("train")[0]] = float("inf")
    with pytest.raises((StageAborted, FloatingPointError)):
        p.run_stage("mae")


def test_training_is_deterministic(tiny_data, tmp_path):
    cfg = tiny_config(tiny_data)
    for name in ("a", "b"):
        train_seeds(cfg, tmp_path / name)
        evaluate_model(cfg, tmp_path / name, "test")
    for rel in ("seed_1/losses.csv", "eval/test/metrics.json", "seed_1/ckpt/finetune/final.bin"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_losses_csv_columns(tiny_data, tmp_path):
    cfg = tiny_config(tiny_data)
    Pipeline(cfg, 1, tmp_path, row="classifier").run()
    lines = (tmp_path / "losses.csv").read_text().splitlines()
    assert lines[0] == "step,stage,loss,lr,seed,config_hash"
    assert len(lines) == 1 + 12
    assert lines[1].endswith(f",1,{cfg.hash()}")


def test_ablation_outputs(tiny_data, tmp_path):
    cfg = tiny_config(tiny_data, seeds="1,2")
    reports = run_ablation(cfg, tmp_path)
    assert [n for n, _ in reports] == list(ROWS)
    csv_lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert len(csv_lines) == 5
    for name in ROWS:
        doc = json.loads((tmp_path / name / "eval" / "test" / "metrics.json").read_text())
        assert doc["row"] == name and doc["seeds"] == [1, 2]
        assert set(doc["per_seed"]) == {"1", "2"}
        preds = (tmp_path / name / "seed_1" / "eval" / "test" / "predictions.jsonl").read_text().splitlines()
        assert len(preds) == doc["per_seed"]["1"]["confusion"]["tp"] + doc["per_seed"]["1"]["confusion"]["fp"] + \
            doc["per_seed"]["1"]["confusion"]["tn"] + doc["per_seed"]["1"]["confusion"]["fn"]
    # encoder stages are trained once and shared
    assert (tmp_path / "shared" / "seed_1" / "ckpt" / "vl" / "final.bin").is_file()
    assert (tmp_path / "shared" / "seed_1" / "ckpt" / "lm_pretrain" / "final.bin").is_file()
    assert not (tmp_path / "full" / "seed_1" / "ckpt" / "mae").exists()


def test_checkpoint_shape_mismatch(tiny_data, tmp_path):
    p = Pipeline(tiny_config(tiny_data), 1, tmp_path)
    p.run_stage("mae")
    arrays, side = checkpoint.load(tmp_path / "ckpt" / "mae" / "final.bin")
    key = next(iter(arrays))
    arrays[key] = np.zeros((1, 2, 3), dtype=np.float32)
    with pytest.raises(checkpoint.CheckpointError):
        p.comp.load_arrays(arrays)

"""Per-seed evaluation of trained runs and the four-row ablation runner."""
from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path

import torch

from mpoxvlm.config import RunConfig
from mpoxvlm.data.vqa import MPOX_OPTION, NON_MPOX_OPTION
from mpoxvlm.encoders import head_prediction
from mpoxvlm.eval.metrics import MetricsReport, PredictionSet, format_pm, metric_values
from mpoxvlm.eval.rows import ROWS
from mpoxvlm.fusion.model import score_and_generate

log = logging.getLogger(__name__)


def seed_dir(out, seed: int) -> Path:
    return Path(out) / f"seed_{seed}"


@torch.no_grad()
def predict(pipeline, split: str) -> tuple:
    """(PredictionSet, generated answers or None, disagreement count)."""
    pipeline.load_trained()
    idx = pipeline.data.split(split)
    clip, cls = pipeline.features()
    ids = [pipeline.data.manifest.records[i].sample_id for i in idx.tolist()]
    labels = pipeline.data.labels[idx].tolist()
    row = ROWS[pipeline.row]
    if not row.use_llm:
        logits = pipeline.comp.vit.head(cls[idx])
        preds, scores = head_prediction(logits)
        return PredictionSet.build(labels, preds.tolist(), scores.tolist(), ids), None, 0
    model = pipeline.comp.model(pipeline.tokenizer, pipeline.row)
    instances = [pipeline.data.instances[i] for i in idx.tolist()]
    scores, answers = score_and_generate(model, clip[idx], cls[idx], instances)
    preds = [a == inst.mpox_option for a, inst in zip(answers, instances)]
    disagree = sum((s > 0.5) != p for s, p in zip(scores, preds))
    if disagree:
        log.error("%d greedy answers disagree with the higher-likelihood option", disagree)
    return PredictionSet.build(labels, preds, scores, ids), answers, disagree


def evaluate_seed(pipeline, split: str) -> dict:
    preds, answers, disagree = predict(pipeline, split)
    values = metric_values(preds)
    values["disagreements"] = disagree
    values["invalid_answers"] = (
        0 if answers is None else sum(a not in (MPOX_OPTION, NON_MPOX_OPTION) for a in answers)
    )
    out = Path(pipeline.run_dir) / "eval" / split
    out.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps({"id": i, "label": l, "pred": p, "score": s, "answer": None if answers is None else answers[k]})
        for k, (i, l, p, s) in enumerate(zip(preds.ids, preds.labels, preds.preds, preds.scores))
    ]
    (out / "predictions.jsonl").write_text("\n".join(lines) + "\n")
    return values


def write_report(report: MetricsReport, path, extra: dict) -> dict:
    doc = {**report.to_json(), **extra}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def evaluate_model(config: RunConfig, out, split: str = "test", row: str = None, encoder_dir=None) -> MetricsReport:
    """Evaluate trained runs ``<out>/seed_<s>`` for every configured seed and
    write ``<out>/eval/<split>/metrics.json``."""
    from mpoxvlm.train.pipeline import Pipeline

    row = row or config.row
    report = MetricsReport(config={"row": row, **ROWS[row].flags()}, seeds=list(config.seeds))
    data_hash = None
    for seed in config.seeds:
        enc = seed_dir(encoder_dir, seed) if encoder_dir is not None else None
        p = Pipeline(config, seed, seed_dir(out, seed), encoder_dir=enc, row=row)
        report.per_seed[seed] = evaluate_seed(p, split)
        data_hash = p.data.data_hash
    write_report(
        report,
        Path(out) / "eval" / split / "metrics.json",
        {"split": split, "row": row, "config_hash": config.hash(), "data_hash": data_hash},
    )
    return report


def train_seeds(config: RunConfig, out, row: str = None, encoder_dir=None, stages=None) -> None:
    from mpoxvlm.train.pipeline import Pipeline

    for seed in config.seeds:
        enc = seed_dir(encoder_dir, seed) if encoder_dir is not None else None
        Pipeline(config, seed, seed_dir(out, seed), encoder_dir=enc, row=row).run(stages)


def run_ablation(config: RunConfig, out, split: str = "test") -> list:
    """Train and evaluate the four rows under shared data and seeds.

    Encoder pretraining runs once per seed in ``<out>/shared`` and is reused by
    every row; completed stages are skipped, so an interrupted run resumes.
    """
    out = Path(out)
    shared = out / "shared"
    reports = []
    for name in ROWS:
        row_dir = out / name
        train_seeds(config, row_dir, row=name, encoder_dir=shared)
        reports.append((name, evaluate_model(config, row_dir, split, row=name, encoder_dir=shared)))
    write_ablation_csv(reports, out / "ablation.csv", config)
    return reports


def write_ablation_csv(reports, path, config: RunConfig) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "label", "classifier", "clip", "text", "llm", "accuracy", "auroc",
                "accuracy_mean", "accuracy_std", "auroc_mean", "auroc_std", "seeds", "config_hash"])
    for name, report in reports:
        r, s = ROWS[name], report.summary
        w.writerow([
            name, r.label, *(int(v) for v in r.flags().values()),
            format_pm(s["accuracy"]), format_pm(s["auroc"]),
            repr(s["accuracy"]["mean"]), repr(s["accuracy"]["std"]),
            repr(s["auroc"]["mean"]), repr(s["auroc"]["std"]),
            " ".join(map(str, report.seeds)), config.hash(),
        ])
    Path(path).write_text(buf.getvalue())
    return buf.getvalue()

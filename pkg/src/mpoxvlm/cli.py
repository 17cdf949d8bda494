"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad config, bad input data,
missing prerequisite checkpoint), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from mpoxvlm.config import ConfigError, RunConfig, describe_keys, load_config, set_key
from mpoxvlm.data.manifest import ManifestError
from mpoxvlm.data.split import SplitError
from mpoxvlm.data.synth import GeneratorError
from mpoxvlm.train.checkpoint import CheckpointError

log = logging.getLogger("mpoxvlm")

STAGE_CHOICES = ("mae", "classify", "vl", "lm_pretrain", "align", "finetune", "all")


class ValidationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    config = load_config(args.config, args.set or ())
    if getattr(args, "seed", None) is not None:
        set_key(config, "seeds", [args.seed])
    return config.validate()


def cmd_gen_data(args) -> int:
    from mpoxvlm.data.manifest import save_manifest
    from mpoxvlm.data.synth import GeneratorConfig, generate_dataset

    config = load_config(args.config, args.set or ())
    d = config.data
    seed = args.seed
    if seed is None:
        seed = config.seeds[0] if os.environ.get("MPOXVLM_SEED") else d.seed
    gen = GeneratorConfig(
        n_total=d.n_total,
        mpox_fraction=d.mpox_fraction,
        n_mpox=d.n_mpox,
        confound=d.confound,
        image_size=d.image_size,
        split_ratios=tuple(d.split_ratios),
        test_pos_neg=tuple(d.test_pos_neg),
    )
    gen.validate()
    out = Path(args.out or d.dir)
    manifest = generate_dataset(gen, seed)
    save_manifest(manifest, out)
    print(f"wrote {len(manifest.records)} samples to {out} (seed {seed}, config {gen.hash()})")
    for split, c in manifest.counts.items():
        print(f"  {split:5s} {c['total']:5d} samples, {c['mpox']:4d} mpox")
    return 0


def cmd_train(args) -> int:
    from mpoxvlm.eval.evaluate import train_seeds

    config = _config(args)
    out = Path(args.out or config.out)
    stages = None if args.stage == "all" else (args.stage,)
    train_seeds(config, out, stages=stages)
    print(f"trained row {config.row!r} stage {args.stage} for seeds {config.seeds} in {out}")
    return 0


def cmd_eval(args) -> int:
    from mpoxvlm.eval.evaluate import evaluate_model
    from mpoxvlm.eval.metrics import METRICS, format_pm

    config = _config(args)
    out = Path(args.out or config.out)
    report = evaluate_model(config, out, args.split, encoder_dir=args.encoder_dir)
    print(f"{args.split} metrics for row {config.row!r} over seeds {config.seeds}:")
    for m in METRICS:
        print(f"  {m:9s} {format_pm(report.summary[m])}")
    print(f"wrote {out / 'eval' / args.split / 'metrics.json'}")
    return 0


def cmd_ablate(args) -> int:
    from mpoxvlm.eval.evaluate import run_ablation

    config = _config(args)
    out = Path(args.out or config.out)
    run_ablation(config, out, args.split)
    print((out / "ablation.csv").read_text(), end="")
    return 0


def cmd_gradcheck(args) -> int:
    from mpoxvlm.train.gradcheck import run_all

    config = _config(args)
    g = config.gradcheck
    results = run_all(eps=g.eps, seed=args.seed or 0, corrupt=g.corrupt)
    ok = True
    print(f"{'module':18s} {'max rel err':>12s} {'tolerance':>10s}  status")
    for name, (err, tol, passed) in results.items():
        ok &= passed
        print(f"{name:18s} {err:12.3e} {tol:10.0e}  {'pass' if passed else 'FAIL'}")
    return 0 if ok else 2


def report_text(out: Path) -> str:
    from mpoxvlm.eval.metrics import METRICS, format_pm

    lines = []
    ablation = out / "ablation.csv"
    if ablation.is_file():
        with open(ablation) as f:
            rows = list(csv.DictReader(f))
        lines.append("| Configuration | Accuracy | AUROC |")
        lines.append("|---|---|---|")
        for r in rows:
            lines.append(f"| {r['label']} | {r['accuracy']} | {r['auroc']} |")
        lines.append("")
    for path in sorted(out.glob("**/eval/*/metrics.json")):
        doc = json.loads(path.read_text())
        cells = ", ".join(f"{m} {format_pm(doc['summary'][m])}" for m in METRICS)
        lines.append(f"{path.relative_to(out)} [{doc['row']}, {doc['split']}, seeds {doc['seeds']}]: {cells}")
    if not lines:
        raise ValidationFailure(f"no ablation.csv or metrics.json found under {out}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    config = load_config(args.config, args.set or ())
    out = Path(args.out or config.out)
    text = report_text(out)
    (out / "report.md").write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys (set with --set key=value):\n  " + "\n  ".join(describe_keys())
    parser = _Parser(
        prog="mpoxvlm",
        description="Synthetic mpox vision-language benchmark: data, training, evaluation, ablation.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, split=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        p.add_argument("--out", help="output directory")
        if split:
            p.add_argument("--split", default="test", choices=("train", "val", "test"))
        p.epilog = epilog
        p.formatter_class = argparse.RawDescriptionHelpFormatter
        return p

    common(sub.add_parser("gen-data", help="generate the synthetic dataset")).set_defaults(fn=cmd_gen_data)
    p = common(sub.add_parser("train", help="run training stages for every seed"))
    p.add_argument("--stage", default="all", choices=STAGE_CHOICES)
    p.set_defaults(fn=cmd_train)
    p = common(sub.add_parser("eval", help="evaluate trained runs"), split=True)
    p.add_argument("--encoder-dir", help="directory holding shared encoder stages")
    p.set_defaults(fn=cmd_eval)
    common(sub.add_parser("ablate", help="train and evaluate the four ablation rows"), split=True).set_defaults(
        fn=cmd_ablate
    )
    common(sub.add_parser("gradcheck", help="finite-difference gradient checks")).set_defaults(fn=cmd_gradcheck)
    common(sub.add_parser("report", help="summarise ablation and metrics files")).set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    from mpoxvlm.train.pipeline import FreezeViolation, MissingPrerequisite, PipelineError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, GeneratorError, ManifestError, SplitError, MissingPrerequisite,
            CheckpointError, ValidationFailure) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FreezeViolation, PipelineError, FloatingPointError, RuntimeError, OSError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

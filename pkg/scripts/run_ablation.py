"""Generate the default benchmark, run the four-row ablation and write a report.

    python scripts/run_ablation.py --out runs/ablation [--seeds 1,2,3] [--set key=value ...]

Completed stages are reused, so an interrupted run can simply be restarted.
"""
import argparse
import sys
import time
from pathlib import Path

from mpoxvlm.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args()
    out = Path(args.out)
    data = out / "data"
    sets = [f"--set=data.dir={data}", f"--set=seeds={args.seeds}"] + [f"--set={s}" for s in args.set]
    t0 = time.perf_counter()
    if not (data / "manifest.jsonl").is_file():
        rc = cli(["gen-data", "--out", str(data), *sets])
        if rc:
            return rc
    for cmd in (["ablate", "--out", str(out)], ["report", "--out", str(out)]):
        rc = cli([*cmd, *sets])
        if rc:
            return rc
    print(f"total {(time.perf_counter() - t0) / 60:.1f} min")
    return 0


if __name__ == "__main__":
    sys.exit(main())

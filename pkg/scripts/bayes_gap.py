"""Closed-form accuracy ceilings of the synthetic benchmark.

Prints the Bayes decision accuracy per split when the image reveals only its
appearance family, and when the clinical attributes are added. The gap is the
headroom a text-aware model can gain over an image-only classifier.

    python scripts/bayes_gap.py --seed 1 --confound 0.3
"""
import argparse

from mpoxvlm.data.synth import GeneratorConfig, bayes_accuracy, generate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--n-total", type=int, default=980)
    ap.add_argument("--confound", type=float, nargs="+", default=[0.3])
    args = ap.parse_args()
    print(f"{'confound':>8s} {'split':>5s} {'image only':>10s} {'+ attributes':>12s}")
    for gamma in args.confound:
        config = GeneratorConfig(n_total=args.n_total, confound=gamma)
        m = generate_dataset(config, args.seed)
        for split in ("train", "val", "test"):
            attrs = [r.attrs for r in m.split(split)]
            img = bayes_accuracy(attrs, config, use_attributes=False)
            full = bayes_accuracy(attrs, config, use_attributes=True)
            print(f"{gamma:8.2f} {split:>5s} {img:10.3f} {full:12.3f}")


if __name__ == "__main__":
    main()

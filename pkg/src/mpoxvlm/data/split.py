"""Patient-grouped train/val/test assignment with a fixed test class ratio."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from mpoxvlm.data.manifest import DatasetManifest


class SplitError(ValueError):
    pass


def split_targets(n_total: int, n_pos: int, ratios, test_pos_neg) -> dict:
    """Per-split (positive, negative) sample targets.

    The test split follows ``test_pos_neg``; validation follows the overall
    class balance; train receives the remainder.
    """
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3 or min(ratios) <= 0:
        raise SplitError(f"ratios must be three positive numbers, got {ratios}")
    p, q = (float(x) for x in test_pos_neg)
    if p <= 0 or q <= 0:
        raise SplitError(f"test_pos_neg must be positive, got {test_pos_neg}")
    total_r = sum(ratios)
    n_test = int(round(n_total * ratios[2] / total_r))
    n_val = int(round(n_total * ratios[1] / total_r))
    # a test size one sample off the ratio target may hit pos:neg much closer
    best = None
    for size in (n_test, n_test - 1, n_test + 1):
        pos = int(round(size * p / (p + q)))
        if size - pos <= 0:
            continue
        err = abs(pos / (size - pos) - p / q)
        if best is None or err < best[0] - 1e-12:
            best = (err, size, pos)
    if best is None:
        raise SplitError(f"test split of {n_test} samples cannot hold both classes")
    _, n_test, test_pos = best
    val_pos = int(round(n_val * n_pos / n_total))
    targets = {
        "test": (test_pos, n_test - test_pos),
        "val": (val_pos, n_val - val_pos),
    }
    n_neg = n_total - n_pos
    train_pos = n_pos - test_pos - val_pos
    train_neg = n_neg - (n_test - test_pos) - (n_val - val_pos)
    if train_pos < 0 or train_neg < 0:
        raise SplitError(
            f"infeasible split: {n_pos} positives / {n_neg} negatives cannot supply "
            f"test {targets['test']} and val {targets['val']}"
        )
    targets["train"] = (train_pos, train_neg)
    return targets


def _fill(groups: list, target: int) -> tuple:
    """Greedily take groups that fit without overshooting ``target``."""
    taken, rest, remaining = [], [], target
    for pid, size in groups:
        if 0 < size <= remaining:
            taken.append(pid)
            remaining -= size
        else:
            rest.append((pid, size))
    return taken, rest


def split_dataset(manifest: DatasetManifest, ratios, test_pos_neg, seed: int) -> DatasetManifest:
    by_patient: dict = {}
    label_of: dict = {}
    for r in manifest.records:
        pid = r.attrs.patient_id
        by_patient[pid] = by_patient.get(pid, 0) + 1
        if label_of.setdefault(pid, r.label) != r.label:
            raise SplitError(f"patient {pid} has samples of both classes")

    n_pos = sum(1 for r in manifest.records if r.label)
    targets = split_targets(len(manifest.records), n_pos, ratios, test_pos_neg)

    rng = np.random.default_rng(seed)
    pids = np.array(sorted(by_patient))
    pids = pids[rng.permutation(len(pids))]
    pools = {
        True: [(int(p), by_patient[p]) for p in pids if label_of[p]],
        False: [(int(p), by_patient[p]) for p in pids if not label_of[p]],
    }

    assignment = {}
    for split in ("test", "val"):
        for cls, target in zip((True, False), targets[split]):
            taken, pools[cls] = _fill(pools[cls], target)
            assignment.update({p: split for p in taken})
    for cls in (True, False):
        assignment.update({p: "train" for p, _ in pools[cls]})

    records = tuple(r.with_split(assignment[r.attrs.patient_id]) for r in manifest.records)
    return replace(manifest, records=records, counts=None)

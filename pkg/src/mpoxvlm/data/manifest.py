"""Dataset manifest and its on-disk form.

Layout::

    <dir>/generator.json   config, master seed, schema version, counts
    <dir>/manifest.jsonl   one record per line
    <dir>/images/*.png     8-bit RGB renders
"""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from mpoxvlm.data.synth import ClinicalAttributes, GeneratorConfig
from mpoxvlm.data.vqa import VqaInstance

SCHEMA_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    sample_id: int
    attrs: ClinicalAttributes
    image: str
    gen_seed: int
    caption: str
    vqa: VqaInstance

    @property
    def split(self):
        return self.vqa.split

    @property
    def label(self) -> bool:
        return self.vqa.label

    def with_split(self, split: str) -> "Record":
        return replace(self, vqa=replace(self.vqa, split=split))

    def to_json(self) -> dict:
        a = self.attrs
        return {
            "sample_id": self.sample_id,
            "patient_id": a.patient_id,
            "fitzpatrick": a.fitzpatrick,
            "body_part": a.body_part,
            "age_group": a.age_group,
            "gender_presentation": a.gender_presentation,
            "disease_id": a.disease_id,
            "stage": a.stage,
            "split": self.vqa.split,
            "image": self.image,
            "gen_seed": self.gen_seed,
            "caption": self.caption,
            "context_text": self.vqa.context_text,
            "question_text": self.vqa.question_text,
            "options": list(self.vqa.options),
            "answer": self.vqa.answer,
            "label": self.vqa.label,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Record":
        attrs = ClinicalAttributes(
            patient_id=d["patient_id"],
            fitzpatrick=d["fitzpatrick"],
            body_part=d["body_part"],
            age_group=d["age_group"],
            gender_presentation=d["gender_presentation"],
            disease_id=d["disease_id"],
            stage=d["stage"],
        )
        vqa = VqaInstance(
            image_ref=d["image"],
            context_text=d["context_text"],
            question_text=d["question_text"],
            options=tuple(d["options"]),
            answer=d["answer"],
            label=d["label"],
            split=d["split"],
        )
        if vqa.label != attrs.is_mpox:
            raise ManifestError("label disagrees with disease_id")
        return cls(d["sample_id"], attrs, d["image"], d["gen_seed"], d["caption"], vqa)


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    config: GeneratorConfig
    seed: int
    config_hash: str
    counts: dict = field(default=None, compare=True)

    def __post_init__(self):
        actual = self.compute_counts(self.records)
        if self.counts is None:
            object.__setattr__(self, "counts", actual)
        elif self.counts != actual:
            raise ManifestError(f"declared counts {self.counts} differ from actual {actual}")

    @staticmethod
    def compute_counts(records) -> dict:
        c = Counter(r.split or "unassigned" for r in records)
        pos = Counter(r.split or "unassigned" for r in records if r.label)
        return {k: {"total": c[k], "mpox": pos[k]} for k in sorted(c)}

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def patient_splits(self) -> dict:
        out: dict = {}
        for r in self.records:
            out.setdefault(r.attrs.patient_id, set()).add(r.split)
        return out


def manifest_lines(manifest: DatasetManifest) -> list:
    return [json.dumps(r.to_json()) for r in manifest.records]


def save_manifest(manifest: DatasetManifest, directory, render: bool = True) -> Path:
    from mpoxvlm.data.render import render_image

    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    if render:
        size = manifest.config.image_size
        for r in manifest.records:
            pixels = render_image(r.attrs, r.gen_seed, size)
            save_png(pixels, directory / r.image)
    header = {
        "schema_version": SCHEMA_VERSION,
        "seed": manifest.seed,
        "config_hash": manifest.config_hash,
        "config": manifest.config.to_json(),
        "counts": manifest.counts,
    }
    (directory / "generator.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    (directory / "manifest.jsonl").write_text("\n".join(manifest_lines(manifest)) + "\n")
    return directory


def load_manifest(directory, check_images: bool = True) -> DatasetManifest:
    directory = Path(directory)
    try:
        header = json.loads((directory / "generator.json").read_text())
    except FileNotFoundError as e:
        raise ManifestError(f"missing {directory / 'generator.json'}") from e
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(
            f"schema_version {header.get('schema_version')!r} is not supported (expected {SCHEMA_VERSION})"
        )
    records = []
    with open(directory / "manifest.jsonl") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(Record.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ManifestError(f"manifest.jsonl line {lineno}: {e}") from e
    if check_images:
        for r in records:
            path = directory / r.image
            if not path.is_file():
                raise ManifestError(f"missing image file {path}")
    config = GeneratorConfig.from_json(header["config"])
    return DatasetManifest(
        records=tuple(records),
        config=config,
        seed=header["seed"],
        config_hash=header["config_hash"],
        counts=header["counts"],
    )


def data_hash(directory) -> str:
    return hashlib.sha256((Path(directory) / "manifest.jsonl").read_bytes()).hexdigest()[:16]


def save_png(pixels: np.ndarray, path) -> None:
    arr = np.round(np.clip(pixels, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG", optimize=False)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0

"""Deterministic synthetic clinical dataset with a planted image-level confound.

Three latent sources produce samples:

* ``mpox``   -- positives, lesions rendered with the mpox appearance;
* ``mimic``  -- a fraction ``confound`` of negatives drawn from visual-mimic
  diseases, rendered with the *same* appearance as mpox;
* ``other``  -- remaining negatives with disease-specific appearances.

Mimic patients skew toward children and acral/facial body parts, so clinical
attributes disambiguate what the image cannot. Because every distribution is
known, the Bayes-optimal posterior is available in closed form.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from mpoxvlm.data import vocab

SOURCES = ("mpox", "mimic", "other")

AGE_DIST = {
    "mpox": {"adult": 0.92, "child": 0.08},
    "mimic": {"adult": 0.30, "child": 0.70},
    "other": {"adult": 0.75, "child": 0.25},
}
GENDER_DIST = {
    "mpox": {"male": 0.80, "female": 0.12, "unknown": 0.08},
    "mimic": {"male": 0.45, "female": 0.45, "unknown": 0.10},
    "other": {"male": 0.50, "female": 0.42, "unknown": 0.08},
}
# Body part probabilities for codes 0..11.
BODY_DIST = {
    "mpox": (0.02, 0.10, 0.03, 0.10, 0.08, 0.08, 0.06, 0.12, 0.02, 0.25, 0.12, 0.02),
    "mimic": (0.01, 0.25, 0.20, 0.05, 0.05, 0.10, 0.09, 0.20, 0.01, 0.01, 0.01, 0.02),
    "other": (0.02, 0.09, 0.08, 0.11, 0.11, 0.13, 0.11, 0.11, 0.06, 0.07, 0.04, 0.07),
}
# Skin type is drawn identically for every source and carries no label signal.
FITZPATRICK_DIST = (0.0, 0.16, 0.18, 0.18, 0.17, 0.16, 0.15)

OTHER_DISEASES = tuple(
    d for d in range(1, 87) if d not in vocab.MIMICS
)


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class ClinicalAttributes:
    patient_id: int
    fitzpatrick: int
    body_part: int
    age_group: str
    gender_presentation: str
    disease_id: int
    stage: Optional[str] = None

    def __post_init__(self):
        if self.patient_id < 0:
            raise GeneratorError(f"patient_id must be >= 0, got {self.patient_id}")
        if self.fitzpatrick not in vocab.FITZPATRICK:
            raise GeneratorError(f"fitzpatrick code {self.fitzpatrick} outside [0, 6]")
        if self.body_part not in vocab.BODY_PARTS:
            raise GeneratorError(f"body_part code {self.body_part} outside [0, 11]")
        if self.disease_id not in vocab.DISEASES:
            raise GeneratorError(f"disease_id {self.disease_id} is not a known code")
        if self.age_group not in vocab.AGE_GROUPS:
            raise GeneratorError(f"age_group {self.age_group!r} not in {vocab.AGE_GROUPS}")
        if self.gender_presentation not in vocab.GENDERS:
            raise GeneratorError(
                f"gender_presentation {self.gender_presentation!r} not in {vocab.GENDERS}"
            )
        is_mpox = self.disease_id == vocab.MPOX
        if is_mpox and self.stage not in vocab.STAGES:
            raise GeneratorError(f"mpox sample needs a stage from {vocab.STAGES}")
        if not is_mpox and self.stage is not None:
            raise GeneratorError("stage is only annotated for mpox samples")

    @property
    def is_mpox(self) -> bool:
        return self.disease_id == vocab.MPOX

    @property
    def mpox_like(self) -> bool:
        """Whether the lesion is rendered with the mpox appearance."""
        return self.is_mpox or self.disease_id in vocab.MIMICS


@dataclass(frozen=True)
class GeneratorConfig:
    n_total: int = 980
    mpox_fraction: float = 1057 / 2914
    n_mpox: Optional[int] = None
    confound: float = 0.3
    image_size: int = 64
    split_ratios: tuple = (5.0, 1.0, 1.0)
    test_pos_neg: tuple = (4.0, 7.0)

    def __post_init__(self):
        object.__setattr__(self, "split_ratios", tuple(float(r) for r in self.split_ratios))
        object.__setattr__(self, "test_pos_neg", tuple(float(r) for r in self.test_pos_neg))

    def validate(self):
        if self.n_total < 20:
            raise GeneratorError(f"n_total must be >= 20, got {self.n_total}")
        if not 0.0 < self.mpox_fraction < 1.0:
            raise GeneratorError(f"mpox_fraction must lie in (0, 1), got {self.mpox_fraction}")
        if self.n_mpox is not None and not 0 < self.n_mpox < self.n_total:
            raise GeneratorError(f"n_mpox must lie in (0, n_total), got {self.n_mpox}")
        if not 0.0 <= self.confound <= 1.0:
            raise GeneratorError(f"confound must lie in [0, 1], got {self.confound}")
        if self.image_size < 8:
            raise GeneratorError(f"image_size must be >= 8, got {self.image_size}")
        if len(self.split_ratios) != 3 or min(self.split_ratios) <= 0:
            raise GeneratorError(f"split_ratios must be 3 positive values, got {self.split_ratios}")
        if len(self.test_pos_neg) != 2 or min(self.test_pos_neg) <= 0:
            raise GeneratorError(f"test_pos_neg must be 2 positive values, got {self.test_pos_neg}")

    def source_counts(self) -> dict:
        n_pos = self.n_mpox if self.n_mpox is not None else int(round(self.n_total * self.mpox_fraction))
        n_neg = self.n_total - n_pos
        n_mimic = int(round(self.confound * n_neg))
        return {"mpox": n_pos, "mimic": n_mimic, "other": n_neg - n_mimic}

    def to_json(self) -> dict:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        d["test_pos_neg"] = list(self.test_pos_neg)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def sub_seed(*keys: int) -> int:
    """Derive a 32-bit seed from a tuple of non-negative integer keys."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _choice(rng, dist: dict):
    keys = list(dist)
    return keys[rng.choice(len(keys), p=[dist[k] for k in keys])]


def sample_patient(rng, source: str, n_samples: int, patient_id: int) -> list:
    """Draw one patient's samples; age, gender, skin type and disease are shared."""
    age = _choice(rng, AGE_DIST[source])
    gender = _choice(rng, GENDER_DIST[source])
    fitz = int(rng.choice(7, p=FITZPATRICK_DIST))
    if source == "mpox":
        disease = vocab.MPOX
    elif source == "mimic":
        disease = int(rng.choice(vocab.MIMICS))
    else:
        disease = int(rng.choice(OTHER_DISEASES))
    out = []
    for _ in range(n_samples):
        body = int(rng.choice(12, p=BODY_DIST[source]))
        stage = vocab.STAGES[rng.integers(len(vocab.STAGES))] if source == "mpox" else None
        out.append(ClinicalAttributes(patient_id, fitz, body, age, gender, disease, stage))
    return out


def attribute_likelihood(attrs: ClinicalAttributes, source: str) -> float:
    """P(age, gender, body part | source); skin type cancels across sources."""
    return (
        AGE_DIST[source][attrs.age_group]
        * GENDER_DIST[source][attrs.gender_presentation]
        * BODY_DIST[source][attrs.body_part]
    )


def bayes_posterior(attrs: ClinicalAttributes, config: GeneratorConfig, use_attributes: bool) -> float:
    """Exact P(mpox | evidence) under the generator.

    The image is treated as revealing its appearance family (mpox-like or
    not); ``use_attributes`` adds the clinical attributes to the evidence.
    """
    counts = config.source_counts()
    if not attrs.mpox_like:
        return 0.0
    w_pos = float(counts["mpox"])
    w_mimic = float(counts["mimic"])
    if use_attributes:
        w_pos *= attribute_likelihood(attrs, "mpox")
        w_mimic *= attribute_likelihood(attrs, "mimic")
    if w_pos + w_mimic == 0.0:
        return 0.5
    return w_pos / (w_pos + w_mimic)


def bayes_accuracy(attrs_list, config: GeneratorConfig, use_attributes: bool) -> float:
    """Accuracy of the Bayes decision rule (posterior > 0.5) on given samples."""
    correct = 0
    for a in attrs_list:
        pred = bayes_posterior(a, config, use_attributes) > 0.5
        correct += int(pred == a.is_mpox)
    return correct / len(attrs_list)


def generate_attributes(config: GeneratorConfig, seed: int) -> list:
    """Sample all ClinicalAttributes, ordered by patient id then sample."""
    config.validate()
    if seed < 0:
        raise GeneratorError(f"seed must be >= 0, got {seed}")
    rng = np.random.default_rng(sub_seed(seed, 0))
    patients = []
    for source in SOURCES:
        remaining = config.source_counts()[source]
        while remaining > 0:
            size = min(int(rng.integers(1, 4)), remaining)
            patients.append((source, size))
            remaining -= size
    order = rng.permutation(len(patients))
    out = []
    for pid, idx in enumerate(order):
        source, size = patients[idx]
        out.extend(sample_patient(rng, source, size, pid))
    return out


def generate_dataset(config: GeneratorConfig, seed: int):
    """Build a split, patient-grouped manifest. Pure function of its inputs."""
    from mpoxvlm.data.manifest import DatasetManifest, Record
    from mpoxvlm.data.render import caption_for
    from mpoxvlm.data.split import split_dataset
    from mpoxvlm.data.vqa import build_vqa

    attrs_list = generate_attributes(config, seed)
    records = []
    for i, attrs in enumerate(attrs_list):
        gen_seed = sub_seed(seed, 1, i)
        image = f"images/{i:05d}.png"
        records.append(
            Record(
                sample_id=i,
                attrs=attrs,
                image=image,
                gen_seed=gen_seed,
                caption=caption_for(attrs, gen_seed),
                vqa=build_vqa(attrs, image_ref=image),
            )
        )
    manifest = DatasetManifest(
        records=tuple(records), config=config, seed=seed, config_hash=config.hash()
    )
    return split_dataset(
        manifest, config.split_ratios, config.test_pos_neg, sub_seed(seed, 2)
    )

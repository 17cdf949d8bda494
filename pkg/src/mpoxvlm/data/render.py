"""Procedural lesion images.

Background tone depends only on skin type. Lesion parameters depend only on
(disease, stage); mimic diseases borrow the mpox parameters at a stage drawn
from the per-image seed, so they are visually indistinguishable from mpox.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mpoxvlm.data import vocab

# Luminance-ordered RGB skin tones for Fitzpatrick types 1..6; 0 (unknown)
# renders with the type-3 tone.
_TONES = np.array(
    [
        [0.96, 0.84, 0.76],
        [0.90, 0.74, 0.62],
        [0.80, 0.62, 0.48],
        [0.66, 0.48, 0.34],
        [0.48, 0.33, 0.22],
        [0.32, 0.21, 0.14],
    ]
)

_MPOX_COLORS = {
    "macule": (0.80, 0.36, 0.34),
    "papule": (0.78, 0.32, 0.30),
    "vesicle": (0.92, 0.82, 0.74),
    "pustule": (0.95, 0.88, 0.62),
    "umbilicated pustule": (0.94, 0.86, 0.60),
    "ulceration": (0.62, 0.20, 0.18),
    "crusting": (0.45, 0.28, 0.16),
    "scab": (0.30, 0.18, 0.10),
    "scar": (0.86, 0.66, 0.62),
}

_HALO = (0.85, 0.32, 0.28)

_COLOR_NAMES = {
    "red": (0.80, 0.30, 0.30),
    "pink": (0.90, 0.62, 0.62),
    "brown": (0.45, 0.28, 0.16),
    "yellow": (0.94, 0.86, 0.58),
    "white": (0.94, 0.90, 0.86),
    "purple": (0.50, 0.28, 0.48),
    "dark": (0.22, 0.14, 0.10),
}


@dataclass(frozen=True)
class LesionParams:
    count_lo: int
    count_hi: int
    radius: float
    size_jitter: float
    elongation: float
    umbilication: float
    color: tuple
    texture: float
    halo: float = 0.0  # strength of the inflamed rim around each lesion


def skin_tone(fitzpatrick: int) -> np.ndarray:
    code = 3 if fitzpatrick == 0 else fitzpatrick
    return _TONES[code - 1]


def mpox_params(stage: str) -> LesionParams:
    i = vocab.STAGES.index(stage)
    return LesionParams(
        count_lo=3,
        count_hi=7,
        radius=3.6 + 0.2 * i,
        size_jitter=0.08,
        elongation=1.0,
        umbilication=0.7 + 0.02 * i,
        color=_MPOX_COLORS[stage],
        texture=0.02,
        halo=0.8,
    )


def disease_params(disease_id: int) -> LesionParams:
    """Appearance of a non-mimic diagnosis, fixed per disease code."""
    rng = np.random.default_rng(10_000 + disease_id)
    lo = int(rng.integers(1, 6))
    names = [c for c in _COLOR_NAMES if c != "red"]  # red belongs to the inflamed mpox rim
    base = np.array(_COLOR_NAMES[names[rng.integers(len(names))]])
    color = np.clip(base + rng.normal(0, 0.05, 3), 0, 1)
    return LesionParams(
        count_lo=lo,
        count_hi=lo + int(rng.integers(1, 7)),
        radius=float(rng.uniform(2.0, 5.0)),
        size_jitter=float(rng.uniform(0.1, 0.5)),
        elongation=float(rng.uniform(1.0, 2.2)),
        umbilication=0.0,
        color=tuple(float(c) for c in color),
        texture=float(rng.uniform(0.0, 0.08)),
    )


def lesion_params(attrs, gen_seed: int) -> LesionParams:
    if attrs.is_mpox:
        return mpox_params(attrs.stage)
    if attrs.disease_id in vocab.MIMICS:
        rng = np.random.default_rng([gen_seed, 1])
        return mpox_params(vocab.STAGES[rng.integers(len(vocab.STAGES))])
    return disease_params(attrs.disease_id)


def render_image(attrs, gen_seed: int, size: int = 64) -> np.ndarray:
    """Return an (size, size, 3) float array in [0, 1]; pure in its inputs."""
    rng = np.random.default_rng([gen_seed, 0])
    params = lesion_params(attrs, gen_seed)
    scale = size / 64.0

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.broadcast_to(skin_tone(attrs.fitzpatrick), (size, size, 3)).copy()
    # Low-frequency shading so backgrounds are not perfectly flat.
    phase = rng.uniform(0, 2 * np.pi, 2)
    shade = 0.03 * np.sin(2 * np.pi * xx / size + phase[0]) * np.cos(2 * np.pi * yy / size + phase[1])
    img += shade[..., None]

    color = np.asarray(params.color)
    n = int(rng.integers(params.count_lo, params.count_hi + 1))
    for _ in range(n):
        r = params.radius * scale * max(0.3, 1.0 + params.size_jitter * rng.standard_normal())
        cy, cx = rng.uniform(r, size - r, 2)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        d = np.sqrt((u / params.elongation) ** 2 + v**2)
        if params.halo > 0:
            ring = params.halo * np.exp(-(((d - 1.35 * r) / (0.3 * r)) ** 2))
            img = img * (1 - ring[..., None]) + np.asarray(_HALO) * ring[..., None]
        alpha = 1.0 / (1.0 + np.exp((d - r) / (0.35 * scale + 0.05)))
        blob = color + params.texture * rng.standard_normal(3)
        img = img * (1 - alpha[..., None]) + blob * alpha[..., None]
        if params.umbilication > 0:
            core = np.exp(-(d**2) / (2 * (0.3 * r) ** 2))
            img = img * (1 - params.umbilication * core[..., None]) + (
                0.25 * color * params.umbilication * core[..., None]
            )

    img += rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)


def _nearest_color(color) -> str:
    c = np.asarray(color)
    return min(_COLOR_NAMES, key=lambda k: float(np.sum((np.asarray(_COLOR_NAMES[k]) - c) ** 2)))


def caption_for(attrs, gen_seed: int) -> str:
    """Generic visual description used for contrastive encoder pretraining.

    Describes tone, count, size, color and shape but not the central-core
    detail, so it is not a diagnosis in disguise.
    """
    params = lesion_params(attrs, gen_seed)
    fitz = 3 if attrs.fitzpatrick == 0 else attrs.fitzpatrick
    tone = ("light", "light", "medium", "medium", "dark", "dark")[fitz - 1]
    mean_count = (params.count_lo + params.count_hi) / 2
    count = "few" if mean_count <= 3 else ("several" if mean_count <= 7 else "many")
    size = "small" if params.radius < 3.5 else ("medium" if params.radius < 5.5 else "large")
    shape = "round" if params.elongation < 1.4 else "oval"
    return f"{tone} skin with {count} {size} {_nearest_color(params.color)} {shape} lesions"


def caption_lexicon() -> list:
    """Every word a caption can contain."""
    return ["light", "medium", "dark", "skin", "with", "few", "several", "many",
            "small", "large", "round", "oval", "lesions", *_COLOR_NAMES]

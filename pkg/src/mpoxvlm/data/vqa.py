"""Visual question answering instances built from clinical attributes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from mpoxvlm.data import vocab

QUESTION = "After reviewing this skin lesion image, do you think the patient has mpox?"
MPOX_OPTION = "mpox"
NON_MPOX_OPTION = "non-mpox"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class VqaTemplate:
    question: str = QUESTION
    options: tuple = (MPOX_OPTION, NON_MPOX_OPTION)
    context: str = (
        "patient profile : age group {age} , gender {gender} , "
        "skin type {skin} , body part {body} ."
    )


@dataclass(frozen=True)
class VqaInstance:
    image_ref: str
    context_text: str
    question_text: str
    options: tuple
    answer: str
    label: bool
    split: Optional[str] = None

    def __post_init__(self):
        if len(self.options) != 2:
            raise ValueError(f"exactly two options are required, got {len(self.options)}")
        if self.answer not in self.options:
            raise ValueError(f"answer {self.answer!r} is not one of {self.options}")
        if self.label != (self.answer == self.options[0]):
            raise ValueError("label must be true exactly when the answer is the mpox option")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def mpox_option(self) -> str:
        return self.options[0]

    @property
    def non_mpox_option(self) -> str:
        return self.options[1]


def render_context(attrs, template: VqaTemplate = VqaTemplate()) -> str:
    # Stage is deliberately absent: it is annotated only for mpox and would leak the label.
    skin = "unknown" if attrs.fitzpatrick == 0 else str(attrs.fitzpatrick)
    return template.context.format(
        age=attrs.age_group,
        gender=attrs.gender_presentation,
        skin=skin,
        body=vocab.BODY_PARTS[attrs.body_part].lower(),
    )


def build_vqa(attrs, template: VqaTemplate = VqaTemplate(), image_ref: str = "", split=None) -> VqaInstance:
    answer = template.options[0] if attrs.is_mpox else template.options[1]
    return VqaInstance(
        image_ref=image_ref,
        context_text=render_context(attrs, template),
        question_text=template.question,
        options=tuple(template.options),
        answer=answer,
        label=attrs.is_mpox,
        split=split,
    )


def lexicon_corpus(template: VqaTemplate = VqaTemplate()) -> list:
    """Strings covering every word the templates can produce."""
    from mpoxvlm.data.render import caption_lexicon
    from mpoxvlm.fusion.sequence import options_text

    contexts = [
        template.context.format(
            age=age,
            gender=gender,
            skin="unknown" if skin == 0 else str(skin),
            body=vocab.BODY_PARTS[body].lower(),
        )
        for age in vocab.AGE_GROUPS
        for gender in vocab.GENDERS
        for skin in vocab.FITZPATRICK
        for body in vocab.BODY_PARTS
    ]
    return [
        *contexts,
        template.question,
        options_text(template.options),
        *template.options,
        " ".join(caption_lexicon()),
    ]

"""The four component configurations compared in the ablation table."""
from __future__ import annotations

from dataclasses import dataclass

from mpoxvlm.fusion.sequence import IncludeFlags


@dataclass(frozen=True)
class AblationConfig:
    name: str
    label: str
    use_classifier_token: bool
    use_clip_tokens: bool
    use_text_context: bool
    use_llm: bool

    def __post_init__(self):
        classifier_only = self.use_classifier_token and not (
            self.use_clip_tokens or self.use_text_context
        )
        if not self.use_llm and not classifier_only:
            raise ValueError("only the classifier-only row may run without the language model")
        if self.use_llm and not self.use_clip_tokens:
            raise ValueError("language-model rows always include the CLIP tokens")

    @property
    def include(self) -> IncludeFlags:
        return IncludeFlags(
            context=self.use_text_context,
            cls_token=self.use_classifier_token,
            clip_tokens=self.use_clip_tokens,
        )

    def flags(self) -> dict:
        return {
            "classifier": self.use_classifier_token,
            "clip": self.use_clip_tokens,
            "text": self.use_text_context,
            "llm": self.use_llm,
        }


ROWS = {
    "classifier": AblationConfig("classifier", "Classifier", True, False, False, False),
    "clip_llm": AblationConfig("clip_llm", "CLIP+LLM", False, True, False, True),
    "clip_text_llm": AblationConfig("clip_text_llm", "CLIP+Text+LLM", False, True, True, True),
    "full": AblationConfig("full", "Classifier+CLIP+Text+LLM", True, True, True, True),
}

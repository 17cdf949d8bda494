"""Closed-world word-level tokenizer with byte fallback.

Text is split on single spaces. Lexicon words map to one id each; any other
word is spelled out as byte tokens, with a 0x20 byte token separating two
consecutive spelled-out words so decoding restores the space.
"""
from __future__ import annotations

from pathlib import Path

PAD, BOS, EOS, SEP = "<pad>", "<bos>", "<eos>", "<sep>"
SPECIALS = (PAD, BOS, EOS, SEP)
_BYTES = tuple(f"<0x{b:02X}>" for b in range(256))


class TextTokenizer:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        if tuple(tokens[len(SPECIALS) : len(SPECIALS) + 256]) != _BYTES:
            raise ValueError("vocabulary must list the 256 byte tokens after the specials")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}
        self.pad_id, self.bos_id, self.eos_id, self.sep_id = range(4)
        self._byte0 = len(SPECIALS)

    @classmethod
    def from_corpus(cls, texts) -> "TextTokenizer":
        words = sorted({w for t in texts for w in t.split(" ") if w})
        words = [w for w in words if w not in SPECIALS and w not in _BYTES]
        return cls([*SPECIALS, *_BYTES, *words])

    def __len__(self) -> int:
        return len(self.tokens)

    def is_byte(self, i: int) -> bool:
        return self._byte0 <= i < self._byte0 + 256

    def encode(self, text: str) -> list:
        out = []
        prev_bytes = False
        for word in text.split(" "):
            if word in self.ids and word not in SPECIALS:
                out.append(self.ids[word])
                prev_bytes = False
                continue
            if prev_bytes:
                out.append(self._byte0 + 0x20)
            out.extend(self._byte0 + b for b in word.encode("utf-8"))
            prev_bytes = True
        return out

    def decode(self, ids) -> str:
        words, buf = [], bytearray()
        for i in ids:
            i = int(i)
            if self.is_byte(i):
                buf.append(i - self._byte0)
                continue
            if buf:
                words.append(buf.decode("utf-8", errors="replace"))
                buf = bytearray()
            if i < len(SPECIALS):
                continue
            words.append(self.tokens[i])
        if buf:
            words.append(buf.decode("utf-8", errors="replace"))
        return " ".join(words)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "TextTokenizer":
        return cls(Path(path).read_text().splitlines())

"""Tokenizers feeding the models.

``WhitespaceTokenizer`` builds a word-level vocabulary from a corpus and runs
fully offline; it backs the tiny randomly initialized models used in tests
and toy runs. ``PretrainedTokenizer`` adapts a HuggingFace tokenizer to the
same minimal protocol for runs starting from a published checkpoint.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterable, Sequence

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

PAD, UNK, BOS, EOS, SEP, CLS, IMP = (
    "[PAD]",
    "[UNK]",
    "[BOS]",
    "[EOS]",
    "[SEP]",
    "[CLS]",
    "[IMP]",
)
_BASE_SPECIALS = (PAD, UNK, BOS, EOS, SEP, CLS)


class WhitespaceTokenizer:
    """Word-level tokenizer: lowercase, punctuation split, fixed vocabulary."""

    def __init__(self, vocab: dict[str, int]):
        for special in _BASE_SPECIALS:
            if special not in vocab:
                raise ValueError(f"vocab is missing special token {special}")
        self.vocab = dict(vocab)
        self._inverse = {i: t for t, i in self.vocab.items()}

    @classmethod
    def build(cls, texts: Iterable[str]) -> "WhitespaceTokenizer":
        vocab = {tok: i for i, tok in enumerate(_BASE_SPECIALS)}
        for text in texts:
            for token in cls.tokenize(text):
                if token not in vocab:
                    vocab[token] = len(vocab)
        return cls(vocab)

    @staticmethod
    def tokenize(text: str) -> list[str]:
        return _TOKEN_RE.findall(text.lower())

    def tokenize_with_offsets(self, text: str) -> tuple[list[str], list[tuple[int, int]]]:
        tokens: list[str] = []
        offsets: list[tuple[int, int]] = []
        for match in _TOKEN_RE.finditer(text.lower()):
            tokens.append(match.group())
            offsets.append((match.start(), match.end()))
        return tokens, offsets

    def encode(self, text: str) -> list[int]:
        unk = self.vocab[UNK]
        return [self.vocab.get(t, unk) for t in self.tokenize(text)]

    def encode_with_offsets(self, text: str) -> tuple[list[int], list[tuple[int, int]]]:
        tokens, offsets = self.tokenize_with_offsets(text)
        unk = self.vocab[UNK]
        return [self.vocab.get(t, unk) for t in tokens], offsets

    def decode(self, ids: Sequence[int], skip_special: bool = True) -> str:
        specials = set(_BASE_SPECIALS) | {IMP}
        tokens = []
        for i in ids:
            token = self._inverse.get(int(i), UNK)
            if skip_special and token in specials:
                continue
            tokens.append(token)
        return " ".join(tokens)

    def add_imp_token(self) -> int:
        if IMP not in self.vocab:
            self.vocab[IMP] = len(self.vocab)
            self._inverse[self.vocab[IMP]] = IMP
        return self.vocab[IMP]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        return self.vocab[PAD]

    @property
    def unk_id(self) -> int:
        return self.vocab[UNK]

    @property
    def bos_id(self) -> int:
        return self.vocab[BOS]

    @property
    def eos_id(self) -> int:
        return self.vocab[EOS]

    @property
    def sep_id(self) -> int:
        return self.vocab[SEP]

    @property
    def cls_id(self) -> int:
        return self.vocab[CLS]

    @property
    def imp_id(self) -> int | None:
        return self.vocab.get(IMP)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.vocab, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "WhitespaceTokenizer":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


class PretrainedTokenizer:
    """Thin adapter over a HuggingFace tokenizer for published checkpoints."""

    def __init__(self, hf_tokenizer):
        self.hf = hf_tokenizer

    @classmethod
    def from_name(cls, name: str, cache_dir: str | None = None) -> "PretrainedTokenizer":
        from transformers import AutoTokenizer

        return cls(AutoTokenizer.from_pretrained(name, cache_dir=cache_dir))

    def encode(self, text: str) -> list[int]:
        return self.hf(text, add_special_tokens=False)["input_ids"]

    def encode_with_offsets(self, text: str) -> tuple[list[int], list[tuple[int, int]]]:
        enc = self.hf(text, add_special_tokens=False, return_offsets_mapping=True)
        return enc["input_ids"], [tuple(o) for o in enc["offset_mapping"]]

    def decode(self, ids: Sequence[int], skip_special: bool = True) -> str:
        return self.hf.decode(ids, skip_special_tokens=skip_special).strip()

    def add_imp_token(self) -> int:
        self.hf.add_special_tokens({"additional_special_tokens": [IMP]})
        return self.hf.convert_tokens_to_ids(IMP)

    @property
    def vocab_size(self) -> int:
        return len(self.hf)

    @property
    def pad_id(self) -> int:
        return self.hf.pad_token_id

    @property
    def bos_id(self) -> int:
        return self.hf.bos_token_id if self.hf.bos_token_id is not None else self.hf.cls_token_id

    @property
    def eos_id(self) -> int:
        return self.hf.eos_token_id if self.hf.eos_token_id is not None else self.hf.sep_token_id

    @property
    def sep_id(self) -> int:
        return self.hf.sep_token_id if self.hf.sep_token_id is not None else self.hf.eos_token_id

    @property
    def cls_id(self) -> int:
        return self.hf.cls_token_id if self.hf.cls_token_id is not None else self.hf.bos_token_id

    @property
    def imp_id(self) -> int | None:
        idx = self.hf.convert_tokens_to_ids(IMP)
        return None if idx is None or idx == self.hf.unk_token_id else idx

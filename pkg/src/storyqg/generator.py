"""Recursive generation: per section and wh-type, decode with beam search,
exclude already-generated questions, and feed accepted questions back as
history for the next iteration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .corpus import Section
from .inputs import EncoderInput
from .textutils import WH_WORDS, normalize_question


class GenerationError(RuntimeError):
    """Decoder produced no usable hypotheses."""


@dataclass(frozen=True)
class GenerationConfig:
    questions_per_type: int = 4
    beam_size: int = 5
    max_new_tokens: int = 64
    types: tuple[str, ...] = WH_WORDS
    max_input_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.questions_per_type < 1:
            raise ValueError("questions_per_type must be >= 1")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        unknown = [t for t in self.types if t not in WH_WORDS]
        if unknown or not self.types:
            raise ValueError(f"types must be a non-empty subset of {WH_WORDS}")

    @property
    def questions_per_section(self) -> int:
        return self.questions_per_type * len(self.types)


@dataclass(frozen=True)
class GeneratedQuestion:
    story_id: str
    section_id: str
    question_type: str
    iteration: int
    beam_rank: int
    text: str
    fallback_duplicate: bool = False

    def to_record(self) -> dict:
        return {
            "story_id": self.story_id,
            "section_id": self.section_id,
            "question_type": self.question_type,
            "iteration": self.iteration,
            "beam_rank": self.beam_rank,
            "text": self.text,
            "fallback_duplicate": self.fallback_duplicate,
        }

    @classmethod
    def from_record(cls, record: dict) -> "GeneratedQuestion":
        return cls(
            story_id=record["story_id"],
            section_id=record["section_id"],
            question_type=record["question_type"],
            iteration=int(record["iteration"]),
            beam_rank=int(record["beam_rank"]),
            text=record["text"],
            fallback_duplicate=bool(record.get("fallback_duplicate", False)),
        )


class Decoder(Protocol):
    """Anything that returns ranked hypotheses for an encoder input."""

    def beam_candidates(
        self,
        encoder_input: EncoderInput,
        beam_size: int,
        max_new_tokens: int,
        max_input_tokens: int = 1024,
    ) -> list[str]: ...


def initial_input(section: Section, question_type: str) -> EncoderInput:
    """First-iteration input: type prefix and context, no history yet."""
    return EncoderInput(question_type=question_type, context=section.text)


def generate_step(
    decoder: Decoder,
    encoder_input: EncoderInput,
    already: set[str],
    config: GenerationConfig,
) -> tuple[str, int, bool]:
    """Highest-ranked hypothesis whose normalized text is new.

    When every beam return is a duplicate, the top hypothesis is accepted
    anyway and flagged, preserving the fixed output count.
    Returns (text, beam_rank, fallback_duplicate).
    """
    candidates = decoder.beam_candidates(
        encoder_input,
        beam_size=config.beam_size,
        max_new_tokens=config.max_new_tokens,
        max_input_tokens=config.max_input_tokens,
    )
    if not candidates:
        raise GenerationError(
            f"decoder returned no hypotheses for type {encoder_input.question_type!r}"
        )
    for rank, text in enumerate(candidates, start=1):
        if normalize_question(text) not in already:
            return text, rank, False
    return candidates[0], 1, True


def generate_section(
    decoder: Decoder, section: Section, config: GenerationConfig
) -> list[GeneratedQuestion]:
    """Exactly questions_per_type x len(types) records for one section.

    Types run independently; within a type, each accepted question (fallback
    duplicates included) is appended to the history fed to the next iteration,
    in acceptance order.
    """
    records: list[GeneratedQuestion] = []
    for question_type in config.types:
        already: set[str] = set()
        history: list[str] = []
        for iteration in range(1, config.questions_per_type + 1):
            encoder_input = initial_input(section, question_type).with_references(history)
            text, beam_rank, fallback = generate_step(decoder, encoder_input, already, config)
            records.append(
                GeneratedQuestion(
                    story_id=section.story_id,
                    section_id=section.section_id,
                    question_type=question_type,
                    iteration=iteration,
                    beam_rank=beam_rank,
                    text=text,
                    fallback_duplicate=fallback,
                )
            )
            already.add(normalize_question(text))
            history.append(text)
    return records


def generate_corpus(
    decoder: Decoder, sections: Sequence[Section], config: GenerationConfig
) -> list[GeneratedQuestion]:
    records: list[GeneratedQuestion] = []
    for section in sections:
        records.extend(generate_section(decoder, section, config))
    return records


def write_generated(path: str | Path, records: Iterable[GeneratedQuestion]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_record()) + "\n")


def read_generated(path: str | Path) -> list[GeneratedQuestion]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"generated-questions file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(GeneratedQuestion.from_record(json.loads(line)))
    return records

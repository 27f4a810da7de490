"""Encoder input assembly: type prefix, context, and reference questions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import QAPair, Section
from .textutils import WH_WORDS

SEP = "[SEP]"
_SEP_JOIN = f" {SEP} "

DEFAULT_MAX_REFERENCES = 8


class InputError(ValueError):
    """Invalid encoder-input construction."""


@dataclass(frozen=True)
class EncoderInput:
    """Question type, context, and same-context reference questions.

    The rendered form is ``QT [SEP] context [SEP] q1 [SEP] q2 ...`` with a
    single separator when no references are present.
    """

    question_type: str
    context: str
    reference_questions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.question_type not in WH_WORDS:
            raise InputError(
                f"question_type must be one of {WH_WORDS}, got {self.question_type!r}"
            )
        if not self.context.strip():
            raise InputError("context must be non-empty")

    @property
    def rendered(self) -> str:
        return _SEP_JOIN.join([self.question_type, self.context, *self.reference_questions])

    def with_references(self, references: Sequence[str]) -> "EncoderInput":
        return EncoderInput(self.question_type, self.context, tuple(references))


def parse_rendered(rendered: str) -> EncoderInput:
    """Inverse of EncoderInput.rendered, exact when no field contains the separator."""
    parts = rendered.split(_SEP_JOIN)
    if len(parts) < 2:
        raise InputError("rendered input must contain at least one separator")
    return EncoderInput(
        question_type=parts[0],
        context=parts[1],
        reference_questions=tuple(parts[2:]),
    )


def build_training_example(
    target: QAPair,
    context: Section,
    same_context_questions: Sequence[str],
    max_references: int = DEFAULT_MAX_REFERENCES,
) -> tuple[EncoderInput, str]:
    """Training pair: typed encoder input with reference questions, target text.

    References are the other ground-truth questions of the section, any type,
    in corpus order, capped at ``max_references``. The target's own question
    must already be excluded by the caller.
    """
    if (target.story_id, target.section_id) != context.key:
        raise InputError(
            f"target {target.key} does not belong to section {context.key}"
        )
    if target.question in same_context_questions:
        raise InputError("target question must be excluded from the reference list")
    encoder_input = EncoderInput(
        question_type=target.question_type,
        context=context.text,
        reference_questions=tuple(same_context_questions[:max_references]),
    )
    return encoder_input, target.question

"""Storybook QA corpus: loading, cleaning, wh-type tagging, book-level splits.

File formats are line-delimited JSON. A sections file carries records with
``story_id``, ``section_id`` and ``text``; a QA file carries ``story_id``,
``section_ids`` (list; a bare ``section_id`` string is also accepted),
``question``, ``answers``, ``answer_type`` and an optional ``question_type``
that is recomputed when absent.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .textutils import (
    OTHER_TYPE,
    QUESTION_TYPES,
    WH_WORDS,
    answer_is_locatable,
    collapse_whitespace,
    normalize_question,
    word_tokenize,
)

logger = logging.getLogger(__name__)

ANSWER_TYPES = ("explicit", "implicit")
SPLIT_NAMES = ("train", "validation", "test")


class CorpusError(ValueError):
    """Malformed corpus files or infeasible split requests."""


@dataclass(frozen=True)
class Section:
    story_id: str
    section_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise CorpusError(
                f"section ({self.story_id}, {self.section_id}) has empty text"
            )

    @property
    def key(self) -> tuple[str, str]:
        return (self.story_id, self.section_id)


@dataclass(frozen=True)
class QAPair:
    story_id: str
    section_ids: tuple[str, ...]
    question: str
    answers: tuple[str, ...]
    answer_type: str
    question_type: str

    def __post_init__(self) -> None:
        if not self.section_ids:
            raise CorpusError("QA pair must reference at least one section")
        if not self.question.strip():
            raise CorpusError("QA pair has an empty question")
        if not self.answers:
            raise CorpusError("QA pair must carry at least one answer")
        if self.answer_type not in ANSWER_TYPES:
            raise CorpusError(f"unknown answer_type {self.answer_type!r}")
        if self.question_type not in QUESTION_TYPES:
            raise CorpusError(f"unknown question_type {self.question_type!r}")

    @property
    def section_id(self) -> str:
        return self.section_ids[0]

    @property
    def is_multi_section(self) -> bool:
        return len(self.section_ids) > 1

    @property
    def key(self) -> tuple[str, str]:
        return (self.story_id, self.section_id)


class Corpus(NamedTuple):
    sections: list[Section]
    qa_pairs: list[QAPair]


def tag_question_type(question: str) -> str:
    """First of the seven wh-words scanning the tokenized question; else `other`."""
    if not question.strip():
        raise CorpusError("cannot tag an empty question")
    for token in word_tokenize(question):
        if token in WH_WORDS:
            return token
    return OTHER_TYPE


def _load_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: record is not an object")
            yield lineno, record


def _require(record: dict, key: str, path: Path | str, lineno: int) -> object:
    if key not in record:
        raise CorpusError(f"{path}:{lineno}: missing field {key!r}")
    return record[key]


def load_corpus(
    sections_path: str | Path, qa_path: str | Path
) -> tuple[list[Section], list[QAPair]]:
    """Load sections and QA pairs, checking referential integrity.

    Every QA pair must reference existing (story_id, section_id) keys; parse
    and reference failures are reported with the offending line number.
    """
    sections: list[Section] = []
    seen: set[tuple[str, str]] = set()
    for lineno, record in _load_jsonl(sections_path):
        section = Section(
            story_id=str(_require(record, "story_id", sections_path, lineno)),
            section_id=str(_require(record, "section_id", sections_path, lineno)),
            text=str(_require(record, "text", sections_path, lineno)).strip(),
        )
        if section.key in seen:
            raise CorpusError(
                f"{sections_path}:{lineno}: duplicate section {section.key}"
            )
        seen.add(section.key)
        sections.append(section)

    qa_pairs: list[QAPair] = []
    for lineno, record in _load_jsonl(qa_path):
        story_id = str(_require(record, "story_id", qa_path, lineno))
        if "section_ids" in record:
            raw_ids = record["section_ids"]
        else:
            raw_ids = _require(record, "section_id", qa_path, lineno)
        if isinstance(raw_ids, str):
            section_ids: tuple[str, ...] = (raw_ids,)
        else:
            section_ids = tuple(str(s) for s in raw_ids)
        question = collapse_whitespace(str(_require(record, "question", qa_path, lineno)))
        if question and not question.endswith("?"):
            logger.warning(
                "%s:%d: question does not end with '?': %r", qa_path, lineno, question
            )
        answers_raw = _require(record, "answers", qa_path, lineno)
        if isinstance(answers_raw, str):
            answers: tuple[str, ...] = (answers_raw,)
        else:
            answers = tuple(str(a) for a in answers_raw)
        question_type = record.get("question_type") or tag_question_type(question)
        pair = QAPair(
            story_id=story_id,
            section_ids=section_ids,
            question=question,
            answers=answers,
            answer_type=str(_require(record, "answer_type", qa_path, lineno)),
            question_type=str(question_type),
        )
        for sid in pair.section_ids:
            if (pair.story_id, sid) not in seen:
                raise CorpusError(
                    f"{qa_path}:{lineno}: QA references unknown section "
                    f"({pair.story_id}, {sid})"
                )
        qa_pairs.append(pair)

    if not qa_pairs:
        logger.warning("%s: QA file contains no records", qa_path)
    return sections, qa_pairs


@dataclass
class PreprocessReport:
    """Removal accounting per cleaning rule plus retained per-type totals."""

    mode: str
    removed_multi_section: int = 0
    removed_unlocatable_explicit: int = 0
    removed_conflicting_labels: int = 0
    retained_explicit: int = 0
    retained_implicit: int = 0

    @property
    def retained_total(self) -> int:
        return self.retained_explicit + self.retained_implicit

    @property
    def removed_total(self) -> int:
        return (
            self.removed_multi_section
            + self.removed_unlocatable_explicit
            + self.removed_conflicting_labels
        )

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "removed": {
                "multi_section": self.removed_multi_section,
                "unlocatable_explicit": self.removed_unlocatable_explicit,
                "conflicting_labels": self.removed_conflicting_labels,
                "total": self.removed_total,
            },
            "retained": {
                "explicit": self.retained_explicit,
                "implicit": self.retained_implicit,
                "total": self.retained_total,
            },
        }


def preprocess(
    sections: Sequence[Section],
    qa_pairs: Sequence[QAPair],
    mode: str,
) -> tuple[list[QAPair], PreprocessReport]:
    """Apply the cleaning rules for the given mode; pure filtering, idempotent.

    ``qg`` removes questions spanning multiple sections. ``answerability``
    additionally removes explicit questions whose answer cannot be located in
    the section text and questions whose duplicated annotations carry
    conflicting explicit/implicit labels.
    """
    if mode not in ("qg", "answerability"):
        raise CorpusError(f"unknown preprocess mode {mode!r}")
    report = PreprocessReport(mode=mode)
    by_key = {s.key: s for s in sections}

    remaining: list[QAPair] = []
    for pair in qa_pairs:
        if pair.is_multi_section:
            report.removed_multi_section += 1
        else:
            remaining.append(pair)

    if mode == "answerability":
        kept: list[QAPair] = []
        for pair in remaining:
            if pair.answer_type == "explicit":
                section = by_key[pair.key]
                if not any(answer_is_locatable(section.text, a) for a in pair.answers):
                    report.removed_unlocatable_explicit += 1
                    continue
            kept.append(pair)
        remaining = kept

        labels_by_question: dict[tuple[str, str, str], set[str]] = {}
        for pair in remaining:
            qkey = (pair.story_id, pair.section_id, normalize_question(pair.question))
            labels_by_question.setdefault(qkey, set()).add(pair.answer_type)
        kept = []
        for pair in remaining:
            qkey = (pair.story_id, pair.section_id, normalize_question(pair.question))
            if len(labels_by_question[qkey]) > 1:
                report.removed_conflicting_labels += 1
            else:
                kept.append(pair)
        remaining = kept

    for pair in remaining:
        if pair.answer_type == "explicit":
            report.retained_explicit += 1
        else:
            report.retained_implicit += 1
    return remaining, report


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    unit: str = "book"

    def __post_init__(self) -> None:
        if self.unit != "book":
            raise CorpusError("splits are defined at book granularity only")
        if len(self.ratios) != len(SPLIT_NAMES):
            raise CorpusError("ratios must cover train/validation/test")
        if any(r <= 0 for r in self.ratios):
            raise CorpusError("split ratios must be positive")
        if abs(sum(self.ratios) - 1.0) > 1e-6:
            raise CorpusError("split ratios must sum to 1")


@dataclass
class BookSplit:
    train: Corpus
    validation: Corpus
    test: Corpus
    assignment: dict[str, str] = field(default_factory=dict)

    def corpus(self, split: str) -> Corpus:
        if split not in SPLIT_NAMES:
            raise CorpusError(f"unknown split {split!r}")
        return getattr(self, split if split != "validation" else "validation")


def _largest_remainder_counts(n_books: int, ratios: Sequence[float]) -> list[int]:
    quotas = [n_books * r for r in ratios]
    counts = [math.floor(q) for q in quotas]
    remainder = n_books - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    # every split gets at least one book; rebalance from the largest split
    for i, c in enumerate(counts):
        if c == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            if counts[donor] <= 1:
                raise CorpusError("not enough books to fill every split")
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_by_books(
    sections: Sequence[Section],
    qa_pairs: Sequence[QAPair],
    spec: SplitSpec,
) -> BookSplit:
    """Deterministic seeded shuffle of books, sliced by largest-remainder counts."""
    books = sorted({s.story_id for s in sections})
    if len(books) < len(SPLIT_NAMES):
        raise CorpusError(
            f"need at least {len(SPLIT_NAMES)} books to split, got {len(books)}"
        )
    rng = random.Random(spec.seed)
    rng.shuffle(books)
    counts = _largest_remainder_counts(len(books), spec.ratios)
    assignment: dict[str, str] = {}
    start = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for book in books[start : start + count]:
            assignment[book] = name
        start += count

    def subset(name: str) -> Corpus:
        keep = {b for b, s in assignment.items() if s == name}
        return Corpus(
            sections=[s for s in sections if s.story_id in keep],
            qa_pairs=[p for p in qa_pairs if p.story_id in keep],
        )

    return BookSplit(
        train=subset("train"),
        validation=subset("validation"),
        test=subset("test"),
        assignment=assignment,
    )


def make_cross_validation_splits(
    sections: Sequence[Section],
    qa_pairs: Sequence[QAPair],
    k: int,
    seed: int,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> list[BookSplit]:
    """k independently seeded book shuffles, each yielding a split triple."""
    if k < 2:
        raise CorpusError("cross-validation needs k >= 2 folds")
    rng = random.Random(seed)
    fold_seeds = [rng.randrange(2**31) for _ in range(k)]
    return [
        split_by_books(sections, qa_pairs, SplitSpec(seed=s, ratios=ratios))
        for s in fold_seeds
    ]


def write_split_manifest(path: str | Path, splits: Sequence[BookSplit]) -> None:
    """One record per (book, fold): story_id, split name, fold index."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for fold, split in enumerate(splits):
            for story_id in sorted(split.assignment):
                record = {
                    "story_id": story_id,
                    "split": split.assignment[story_id],
                    "fold": fold,
                }
                fh.write(json.dumps(record) + "\n")


def read_split_manifest(path: str | Path) -> dict[int, dict[str, str]]:
    """fold index -> {story_id: split name}."""
    folds: dict[int, dict[str, str]] = {}
    for lineno, record in _load_jsonl(path):
        for key in ("story_id", "split", "fold"):
            _require(record, key, path, lineno)
        folds.setdefault(int(record["fold"]), {})[str(record["story_id"])] = str(
            record["split"]
        )
    return folds


def select_fold(
    sections: Sequence[Section],
    qa_pairs: Sequence[QAPair],
    assignment: dict[str, str],
    split: str,
) -> Corpus:
    if split not in SPLIT_NAMES:
        raise CorpusError(f"unknown split {split!r}")
    keep = {b for b, s in assignment.items() if s == split}
    return Corpus(
        sections=[s for s in sections if s.story_id in keep],
        qa_pairs=[p for p in qa_pairs if p.story_id in keep],
    )


def write_qa_file(path: str | Path, qa_pairs: Iterable[QAPair]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pair in qa_pairs:
            record = {
                "story_id": pair.story_id,
                "section_ids": list(pair.section_ids),
                "question": pair.question,
                "answers": list(pair.answers),
                "answer_type": pair.answer_type,
                "question_type": pair.question_type,
            }
            fh.write(json.dumps(record) + "\n")


def write_sections_file(path: str | Path, sections: Iterable[Section]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for section in sections:
            record = {
                "story_id": section.story_id,
                "section_id": section.section_id,
                "text": section.text,
            }
            fh.write(json.dumps(record) + "\n")

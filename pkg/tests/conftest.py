"""Shared fixtures: deterministic toy corpora and stub decoders."""

from __future__ import annotations

import pytest

from storyqg.corpus import QAPair, Section, write_qa_file, write_sections_file
from storyqg.tokenization import WhitespaceTokenizer

ANIMALS = ("fox", "owl", "bear", "hare", "wolf", "crow", "mole", "lynx")
PLACES = ("river", "hill", "forest", "meadow", "lake", "cave", "garden", "valley")
OBJECTS = ("lamp", "stone", "ring", "bell", "coin", "drum", "kite", "harp")
FEELINGS = ("happy", "glad", "proud", "calm", "merry", "brave", "kind", "wise")


def make_section(book: int, idx: int) -> Section:
    animal = ANIMALS[(book + idx) % len(ANIMALS)]
    place = PLACES[(book + 2 * idx) % len(PLACES)]
    obj = OBJECTS[(book + idx) % len(OBJECTS)]
    feeling = FEELINGS[(book + idx) % len(FEELINGS)]
    text = (
        f"The {animal} lived near the {place}. One day the {animal} found a "
        f"{obj} and carried it home. The {animal} was {feeling} because the "
        f"{obj} glowed at night."
    )
    return Section(story_id=f"book{book}", section_id=f"s{idx}", text=text)


def make_section_pairs(section: Section) -> list[QAPair]:
    words = section.text.split()
    animal = words[1]
    obj = words[12]
    place = words[5].rstrip(".")
    feeling = words[20]
    base = dict(story_id=section.story_id, section_ids=(section.section_id,))
    return [
        QAPair(
            **base,
            question=f"What did the {animal} find?",
            answers=(f"a {obj}",),
            answer_type="explicit",
            question_type="what",
        ),
        QAPair(
            **base,
            question=f"Where did the {animal} live?",
            answers=(f"near the {place}",),
            answer_type="explicit",
            question_type="where",
        ),
        QAPair(
            **base,
            question=f"Why was the {animal} {feeling}?",
            answers=(f"the {obj} was magical",),
            answer_type="implicit",
            question_type="why",
        ),
    ]


def make_toy_corpus(
    n_books: int = 6, sections_per_book: int = 2
) -> tuple[list[Section], list[QAPair]]:
    sections: list[Section] = []
    qa_pairs: list[QAPair] = []
    for book in range(n_books):
        for idx in range(sections_per_book):
            section = make_section(book, idx)
            sections.append(section)
            qa_pairs.extend(make_section_pairs(section))
    return sections, qa_pairs


@pytest.fixture
def toy_corpus():
    return make_toy_corpus()


@pytest.fixture
def toy_corpus_files(tmp_path, toy_corpus):
    sections, qa_pairs = toy_corpus
    sections_path = tmp_path / "sections.jsonl"
    qa_path = tmp_path / "qa.jsonl"
    write_sections_file(sections_path, sections)
    write_qa_file(qa_path, qa_pairs)
    return sections_path, qa_path


@pytest.fixture
def toy_tokenizer(toy_corpus):
    sections, qa_pairs = toy_corpus
    texts = [s.text for s in sections] + [p.question for p in qa_pairs]
    return WhitespaceTokenizer.build(texts)


class CountingDecoder:
    """Distinct candidates per iteration; records every rendered input."""

    def __init__(self):
        self.calls = []

    def beam_candidates(self, encoder_input, beam_size, max_new_tokens, max_input_tokens=1024):
        self.calls.append(encoder_input)
        step = len(encoder_input.reference_questions)
        return [
            f"{encoder_input.question_type} question {step} variant {rank}?"
            for rank in range(beam_size)
        ]


class ScriptedDecoder:
    """Fixed ranked candidate lists keyed by (type, history length)."""

    def __init__(self, script, default=None):
        self.script = script
        self.default = default or []
        self.calls = []

    def beam_candidates(self, encoder_input, beam_size, max_new_tokens, max_input_tokens=1024):
        self.calls.append(encoder_input)
        key = (encoder_input.question_type, len(encoder_input.reference_questions))
        candidates = self.script.get(key, self.default)
        return list(candidates)[:beam_size]


class ConstantDecoder:
    """Always the same ranked list; exhausts novelty after one acceptance each."""

    def __init__(self, candidates):
        self.candidates = list(candidates)

    def beam_candidates(self, encoder_input, beam_size, max_new_tokens, max_input_tokens=1024):
        return self.candidates[:beam_size]

"""Span-extraction classifier with no-answer and implicit-answer targets.

A bidirectional encoder feeds two dense heads (answer start / answer end).
Training runs in two steps: first on a general QA corpus where unanswerable
questions target the sequence-start token, then on narrative data where a
newly added implicit-answer token becomes the target for implicit questions.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..corpus import Corpus, QAPair, Section
from ..textutils import WH_WORDS, locate_answer, word_tokenize
from .rule import ClassificationResult, ClassifierConfig, SpanScores, classify, overlap_accurate, token_f1

logger = logging.getLogger(__name__)


class AnswerabilityError(ValueError):
    """Invalid classifier inputs or training data."""


@dataclass
class QAEncoding:
    """Encoded question/context pair with the special-token geometry."""

    input_ids: list[int]
    cls_index: int
    imp_index: int | None
    context_start: int
    context_stop: int
    context_offsets: list[tuple[int, int]]

    def context_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.input_ids), dtype=bool)
        mask[self.context_start : self.context_stop] = True
        return mask


def build_qa_input(
    question: str,
    context: str,
    tokenizer,
    with_imp: bool,
    max_tokens: int = 384,
) -> QAEncoding:
    """[CLS] question [SEP] ([IMP]) context [SEP], context tail truncated to fit.

    The implicit-answer token, when present, sits at the first context-side
    position. Errors when even a single context token cannot fit.
    """
    if not question.strip():
        raise AnswerabilityError("question must be non-empty")
    if not context.strip():
        raise AnswerabilityError("context must be non-empty")
    question_ids = tokenizer.encode(question)
    context_ids, offsets = tokenizer.encode_with_offsets(context)
    imp_id = tokenizer.imp_id
    if with_imp and imp_id is None:
        raise AnswerabilityError("tokenizer has no implicit-answer token")
    overhead = 1 + len(question_ids) + 1 + (1 if with_imp else 0) + 1
    budget = max_tokens - overhead
    if budget < 1:
        raise AnswerabilityError(
            f"question leaves no room for context within {max_tokens} tokens"
        )
    context_ids = context_ids[:budget]
    offsets = offsets[:budget]

    ids = [tokenizer.cls_id, *question_ids, tokenizer.sep_id]
    imp_index = None
    if with_imp:
        imp_index = len(ids)
        ids.append(imp_id)
    context_start = len(ids)
    ids.extend(context_ids)
    context_stop = len(ids)
    ids.append(tokenizer.sep_id)
    return QAEncoding(
        input_ids=ids,
        cls_index=0,
        imp_index=imp_index,
        context_start=context_start,
        context_stop=context_stop,
        context_offsets=offsets,
    )


def _char_span_to_tokens(
    encoding: QAEncoding, char_start: int, char_end: int
) -> tuple[int, int] | None:
    """Positions of the context tokens overlapping [char_start, char_end)."""
    first = None
    last = None
    for i, (s, e) in enumerate(encoding.context_offsets):
        if e > char_start and s < char_end:
            if first is None:
                first = i
            last = i
    if first is None:
        return None
    return encoding.context_start + first, encoding.context_start + last


class SpanClassifier(nn.Module):
    """Encoder plus start/end span heads."""

    def __init__(self, encoder, hidden_size: int, has_imp: bool = False):
        super().__init__()
        self.encoder = encoder
        self.qa_head = nn.Linear(hidden_size, 2)
        self.has_imp = has_imp

    @classmethod
    def tiny(
        cls,
        tokenizer,
        hidden_size: int = 32,
        layers: int = 1,
        heads: int = 2,
        max_positions: int = 512,
        seed: int = 0,
    ) -> "SpanClassifier":
        """Small randomly initialized bidirectional encoder (no downloads)."""
        from transformers import BertConfig, BertModel

        config = BertConfig(
            vocab_size=tokenizer.vocab_size,
            hidden_size=hidden_size,
            num_hidden_layers=layers,
            num_attention_heads=heads,
            intermediate_size=hidden_size * 2,
            max_position_embeddings=max_positions,
            pad_token_id=tokenizer.pad_id,
        )
        torch.manual_seed(seed)
        return cls(BertModel(config), hidden_size)

    @classmethod
    def from_pretrained(cls, name: str, cache_dir: str | None = None) -> "SpanClassifier":
        from transformers import AutoModel

        encoder = AutoModel.from_pretrained(name, cache_dir=cache_dir)
        return cls(encoder, encoder.config.hidden_size)

    def resize_vocab(self, new_size: int) -> None:
        self.encoder.resize_token_embeddings(new_size)

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor):
        states = self.encoder(
            input_ids=input_ids, attention_mask=attention_mask
        ).last_hidden_state
        logits = self.qa_head(states)
        start_logits, end_logits = logits.split(1, dim=-1)
        return start_logits.squeeze(-1), end_logits.squeeze(-1)

    def save(self, directory: str | Path, tokenizer) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.encoder.save_pretrained(directory / "encoder")
        torch.save(self.qa_head.state_dict(), directory / "qa_head.pt")
        tokenizer.save(directory / "vocab.json")
        meta = {"has_imp": self.has_imp, "hidden_size": self.qa_head.in_features}
        (directory / "meta.json").write_text(json.dumps(meta), encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: str | Path):
        from transformers import AutoModel

        from ..tokenization import WhitespaceTokenizer

        directory = Path(directory)
        if not directory.exists():
            raise FileNotFoundError(f"classifier checkpoint not found: {directory}")
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
        encoder = AutoModel.from_pretrained(directory / "encoder")
        classifier = cls(encoder, meta["hidden_size"], has_imp=meta["has_imp"])
        classifier.qa_head.load_state_dict(torch.load(directory / "qa_head.pt"))
        tokenizer = WhitespaceTokenizer.load(directory / "vocab.json")
        return classifier, tokenizer


@dataclass(frozen=True)
class TwoStepTrainConfig:
    learning_rate: float = 5e-6
    batch_size: int = 16
    epochs_step1: int = 2
    epochs_step2: int = 8
    max_tokens: int = 384
    seed: int = 0


@dataclass
class _SpanExample:
    encoding: QAEncoding
    start_target: int
    end_target: int


def load_general_qa(path: str | Path) -> list[dict]:
    """SQuAD2.0-style JSONL: question, context, answer_text, answer_start,
    is_impossible."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"general QA file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            for key in ("question", "context", "is_impossible"):
                if key not in record:
                    raise AnswerabilityError(f"{path}:{lineno}: missing field {key!r}")
            records.append(record)
    return records


def _step1_examples(
    records: Sequence[dict], tokenizer, max_tokens: int
) -> list[_SpanExample]:
    examples = []
    for record in records:
        encoding = build_qa_input(
            record["question"], record["context"], tokenizer, with_imp=False, max_tokens=max_tokens
        )
        if record["is_impossible"]:
            examples.append(_SpanExample(encoding, encoding.cls_index, encoding.cls_index))
            continue
        if "answer_text" not in record or "answer_start" not in record:
            raise AnswerabilityError(f"answerable record missing answer fields: {record}")
        char_start = int(record["answer_start"])
        char_end = char_start + len(record["answer_text"])
        span = _char_span_to_tokens(encoding, char_start, char_end)
        if span is None:
            logger.warning("answer truncated out of context window; skipping example")
            continue
        examples.append(_SpanExample(encoding, span[0], span[1]))
    return examples


def _step2_examples(
    sections: Sequence[Section],
    qa_pairs: Sequence[QAPair],
    tokenizer,
    max_tokens: int,
) -> list[_SpanExample]:
    by_key = {s.key: s for s in sections}
    examples = []
    for pair in qa_pairs:
        section = by_key.get(pair.key)
        if section is None:
            raise AnswerabilityError(f"QA pair references unknown section {pair.key}")
        encoding = build_qa_input(
            pair.question, section.text, tokenizer, with_imp=True, max_tokens=max_tokens
        )
        if pair.answer_type == "implicit":
            examples.append(_SpanExample(encoding, encoding.imp_index, encoding.imp_index))
            continue
        span = None
        for answer in pair.answers:
            located = locate_answer(section.text, answer)
            if located is not None:
                span = _char_span_to_tokens(encoding, *located)
                if span is not None:
                    break
        if span is None:
            raise AnswerabilityError(
                f"explicit answer not locatable for question {pair.question!r}"
            )
        examples.append(_SpanExample(encoding, span[0], span[1]))
    return examples


def _train_span_epochs(
    classifier: SpanClassifier,
    examples: Sequence[_SpanExample],
    tokenizer,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    rng: random.Random,
) -> list[float]:
    optimizer = torch.optim.AdamW(classifier.parameters(), lr=learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    pad = tokenizer.pad_id
    losses = []
    for _ in range(epochs):
        order = list(range(len(examples)))
        rng.shuffle(order)
        epoch_loss = 0.0
        classifier.train()
        for start in range(0, len(order), batch_size):
            batch = [examples[i] for i in order[start : start + batch_size]]
            width = max(len(b.encoding.input_ids) for b in batch)
            input_ids = torch.full((len(batch), width), pad, dtype=torch.long)
            for i, b in enumerate(batch):
                input_ids[i, : len(b.encoding.input_ids)] = torch.tensor(b.encoding.input_ids)
            attention = (input_ids != pad).long()
            start_targets = torch.tensor([b.start_target for b in batch])
            end_targets = torch.tensor([b.end_target for b in batch])
            start_logits, end_logits = classifier(input_ids, attention)
            loss = 0.5 * (
                loss_fn(start_logits, start_targets) + loss_fn(end_logits, end_targets)
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(batch)
        losses.append(epoch_loss / len(examples))
    return losses


def train_two_step(
    general_qa: Sequence[dict],
    narrative: Corpus,
    tokenizer,
    classifier: SpanClassifier,
    config: TwoStepTrainConfig = TwoStepTrainConfig(),
    out_dir: str | Path | None = None,
) -> dict:
    """Step 1: general QA with no-answer targets; step 2: narrative data with
    the implicit token added, randomly initialized, and learned.

    Returns a log with per-epoch losses; checkpoints after each step when
    out_dir is given.
    """
    if not general_qa:
        raise AnswerabilityError("step-1 corpus is empty")
    if not narrative.qa_pairs:
        raise AnswerabilityError("step-2 corpus is empty")
    rng = random.Random(config.seed)
    torch.manual_seed(config.seed)

    step1 = _step1_examples(general_qa, tokenizer, config.max_tokens)
    if not step1:
        raise AnswerabilityError("step-1 corpus produced no usable examples")
    step1_losses = _train_span_epochs(
        classifier, step1, tokenizer, config.epochs_step1, config.batch_size,
        config.learning_rate, rng,
    )
    if out_dir is not None:
        classifier.save(Path(out_dir) / "step1", tokenizer)

    tokenizer.add_imp_token()
    classifier.resize_vocab(tokenizer.vocab_size)
    classifier.has_imp = True
    step2 = _step2_examples(
        narrative.sections, narrative.qa_pairs, tokenizer, config.max_tokens
    )
    step2_losses = _train_span_epochs(
        classifier, step2, tokenizer, config.epochs_step2, config.batch_size,
        config.learning_rate, rng,
    )
    if out_dir is not None:
        classifier.save(Path(out_dir) / "step2", tokenizer)
    return {"step1_losses": step1_losses, "step2_losses": step2_losses}


def score_spans(
    classifier: SpanClassifier,
    tokenizer,
    question: str,
    context: str,
    max_tokens: int = 384,
) -> SpanScores:
    """Raw start/end logits for one question; no thresholding applied."""
    encoding = build_qa_input(
        question, context, tokenizer, with_imp=classifier.has_imp, max_tokens=max_tokens
    )
    input_ids = torch.tensor([encoding.input_ids], dtype=torch.long)
    attention = torch.ones_like(input_ids)
    classifier.eval()
    with torch.no_grad():
        start_logits, end_logits = classifier(input_ids, attention)
    return SpanScores(
        start_logits=start_logits[0].numpy().astype(np.float64),
        end_logits=end_logits[0].numpy().astype(np.float64),
        cls_index=encoding.cls_index,
        imp_index=encoding.imp_index,
        context_mask=encoding.context_mask(),
    )


def span_text(encoding_offsets: Sequence[tuple[int, int]], context: str,
              context_start: int, span: tuple[int, int]) -> str:
    first = span[0] - context_start
    last = span[1] - context_start
    if first < 0 or last >= len(encoding_offsets):
        return ""
    return context[encoding_offsets[first][0] : encoding_offsets[last][1]]


@dataclass
class ClassifierEvalReport:
    per_type: dict[str, dict[str, float]]
    total: dict[str, float]
    n_questions: int

    def as_dict(self) -> dict:
        return {"per_type": self.per_type, "total": self.total, "n_questions": self.n_questions}


def evaluate_classifier(
    classifier: SpanClassifier,
    tokenizer,
    labeled: Corpus,
    config: ClassifierConfig,
    max_tokens: int = 384,
) -> ClassifierEvalReport:
    """Token-overlap F1 and accuracy per answer type on ground-truth data.

    An explicit prediction is accurate when at least one predicted answer
    token occurs in a gold answer; implicit questions score on the label
    alone, so their F1 and accuracy coincide.
    """
    by_key = {s.key: s for s in labeled.sections}
    f1_by_type: dict[str, list[float]] = {"explicit": [], "implicit": []}
    acc_by_type: dict[str, list[float]] = {"explicit": [], "implicit": []}
    for pair in labeled.qa_pairs:
        section = by_key[pair.key]
        encoding = build_qa_input(
            pair.question, section.text, tokenizer,
            with_imp=classifier.has_imp, max_tokens=max_tokens,
        )
        scores = score_spans(classifier, tokenizer, pair.question, section.text, max_tokens)
        result = classify(scores, config)
        if pair.answer_type == "implicit":
            hit = 100.0 if result.label == "implicit" else 0.0
            f1_by_type["implicit"].append(hit)
            acc_by_type["implicit"].append(hit)
            continue
        if result.label == "explicit" and result.best_span is not None:
            predicted = span_text(
                encoding.context_offsets, section.text, encoding.context_start,
                result.best_span,
            )
            f1_by_type["explicit"].append(token_f1(predicted, pair.answers))
            acc_by_type["explicit"].append(
                100.0 if overlap_accurate(predicted, pair.answers) else 0.0
            )
        else:
            f1_by_type["explicit"].append(0.0)
            acc_by_type["explicit"].append(0.0)

    per_type = {}
    all_f1: list[float] = []
    all_acc: list[float] = []
    for answer_type in ("explicit", "implicit"):
        f1s, accs = f1_by_type[answer_type], acc_by_type[answer_type]
        if f1s:
            per_type[answer_type] = {
                "f1": sum(f1s) / len(f1s),
                "accuracy": sum(accs) / len(accs),
                "n": len(f1s),
            }
            all_f1.extend(f1s)
            all_acc.extend(accs)
    total = {
        "f1": sum(all_f1) / len(all_f1) if all_f1 else 0.0,
        "accuracy": sum(all_acc) / len(all_acc) if all_acc else 0.0,
    }
    return ClassifierEvalReport(per_type=per_type, total=total, n_questions=len(all_f1))


# ---------------------------------------------------------------------------
# stub scorer for exercising the downstream pipeline without a trained model


_STOPWORDS = frozenset(
    "a an the did do does is are was were be been being to of in on at for "
    "with and or not his her its their it he she they".split()
) | set(WH_WORDS)


class HeuristicSpanScorer:
    """Deterministic classifier stand-in for pipeline runs without a model.

    Questions sharing no content token with the context come out unanswerable;
    why/how questions with some overlap come out implicit; other types come
    out explicit when the overlap is strong, implicit otherwise. The score
    layouts keep the labels stable for any tau in [-12, 2].
    """

    has_imp = True

    LOW = -8.0

    def score(self, question: str, context: str) -> SpanScores:
        question_tokens = word_tokenize(question)
        context_tokens = word_tokenize(context)
        question_type = next((t for t in question_tokens if t in WH_WORDS), None)
        content = [
            t for t in question_tokens if t not in _STOPWORDS and t[:1].isalnum()
        ]
        matched_positions = [
            i for i, tok in enumerate(context_tokens) if tok in set(content)
        ]
        overlap = len({context_tokens[i] for i in matched_positions})
        ratio = overlap / len(content) if content else 0.0

        # layout: [cls] question [sep] [imp] context [sep]
        n = 1 + len(question_tokens) + 1 + 1 + len(context_tokens) + 1
        imp_index = 1 + len(question_tokens) + 1
        context_start = imp_index + 1
        start = np.full(n, self.LOW)
        end = np.full(n, self.LOW)
        mask = np.zeros(n, dtype=bool)
        mask[context_start : context_start + len(context_tokens)] = True

        if ratio == 0.0:
            start[0] = end[0] = 4.0
        elif question_type in ("why", "how") or ratio < 0.4:
            start[imp_index] = end[imp_index] = 2.5
            for i in matched_positions:
                start[context_start + i] = end[context_start + i] = 1.0
            start[0] = end[0] = -6.0
        else:
            peak = context_start + matched_positions[0]
            start[peak] = end[peak] = 3.0
            start[0] = end[0] = -6.0
            start[imp_index] = end[imp_index] = -1.0
        return SpanScores(
            start_logits=start,
            end_logits=end,
            cls_index=0,
            imp_index=imp_index,
            context_mask=mask,
        )


@dataclass(frozen=True)
class ClassifiedQuestion:
    """A generated question with its answerability verdict attached."""

    story_id: str
    section_id: str
    question_type: str
    iteration: int
    beam_rank: int
    text: str
    fallback_duplicate: bool
    label: str
    span_start: int | None
    span_end: int | None
    cls_se: float
    imp_se: float | None
    a_se: float
    tau: float

    def to_record(self) -> dict:
        return {
            "story_id": self.story_id,
            "section_id": self.section_id,
            "question_type": self.question_type,
            "iteration": self.iteration,
            "beam_rank": self.beam_rank,
            "text": self.text,
            "fallback_duplicate": self.fallback_duplicate,
            "label": self.label,
            "span_start": self.span_start,
            "span_end": self.span_end,
            "cls_se": self.cls_se,
            "imp_se": self.imp_se,
            "a_se": self.a_se,
            "tau": self.tau,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ClassifiedQuestion":
        return cls(
            story_id=record["story_id"],
            section_id=record["section_id"],
            question_type=record["question_type"],
            iteration=int(record["iteration"]),
            beam_rank=int(record["beam_rank"]),
            text=record["text"],
            fallback_duplicate=bool(record.get("fallback_duplicate", False)),
            label=record["label"],
            span_start=record.get("span_start"),
            span_end=record.get("span_end"),
            cls_se=float(record["cls_se"]),
            imp_se=record.get("imp_se"),
            a_se=float(record["a_se"]),
            tau=float(record["tau"]),
        )


def classify_generated(
    scorer,
    tokenizer,
    records: Sequence,
    sections: Sequence[Section],
    config: ClassifierConfig,
    max_tokens: int = 384,
) -> list[ClassifiedQuestion]:
    """Classify generated questions; one output record per input record.

    ``scorer`` is either a trained SpanClassifier (with its tokenizer) or any
    object exposing ``score(question, context) -> SpanScores``.
    """
    by_key = {s.key: s for s in sections}
    out = []
    for record in records:
        section = by_key.get((record.story_id, record.section_id))
        if section is None:
            raise AnswerabilityError(
                f"generated question references unknown section "
                f"({record.story_id}, {record.section_id})"
            )
        if isinstance(scorer, SpanClassifier):
            scores = score_spans(scorer, tokenizer, record.text, section.text, max_tokens)
        else:
            scores = scorer.score(record.text, section.text)
        result: ClassificationResult = classify(scores, config)
        out.append(
            ClassifiedQuestion(
                story_id=record.story_id,
                section_id=record.section_id,
                question_type=record.question_type,
                iteration=record.iteration,
                beam_rank=record.beam_rank,
                text=record.text,
                fallback_duplicate=record.fallback_duplicate,
                label=result.label,
                span_start=result.best_span[0] if result.best_span else None,
                span_end=result.best_span[1] if result.best_span else None,
                cls_se=result.cls_se,
                imp_se=result.imp_se if math.isfinite(result.imp_se) else None,
                a_se=result.a_se,
                tau=config.tau,
            )
        )
    return out


def write_classified(path: str | Path, records: Sequence[ClassifiedQuestion]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_record()) + "\n")


def read_classified(path: str | Path) -> list[ClassifiedQuestion]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"classified-questions file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(ClassifiedQuestion.from_record(json.loads(line)))
    return records

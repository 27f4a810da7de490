"""Evaluation suite: dedup, answerable counts, Rouge-L variants, Self-BLEU,
external-scorer adapters, and cross-fold aggregation."""

from __future__ import annotations

import json
import math
import statistics
import subprocess
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .kernels import lcs_length
from .textutils import bleu_tokenize, normalize_question, word_tokenize

ANSWERABLE_LABELS = ("explicit", "implicit")
SELF_BLEU_SCOPES = ("per_section", "per_section_per_type")


class MetricError(ValueError):
    """Invalid metric inputs."""


# ---------------------------------------------------------------------------
# deduplication and counting


def dedup(questions: Sequence[str]) -> list[str]:
    """Keep the first occurrence of each normalized question text."""
    seen: set[str] = set()
    kept: list[str] = []
    for q in questions:
        norm = normalize_question(q)
        if norm not in seen:
            seen.add(norm)
            kept.append(q)
    return kept


def dedup_records(records: Sequence, key=lambda r: r.text) -> list:
    """dedup() over arbitrary records carrying a question text."""
    seen: set[str] = set()
    kept = []
    for record in records:
        norm = normalize_question(key(record))
        if norm not in seen:
            seen.add(norm)
            kept.append(record)
    return kept


def count_answerable(labels: Iterable[str]) -> int:
    return sum(1 for label in labels if label in ANSWERABLE_LABELS)


# ---------------------------------------------------------------------------
# Rouge-L


def _ids(tokens: Sequence[str], vocab: dict[str, int]) -> np.ndarray:
    return np.array([vocab.setdefault(t, len(vocab)) for t in tokens], dtype=np.int64)


def rouge_l_f1(reference: str, candidate: str) -> float:
    """LCS-based F1 on a 0-100 scale with equal precision/recall weighting."""
    ref_tokens = word_tokenize(reference)
    cand_tokens = word_tokenize(candidate)
    if not ref_tokens or not cand_tokens:
        raise MetricError("Rouge-L requires non-empty token sequences")
    vocab: dict[str, int] = {}
    lcs = lcs_length(_ids(ref_tokens, vocab), _ids(cand_tokens, vocab))
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand_tokens)
    recall = lcs / len(ref_tokens)
    return 200.0 * precision * recall / (precision + recall)


def _scoreable(generated: Sequence[str]) -> list[str]:
    # degenerate decodes (empty token sequences) cannot match anything and
    # score 0 instead of poisoning the whole evaluation
    return [g for g in generated if word_tokenize(g)]


def per_question_max_scores(
    ground_truth: Sequence[str], generated: Sequence[str]
) -> list[float]:
    """For each ground-truth question, the best Rouge-L over the section's
    generated questions (one-to-many matching allowed)."""
    if not generated:
        raise MetricError("no generated questions to score against")
    candidates = _scoreable(generated)
    if not candidates:
        return [0.0 for _ in ground_truth]
    return [max(rouge_l_f1(gt, cand) for cand in candidates) for gt in ground_truth]


def rouge_l_max(ground_truth: Sequence[str], generated: Sequence[str]) -> float:
    return float(statistics.fmean(per_question_max_scores(ground_truth, generated)))


def per_question_alt_scores(
    ground_truth: Sequence[str], generated: Sequence[str]
) -> list[float]:
    """One-to-one greedy matching in corpus order.

    Each ground-truth question consumes its best remaining candidate (ties go
    to the earliest in generation order); with no candidates left it scores 0.
    """
    if not generated:
        raise MetricError("no generated questions to score against")
    remaining = list(enumerate(_scoreable(generated)))
    scores: list[float] = []
    for gt in ground_truth:
        if not remaining:
            scores.append(0.0)
            continue
        best_pos = 0
        best_score = -1.0
        for pos, (_, cand) in enumerate(remaining):
            score = rouge_l_f1(gt, cand)
            if score > best_score:
                best_score = score
                best_pos = pos
        remaining.pop(best_pos)
        scores.append(best_score)
    return scores


def rouge_l_alt(ground_truth: Sequence[str], generated: Sequence[str]) -> float:
    return float(statistics.fmean(per_question_alt_scores(ground_truth, generated)))


# ---------------------------------------------------------------------------
# Self-BLEU


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(
    references: Sequence[Sequence[str]],
    hypothesis: Sequence[str],
    max_ngram: int = 4,
    epsilon: float = 0.1,
) -> float:
    """Sentence-level BLEU with uniform weights and smoothing method 1.

    Zero n-gram matches are replaced by ``epsilon`` counts; orders longer than
    the hypothesis are dropped and the weights renormalized over the rest.
    The brevity penalty uses the closest reference length (ties to shorter).
    """
    if not references:
        raise MetricError("sentence_bleu needs at least one reference")
    hyp_len = len(hypothesis)
    if hyp_len == 0:
        return 0.0
    log_precisions: list[float] = []
    for n in range(1, max_ngram + 1):
        hyp_counts = _ngram_counts(hypothesis, n)
        total = sum(hyp_counts.values())
        if total == 0:
            continue
        max_ref: Counter = Counter()
        for ref in references:
            for gram, count in _ngram_counts(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        matched = sum(min(count, max_ref[gram]) for gram, count in hyp_counts.items())
        numerator = matched if matched > 0 else epsilon
        log_precisions.append(math.log(numerator / total))
    if not log_precisions:
        return 0.0
    geo_mean = math.exp(sum(log_precisions) / len(log_precisions))
    closest_ref = min((abs(len(r) - hyp_len), len(r)) for r in references)[1]
    brevity = 1.0 if hyp_len > closest_ref else math.exp(1.0 - closest_ref / hyp_len)
    return brevity * geo_mean


def self_bleu(questions: Sequence[str], max_ngram: int = 4) -> float | None:
    """Mean BLEU of each question against the rest of its group.

    Undefined (None) for groups smaller than two, matching the hyphen
    convention in reported tables.
    """
    if len(questions) < 2:
        return None
    tokenized = [bleu_tokenize(q) for q in questions]
    scores = []
    for i, hyp in enumerate(tokenized):
        refs = [t for j, t in enumerate(tokenized) if j != i]
        scores.append(sentence_bleu(refs, hyp, max_ngram=max_ngram))
    return float(statistics.fmean(scores))


def group_questions(
    records: Sequence,
    scope: str = "per_section",
) -> dict[tuple, list[str]]:
    """Group generated-question records into Self-BLEU groups by scope."""
    if scope not in SELF_BLEU_SCOPES:
        raise MetricError(f"unknown Self-BLEU scope {scope!r}")
    groups: dict[tuple, list[str]] = {}
    for record in records:
        key: tuple = (record.story_id, record.section_id)
        if scope == "per_section_per_type":
            key = key + (record.question_type,)
        groups.setdefault(key, []).append(record.text)
    return groups


def corpus_self_bleu(
    groups: Mapping[tuple, Sequence[str]], max_ngram: int = 4
) -> float | None:
    """Mean over groups with a defined score; None when no group qualifies."""
    defined = [
        score
        for score in (self_bleu(qs, max_ngram) for qs in groups.values())
        if score is not None
    ]
    if not defined:
        return None
    return float(statistics.fmean(defined))


# ---------------------------------------------------------------------------
# external scorers (BERTScore/BLEURT-style, run out of process)


class ScorerError(RuntimeError):
    """External scorer unreachable or speaking a malformed protocol."""


def run_external_scorer(command: Sequence[str], pairs: Sequence[tuple[str, str]]) -> list[float]:
    """Stream (reference, candidate) pairs to a scorer process.

    Protocol: one JSON array ``["reference", "candidate"]`` per input line;
    the scorer replies with one numeric score per line, in order.
    """
    payload = "".join(json.dumps([ref, cand]) + "\n" for ref, cand in pairs)
    try:
        proc = subprocess.run(
            list(command),
            input=payload,
            capture_output=True,
            text=True,
            check=True,
        )
    except (OSError, subprocess.CalledProcessError) as exc:
        raise ScorerError(f"external scorer failed: {exc}") from exc
    lines = [line for line in proc.stdout.splitlines() if line.strip()]
    if len(lines) != len(pairs):
        raise ScorerError(
            f"scorer returned {len(lines)} scores for {len(pairs)} pairs"
        )
    scores: list[float] = []
    for index, line in enumerate(lines):
        try:
            scores.append(float(line))
        except ValueError as exc:
            raise ScorerError(f"malformed scorer output for pair {index}: {line!r}") from exc
    return scores


def external_max_match(
    command: Sequence[str],
    gt_groups: Mapping[tuple, Sequence[str]],
    gen_groups: Mapping[tuple, Sequence[str]],
) -> float | None:
    """Max-match aggregation (as in rouge_l_max) over an external scorer."""
    pairs: list[tuple[str, str]] = []
    spans: list[tuple[int, int]] = []
    for key, gts in gt_groups.items():
        candidates = gen_groups.get(key)
        if not candidates:
            raise MetricError(f"section {key} has ground truth but no generated questions")
        for gt in gts:
            start = len(pairs)
            pairs.extend((gt, cand) for cand in candidates)
            spans.append((start, len(pairs)))
    if not pairs:
        return None
    scores = run_external_scorer(command, pairs)
    return float(statistics.fmean(max(scores[s:e]) for s, e in spans))


# ---------------------------------------------------------------------------
# fold metrics and aggregation


@dataclass
class FoldMetrics:
    """Per-fold metric values; None marks an undefined metric."""

    n_sections: int
    n_generated: int
    n_deduped: int
    generated_per_section: float | None
    answerable_per_section: float | None
    rouge_l_ori: float | None
    rouge_l_alt: float | None
    self_bleu: float | None
    answer_type_ratio: dict[str, float] = field(default_factory=dict)
    external: dict[str, float | None] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "n_sections": self.n_sections,
            "n_generated": self.n_generated,
            "n_deduped": self.n_deduped,
            "generated_per_section": self.generated_per_section,
            "answerable_per_section": self.answerable_per_section,
            "rouge_l_ori": self.rouge_l_ori,
            "rouge_l_alt": self.rouge_l_alt,
            "self_bleu": self.self_bleu,
            "answer_type_ratio": self.answer_type_ratio,
            "external": self.external,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "FoldMetrics":
        return cls(
            n_sections=record["n_sections"],
            n_generated=record["n_generated"],
            n_deduped=record["n_deduped"],
            generated_per_section=record["generated_per_section"],
            answerable_per_section=record["answerable_per_section"],
            rouge_l_ori=record["rouge_l_ori"],
            rouge_l_alt=record["rouge_l_alt"],
            self_bleu=record["self_bleu"],
            answer_type_ratio=dict(record.get("answer_type_ratio", {})),
            external=dict(record.get("external", {})),
        )


SCALAR_METRICS = (
    "generated_per_section",
    "answerable_per_section",
    "rouge_l_ori",
    "rouge_l_alt",
    "self_bleu",
)


def compute_fold_metrics(
    sections: Sequence,
    gt_pairs: Sequence,
    classified: Sequence,
    self_bleu_scope: str = "per_section",
    external_scorers: Mapping[str, Sequence[str]] | None = None,
) -> FoldMetrics:
    """Assemble one fold's metric report from classified generated questions.

    ``sections`` are the evaluated sections, ``gt_pairs`` the single-section
    ground-truth QA pairs for them, ``classified`` the generated questions
    with answerability labels. Rouge-L and Self-BLEU run on the raw generated
    sets; answerable counts and the answer-type ratio use deduplicated sets.
    """
    section_keys = [(s.story_id, s.section_id) for s in sections]
    by_section: dict[tuple, list] = {key: [] for key in section_keys}
    for record in classified:
        key = (record.story_id, record.section_id)
        if key in by_section:
            by_section[key].append(record)

    n_generated = sum(len(v) for v in by_section.values())
    generated_per_section = (
        float(statistics.fmean(len(by_section[k]) for k in section_keys))
        if section_keys
        else None
    )

    deduped_by_section = {k: dedup_records(v) for k, v in by_section.items()}
    n_deduped = sum(len(v) for v in deduped_by_section.values())
    answerable_per_section = (
        float(
            statistics.fmean(
                count_answerable(r.label for r in deduped_by_section[k])
                for k in section_keys
            )
        )
        if section_keys
        else None
    )

    label_counts = Counter(
        r.label for records in deduped_by_section.values() for r in records
    )
    ratio = {}
    if n_deduped:
        for label in ("explicit", "implicit", "no_answer"):
            ratio[label] = 100.0 * label_counts.get(label, 0) / n_deduped

    gt_groups: dict[tuple, list[str]] = {}
    for pair in gt_pairs:
        key = (pair.story_id, pair.section_id)
        if key in by_section:
            gt_groups.setdefault(key, []).append(pair.question)
    ori_scores: list[float] = []
    alt_scores: list[float] = []
    for key, gts in gt_groups.items():
        candidates = [r.text for r in by_section[key]]
        if not candidates:
            raise MetricError(f"section {key} has ground truth but no generated questions")
        ori_scores.extend(per_question_max_scores(gts, candidates))
        alt_scores.extend(per_question_alt_scores(gts, candidates))
    rouge_ori = float(statistics.fmean(ori_scores)) if ori_scores else None
    rouge_alt = float(statistics.fmean(alt_scores)) if alt_scores else None

    gen_groups = group_questions(
        [r for records in by_section.values() for r in records], scope=self_bleu_scope
    )
    sb = corpus_self_bleu(gen_groups)

    external: dict[str, float | None] = {}
    for name, command in (external_scorers or {}).items():
        if not command:
            external[name] = None
            continue
        gen_by_key = {k: [r.text for r in v] for k, v in by_section.items()}
        external[name] = external_max_match(command, gt_groups, gen_by_key)

    return FoldMetrics(
        n_sections=len(section_keys),
        n_generated=n_generated,
        n_deduped=n_deduped,
        generated_per_section=generated_per_section,
        answerable_per_section=answerable_per_section,
        rouge_l_ori=rouge_ori,
        rouge_l_alt=rouge_alt,
        self_bleu=sb,
        answer_type_ratio=ratio,
        external=external,
    )


def mean_and_se(values: Sequence[float]) -> tuple[float, float]:
    """Cross-fold mean and standard error (sample stdev / sqrt(k))."""
    if not values:
        raise MetricError("cannot aggregate an empty value list")
    mean = float(statistics.fmean(values))
    if len(values) == 1:
        return mean, 0.0
    return mean, float(statistics.stdev(values) / math.sqrt(len(values)))


def aggregate(folds: Sequence[FoldMetrics]) -> dict:
    """Cross-fold mean/SE per metric; undefined folds are excluded and counted.

    A metric undefined in every fold stays undefined. Single-fold reports are
    flagged and carry SE 0.
    """
    if not folds:
        raise MetricError("aggregate needs at least one fold")
    out: dict = {"n_folds": len(folds), "single_fold": len(folds) == 1, "metrics": {}}
    for name in SCALAR_METRICS:
        values = [getattr(f, name) for f in folds]
        defined = [v for v in values if v is not None]
        entry: dict = {"values": values, "n_defined": len(defined)}
        if defined:
            mean, se = mean_and_se(defined)
            entry["mean"] = mean
            entry["se"] = se
        else:
            entry["mean"] = None
            entry["se"] = None
        out["metrics"][name] = entry
    ratio_agg: dict[str, dict] = {}
    for label in ("explicit", "implicit", "no_answer"):
        values = [f.answer_type_ratio[label] for f in folds if f.answer_type_ratio]
        if values:
            mean, se = mean_and_se(values)
            ratio_agg[label] = {"mean": mean, "se": se}
    out["answer_type_ratio"] = ratio_agg
    external_names = sorted({name for f in folds for name in f.external})
    ext_agg: dict[str, dict] = {}
    for name in external_names:
        defined = [f.external[name] for f in folds if f.external.get(name) is not None]
        if defined:
            mean, se = mean_and_se(defined)
            ext_agg[name] = {"mean": mean, "se": se, "n_defined": len(defined)}
        else:
            ext_agg[name] = {"mean": None, "se": None, "n_defined": 0}
    out["external"] = ext_agg
    return out

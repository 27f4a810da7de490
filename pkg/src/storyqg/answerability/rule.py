"""Post-processing rule turning span logits into explicit/implicit/no-answer labels.

The decision uses three summed start+end scores: the sequence-level token
(cls_se), the implicit-answer token (imp_se), and the best ordinary context
span (a_se). A question is unanswerable when cls_se beats both a_se and
imp_se by more than the margin threshold tau; otherwise it is implicit when
imp_se beats a_se, else explicit. Independently of that comparison, a
span construction whose top end position precedes its top start position is
classified as no-answer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..kernels import best_span
from ..textutils import word_tokenize

LABEL_EXPLICIT = "explicit"
LABEL_IMPLICIT = "implicit"
LABEL_NO_ANSWER = "no_answer"
LABELS = (LABEL_EXPLICIT, LABEL_IMPLICIT, LABEL_NO_ANSWER)


class RuleError(ValueError):
    """Invalid span scores or classifier configuration."""


@dataclass
class SpanScores:
    """Raw per-position logits plus the special-token geometry.

    ``context_mask`` is True exactly at positions eligible as ordinary answer
    spans; it must exclude the cls and imp positions and the question segment.
    """

    start_logits: np.ndarray
    end_logits: np.ndarray
    cls_index: int
    imp_index: int | None
    context_mask: np.ndarray

    def __post_init__(self) -> None:
        self.start_logits = np.asarray(self.start_logits, dtype=np.float64)
        self.end_logits = np.asarray(self.end_logits, dtype=np.float64)
        self.context_mask = np.asarray(self.context_mask, dtype=bool)
        n = self.start_logits.shape[0]
        if self.end_logits.shape[0] != n or self.context_mask.shape[0] != n:
            raise RuleError("logit vectors and context mask must share length")
        if not 0 <= self.cls_index < n:
            raise RuleError("cls_index out of bounds")
        if self.imp_index is not None:
            if not 0 <= self.imp_index < n:
                raise RuleError("imp_index out of bounds")
            if self.imp_index == self.cls_index:
                raise RuleError("cls_index and imp_index must differ")
            if self.context_mask[self.imp_index]:
                raise RuleError("context mask must exclude the imp position")
        if self.context_mask[self.cls_index]:
            raise RuleError("context mask must exclude the cls position")

    def summed(self, index: int) -> float:
        return float(self.start_logits[index] + self.end_logits[index])


@dataclass(frozen=True)
class ClassifierConfig:
    tau: float
    max_answer_length: int = 30

    def __post_init__(self) -> None:
        if self.max_answer_length < 1:
            raise RuleError("max_answer_length must be >= 1")


@dataclass
class ClassificationResult:
    label: str
    best_span: tuple[int, int] | None
    cls_se: float
    imp_se: float
    a_se: float


def classify(scores: SpanScores, config: ClassifierConfig) -> ClassificationResult:
    """Apply the threshold decision rule to one question's span scores."""
    if not scores.context_mask.any():
        raise RuleError("empty context window")
    cls_se = scores.summed(scores.cls_index)
    imp_se = (
        scores.summed(scores.imp_index)
        if scores.imp_index is not None
        else float("-inf")
    )
    a_se, span_start, span_end = best_span(
        scores.start_logits,
        scores.end_logits,
        scores.context_mask,
        config.max_answer_length,
    )
    if span_start < 0:
        raise RuleError("no valid answer span in the context window")

    masked_start = np.where(scores.context_mask, scores.start_logits, -np.inf)
    masked_end = np.where(scores.context_mask, scores.end_logits, -np.inf)
    top_start = int(np.argmax(masked_start))
    top_end = int(np.argmax(masked_end))

    if top_end < top_start:
        label = LABEL_NO_ANSWER
        span = None
    elif cls_se > a_se + config.tau and cls_se > imp_se + config.tau:
        label = LABEL_NO_ANSWER
        span = None
    elif imp_se > a_se:
        label = LABEL_IMPLICIT
        span = None
    else:
        label = LABEL_EXPLICIT
        span = (span_start, span_end)
    return ClassificationResult(
        label=label, best_span=span, cls_se=cls_se, imp_se=imp_se, a_se=a_se
    )


@dataclass
class ThresholdSweep:
    """Answerable ratio per threshold, ordered from the largest tau down.

    Along that traversal the ratio is non-increasing: lowering tau can only
    move questions into the no-answer bucket.
    """

    curve: list[tuple[float, float]] = field(default_factory=list)
    recommended_tau: float | None = None


def sweep_threshold(
    scored: Sequence[SpanScores],
    tau_grid: Sequence[float],
    max_answer_length: int = 30,
    drop_tolerance: float = 0.02,
    grid_step_unit: float = 1.0,
) -> ThresholdSweep:
    """Answerable-ratio curve over a tau grid, on a ground-truth answerable set.

    The recommended threshold is the smallest grid value that still precedes a
    significant drop: the lowest tau whose step down loses more than
    ``drop_tolerance`` (scaled per ``grid_step_unit`` of tau). With no
    significant drop anywhere the smallest grid value is recommended.
    """
    if len(tau_grid) == 0:
        raise RuleError("tau grid must be non-empty")
    if not scored:
        raise RuleError("ground-truth set must be non-empty")
    taus = sorted(set(float(t) for t in tau_grid), reverse=True)
    curve: list[tuple[float, float]] = []
    for tau in taus:
        config = ClassifierConfig(tau=tau, max_answer_length=max_answer_length)
        answerable = sum(
            1 for s in scored if classify(s, config).label != LABEL_NO_ANSWER
        )
        curve.append((tau, answerable / len(scored)))

    recommended = taus[-1]
    for (tau_hi, ratio_hi), (tau_lo, ratio_lo) in zip(curve, curve[1:]):
        drop = ratio_hi - ratio_lo
        if drop > drop_tolerance * (tau_hi - tau_lo) / grid_step_unit:
            recommended = tau_hi
    return ThresholdSweep(curve=curve, recommended_tau=recommended)


# ---------------------------------------------------------------------------
# classifier scoring helpers (token overlap, shared by evaluate_classifier)


def token_f1(prediction: str, gold_answers: Sequence[str]) -> float:
    """Best token-overlap F1 against any gold answer, on a 0-100 scale."""
    pred_tokens = word_tokenize(prediction)
    best = 0.0
    for gold in gold_answers:
        gold_tokens = word_tokenize(gold)
        if not pred_tokens or not gold_tokens:
            continue
        common = 0
        remaining = dict()
        for t in gold_tokens:
            remaining[t] = remaining.get(t, 0) + 1
        for t in pred_tokens:
            if remaining.get(t, 0) > 0:
                remaining[t] -= 1
                common += 1
        if common == 0:
            continue
        precision = common / len(pred_tokens)
        recall = common / len(gold_tokens)
        best = max(best, 200.0 * precision * recall / (precision + recall))
    return best


def overlap_accurate(prediction: str, gold_answers: Sequence[str]) -> bool:
    """True when at least one predicted token occurs in some gold answer."""
    pred_tokens = set(word_tokenize(prediction))
    return any(pred_tokens & set(word_tokenize(gold)) for gold in gold_answers)

"""Three-way answerability classification: span scoring plus the threshold rule."""

from .rule import (  # noqa: F401
    LABELS,
    ClassificationResult,
    ClassifierConfig,
    RuleError,
    SpanScores,
    ThresholdSweep,
    classify,
    overlap_accurate,
    sweep_threshold,
    token_f1,
)

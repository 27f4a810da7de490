"""Shared text normalization: tokenizers, question normalization, answer location."""

from __future__ import annotations

import re

WH_WORDS = ("what", "when", "where", "which", "who", "why", "how")
OTHER_TYPE = "other"
QUESTION_TYPES = WH_WORDS + (OTHER_TYPE,)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_WS_RE = re.compile(r"\s+")


def word_tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation boundaries.

    Used for wh-word tagging, Rouge-L, and token-overlap scoring.
    """
    return _TOKEN_RE.findall(text.lower())


def bleu_tokenize(text: str) -> list[str]:
    """Lowercase whitespace split, punctuation kept attached.

    Self-BLEU uses this deliberately simpler tokenizer: it reproduces the
    published per-group scores, while punctuation-splitting drifts upward.
    """
    return text.lower().split()


def normalize_question(text: str) -> str:
    """Canonical surface form for duplicate detection.

    Lowercase, collapse internal whitespace, strip terminal punctuation.
    """
    out = _WS_RE.sub(" ", text.strip().lower())
    return out.rstrip("?!. ")


def collapse_whitespace(text: str) -> str:
    return _WS_RE.sub(" ", text.strip())


def locate_answer(context: str, answer: str) -> tuple[int, int] | None:
    """Find `answer` in `context`, case-insensitive and whitespace-tolerant.

    Returns the (start, end) character span of the first match, or None.
    """
    parts = answer.split()
    if not parts:
        return None
    pattern = r"\s+".join(re.escape(p) for p in parts)
    match = re.search(pattern, context, flags=re.IGNORECASE)
    if match is None:
        return None
    return match.start(), match.end()


def answer_is_locatable(context: str, answer: str) -> bool:
    return locate_answer(context, answer) is not None

"""Question-generation model: similarity-regularized seq2seq fine-tuning.

The training objective combines token-level cross-entropy with a hinge on
cosine similarity between mean-pooled sentence representations: reference
questions are pooled from encoder states over their token spans, the target
question from decoder states over its tokens, and the loss
``mean_i max(0, 1 - cos(Q_i, TQ))`` pulls them together. The combined
objective is ``CE + beta * MQS``; ``beta = 0`` trains pure cross-entropy with
the similarity term logged but kept out of the backward pass.
"""

from __future__ import annotations

import copy
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from .corpus import Corpus, QAPair, Section
from .inputs import DEFAULT_MAX_REFERENCES, EncoderInput, build_training_example
from .textutils import OTHER_TYPE

logger = logging.getLogger(__name__)

SELECTION_CRITERIA = ("validation_mqs_loss", "validation_total_loss")


class TokenBudgetError(ValueError):
    """Input cannot be rendered within the model token budget."""


@dataclass(frozen=True)
class TrainingObjectiveConfig:
    beta: float = 1.0
    learning_rate: float = 5e-6
    batch_size: int = 8
    epochs: int = 15
    max_input_tokens: int = 1024
    selection_criterion: str = "validation_mqs_loss"
    max_references: int = DEFAULT_MAX_REFERENCES
    max_target_tokens: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.max_input_tokens < 4:
            raise ValueError("max_input_tokens too small to render any input")
        if self.selection_criterion not in SELECTION_CRITERIA:
            raise ValueError(f"selection_criterion must be one of {SELECTION_CRITERIA}")


def mean_pool(token_states: torch.Tensor, span: tuple[int, int]) -> torch.Tensor:
    """Arithmetic mean of the rows in [start, stop); errors on an empty span."""
    start, stop = span
    if stop <= start or start < 0 or stop > token_states.shape[0]:
        raise ValueError(f"invalid pooling span {span} for {token_states.shape[0]} rows")
    return token_states[start:stop].mean(dim=0)


def mqs_loss(reference_reps: torch.Tensor, target_rep: torch.Tensor) -> torch.Tensor:
    """mean_i max(0, 1 - cos(Q_i, TQ)); bounded in [0, 2].

    Requires at least one reference and no zero-norm representation (the
    cosine would be undefined).
    """
    if reference_reps.dim() != 2 or reference_reps.shape[0] < 1:
        raise ValueError("reference_reps must be a non-empty (m, hidden) matrix")
    eps = torch.finfo(reference_reps.dtype).tiny
    if target_rep.norm() <= eps or bool((reference_reps.norm(dim=1) <= eps).any()):
        raise ValueError("zero-norm representation: cosine similarity is undefined")
    cos = torch.nn.functional.cosine_similarity(
        reference_reps, target_rep.unsqueeze(0), dim=1
    )
    return torch.clamp(1.0 - cos, min=0.0).mean()


def total_loss(ce, mqs, beta: float):
    """Combined objective ce + beta * mqs; beta = 0 returns ce untouched."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if beta == 0:
        return ce
    return ce + beta * mqs


@dataclass
class EncodedExample:
    input_ids: list[int]
    reference_spans: list[tuple[int, int]]
    labels: list[int]
    target_len: int


class QGModel:
    """Seq2seq wrapper owning the tokenizer, encoding policy, and decoding."""

    def __init__(self, model, tokenizer, meta: dict | None = None):
        self.model = model
        self.tokenizer = tokenizer
        self.meta = meta or {}

    # -- constructors -------------------------------------------------------

    @classmethod
    def tiny(
        cls,
        tokenizer,
        d_model: int = 32,
        layers: int = 1,
        heads: int = 2,
        ffn_dim: int = 64,
        max_positions: int = 512,
        seed: int = 0,
    ) -> "QGModel":
        """Randomly initialized small model of the same architecture family;
        lets tests and toy runs avoid downloads."""
        from transformers import BartConfig, BartForConditionalGeneration

        config = BartConfig(
            vocab_size=tokenizer.vocab_size,
            d_model=d_model,
            encoder_layers=layers,
            decoder_layers=layers,
            encoder_attention_heads=heads,
            decoder_attention_heads=heads,
            encoder_ffn_dim=ffn_dim,
            decoder_ffn_dim=ffn_dim,
            max_position_embeddings=max_positions,
            pad_token_id=tokenizer.pad_id,
            bos_token_id=tokenizer.bos_id,
            eos_token_id=tokenizer.eos_id,
            decoder_start_token_id=tokenizer.eos_id,
            forced_eos_token_id=None,
        )
        torch.manual_seed(seed)
        model = BartForConditionalGeneration(config)
        return cls(model, tokenizer, meta={"tokenizer": "whitespace", "base": "tiny"})

    @classmethod
    def from_pretrained(cls, name: str, cache_dir: str | None = None) -> "QGModel":
        from transformers import AutoModelForSeq2SeqLM

        from .tokenization import PretrainedTokenizer

        model = AutoModelForSeq2SeqLM.from_pretrained(name, cache_dir=cache_dir)
        tokenizer = PretrainedTokenizer.from_name(name, cache_dir=cache_dir)
        return cls(model, tokenizer, meta={"tokenizer": "pretrained", "base": name})

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model.save_pretrained(directory / "model")
        if self.meta.get("tokenizer") == "whitespace":
            self.tokenizer.save(directory / "vocab.json")
        else:
            self.tokenizer.hf.save_pretrained(directory / "hf_tokenizer")
        (directory / "meta.json").write_text(json.dumps(self.meta), encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "QGModel":
        from transformers import AutoModelForSeq2SeqLM

        directory = Path(directory)
        if not directory.exists():
            raise FileNotFoundError(f"checkpoint not found: {directory}")
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
        model = AutoModelForSeq2SeqLM.from_pretrained(directory / "model")
        if meta.get("tokenizer") == "whitespace":
            from .tokenization import WhitespaceTokenizer

            tokenizer = WhitespaceTokenizer.load(directory / "vocab.json")
        else:
            from transformers import AutoTokenizer

            from .tokenization import PretrainedTokenizer

            tokenizer = PretrainedTokenizer(
                AutoTokenizer.from_pretrained(directory / "hf_tokenizer")
            )
        return cls(model, tokenizer, meta=meta)

    # -- encoding -----------------------------------------------------------

    def encode_input(
        self, encoder_input: EncoderInput, max_input_tokens: int
    ) -> tuple[list[int], list[tuple[int, int]]]:
        """Token ids plus the span of each surviving reference question.

        When over budget, reference questions are dropped from the end of the
        list first, then the context tail is truncated; the type prefix is
        never touched.
        """
        tok = self.tokenizer
        type_ids = tok.encode(encoder_input.question_type)
        context_ids = tok.encode(encoder_input.context)
        reference_ids = [tok.encode(q) for q in encoder_input.reference_questions]

        def assemble(ctx: list[int], refs: list[list[int]]):
            ids = [tok.bos_id, *type_ids, tok.sep_id, *ctx]
            spans = []
            for ref in refs:
                ids.append(tok.sep_id)
                spans.append((len(ids), len(ids) + len(ref)))
                ids.extend(ref)
            ids.append(tok.eos_id)
            return ids, spans

        ids, spans = assemble(context_ids, reference_ids)
        while len(ids) > max_input_tokens and reference_ids:
            reference_ids.pop()
            ids, spans = assemble(context_ids, reference_ids)
        if len(ids) > max_input_tokens:
            overhead = len(ids) - len(context_ids)
            keep = max_input_tokens - overhead
            if keep < 1:
                raise TokenBudgetError(
                    f"budget {max_input_tokens} cannot fit the type prefix and context"
                )
            ids, spans = assemble(context_ids[:keep], reference_ids)
        return ids, spans

    def encode_target(self, question: str, max_target_tokens: int) -> tuple[list[int], int]:
        ids = self.tokenizer.encode(question)[: max_target_tokens - 1]
        if not ids:
            raise TokenBudgetError("target question is empty after tokenization")
        return [*ids, self.tokenizer.eos_id], len(ids)

    def encode_example(
        self, encoder_input: EncoderInput, target: str, config: TrainingObjectiveConfig
    ) -> EncodedExample:
        input_ids, spans = self.encode_input(encoder_input, config.max_input_tokens)
        labels, target_len = self.encode_target(target, config.max_target_tokens)
        return EncodedExample(input_ids, spans, labels, target_len)

    # -- losses and decoding ------------------------------------------------

    def batch_losses(
        self, examples: Sequence[EncodedExample], mqs_requires_grad: bool = True
    ) -> tuple[torch.Tensor, torch.Tensor | None, int]:
        """(cross-entropy, similarity loss or None, #examples with references).

        Examples without reference questions contribute cross-entropy only.
        With ``mqs_requires_grad=False`` the similarity term is computed
        detached from the graph, for logging under a pure-CE objective.
        """
        pad = self.tokenizer.pad_id
        max_in = max(len(e.input_ids) for e in examples)
        max_lab = max(len(e.labels) for e in examples)
        input_ids = torch.full((len(examples), max_in), pad, dtype=torch.long)
        labels = torch.full((len(examples), max_lab), -100, dtype=torch.long)
        for i, example in enumerate(examples):
            input_ids[i, : len(example.input_ids)] = torch.tensor(example.input_ids)
            labels[i, : len(example.labels)] = torch.tensor(example.labels)
        attention_mask = (input_ids != pad).long()
        out = self.model(
            input_ids=input_ids,
            attention_mask=attention_mask,
            labels=labels,
            output_hidden_states=True,
        )
        ce = out.loss

        def pooled_terms() -> list[torch.Tensor]:
            encoder_states = out.encoder_last_hidden_state
            decoder_states = out.decoder_hidden_states[-1]
            terms = []
            for i, example in enumerate(examples):
                if not example.reference_spans:
                    continue
                refs = torch.stack(
                    [mean_pool(encoder_states[i], span) for span in example.reference_spans]
                )
                target_rep = mean_pool(decoder_states[i], (0, example.target_len))
                terms.append(mqs_loss(refs, target_rep))
            return terms

        if mqs_requires_grad:
            terms = pooled_terms()
        else:
            with torch.no_grad():
                terms = pooled_terms()
        mqs = torch.stack(terms).mean() if terms else None
        return ce, mqs, len(terms)

    def beam_candidates(
        self,
        encoder_input: EncoderInput,
        beam_size: int,
        max_new_tokens: int,
        max_input_tokens: int = 1024,
    ) -> list[str]:
        """Ranked beam hypotheses for one encoder input, best first."""
        if beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        ids, _ = self.encode_input(encoder_input, max_input_tokens)
        input_ids = torch.tensor([ids], dtype=torch.long)
        self.model.eval()
        with torch.no_grad():
            generated = self.model.generate(
                input_ids=input_ids,
                attention_mask=torch.ones_like(input_ids),
                num_beams=beam_size,
                num_return_sequences=beam_size,
                max_new_tokens=max_new_tokens,
                early_stopping=True,
                do_sample=False,
            )
        return [self.tokenizer.decode(seq.tolist()) for seq in generated]

    def sampled_candidates(
        self,
        encoder_input: EncoderInput,
        num_sequences: int,
        max_new_tokens: int,
        top_p: float,
        max_input_tokens: int = 1024,
        seed: int | None = None,
    ) -> list[str]:
        """Nucleus-sampling decoder behind the same interface, for comparisons."""
        ids, _ = self.encode_input(encoder_input, max_input_tokens)
        input_ids = torch.tensor([ids], dtype=torch.long)
        if seed is not None:
            torch.manual_seed(seed)
        self.model.eval()
        with torch.no_grad():
            generated = self.model.generate(
                input_ids=input_ids,
                attention_mask=torch.ones_like(input_ids),
                do_sample=True,
                top_p=top_p,
                num_return_sequences=num_sequences,
                max_new_tokens=max_new_tokens,
            )
        return [self.tokenizer.decode(seq.tolist()) for seq in generated]


# ---------------------------------------------------------------------------
# training


def build_training_examples(
    sections: Sequence[Section],
    qa_pairs: Sequence[QAPair],
    max_references: int = DEFAULT_MAX_REFERENCES,
) -> list[tuple[EncoderInput, str]]:
    """One example per typed ground-truth question.

    References are the section's other questions (any type) in corpus order;
    questions tagged `other` cannot carry a type prefix and are skipped.
    """
    by_section = {s.key: s for s in sections}
    pairs_by_section: dict[tuple[str, str], list[QAPair]] = {}
    for pair in qa_pairs:
        pairs_by_section.setdefault(pair.key, []).append(pair)
    examples = []
    for section in sections:
        section_pairs = pairs_by_section.get(section.key, [])
        for pair in section_pairs:
            if pair.question_type == OTHER_TYPE:
                continue
            references = [
                other.question for other in section_pairs if other.question != pair.question
            ]
            examples.append(
                build_training_example(pair, by_section[pair.key], references, max_references)
            )
    return examples


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    checkpoint_dir: Path | None = None

    def epoch_records(self, split: str) -> list[dict]:
        return [r for r in self.log if r["split"] == split]


def _epoch_pass(
    model: QGModel,
    examples: Sequence[EncodedExample],
    config: TrainingObjectiveConfig,
    optimizer=None,
    order: Sequence[int] | None = None,
) -> tuple[float, float | None]:
    """One pass over the examples; trains when an optimizer is given.

    Returns example-weighted mean CE and mean MQS (None if no example in the
    pass carried references).
    """
    indices = list(order) if order is not None else list(range(len(examples)))
    ce_sum = 0.0
    mqs_sum = 0.0
    mqs_count = 0
    for start in range(0, len(indices), config.batch_size):
        batch = [examples[i] for i in indices[start : start + config.batch_size]]
        ce, mqs, n_mqs = model.batch_losses(batch, mqs_requires_grad=config.beta > 0)
        if optimizer is not None:
            loss = total_loss(ce, mqs, config.beta) if mqs is not None else ce
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        ce_sum += float(ce.detach()) * len(batch)
        if mqs is not None:
            mqs_sum += float(mqs.detach()) * n_mqs
            mqs_count += n_mqs
    mean_ce = ce_sum / len(indices)
    mean_mqs = mqs_sum / mqs_count if mqs_count else None
    return mean_ce, mean_mqs


def train(
    train_corpus: Corpus,
    val_corpus: Corpus,
    model: QGModel,
    config: TrainingObjectiveConfig,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Fine-tune on the combined objective with per-epoch selection.

    Logs CE and MQS separately for both splits each epoch and keeps the
    checkpoint minimizing the configured validation criterion.
    """
    train_examples = [
        model.encode_example(enc, target, config)
        for enc, target in build_training_examples(
            train_corpus.sections, train_corpus.qa_pairs, config.max_references
        )
    ]
    if not train_examples:
        raise ValueError("training split produced no examples")
    val_examples = [
        model.encode_example(enc, target, config)
        for enc, target in build_training_examples(
            val_corpus.sections, val_corpus.qa_pairs, config.max_references
        )
    ]

    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    optimizer = torch.optim.AdamW(model.model.parameters(), lr=config.learning_rate)

    result = TrainResult()
    best_value = float("inf")
    best_state = None
    for epoch in range(1, config.epochs + 1):
        order = list(range(len(train_examples)))
        rng.shuffle(order)
        model.model.train()
        train_ce, train_mqs = _epoch_pass(model, train_examples, config, optimizer, order)
        model.model.eval()
        with torch.no_grad():
            if val_examples:
                val_ce, val_mqs = _epoch_pass(model, val_examples, config)
            else:
                val_ce, val_mqs = train_ce, train_mqs
        for split, ce_v, mqs_v in (("train", train_ce, train_mqs), ("validation", val_ce, val_mqs)):
            result.log.append(
                {
                    "epoch": epoch,
                    "split": split,
                    "ce_loss": ce_v,
                    "mqs_loss": mqs_v,
                    "total_loss": ce_v + config.beta * mqs_v if mqs_v is not None else ce_v,
                }
            )
        if config.selection_criterion == "validation_mqs_loss" and val_mqs is not None:
            value = val_mqs
        else:
            if config.selection_criterion == "validation_mqs_loss":
                logger.warning("no validation MQS available; selecting on total loss")
            value = val_ce + config.beta * val_mqs if val_mqs is not None else val_ce
        if value < best_value:
            best_value = value
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.model.state_dict())

    if best_state is not None:
        model.model.load_state_dict(best_state)
    if out_dir is not None:
        out_dir = Path(out_dir)
        result.checkpoint_dir = model.save(out_dir / "checkpoint")
        with (out_dir / "training_log.jsonl").open("w", encoding="utf-8") as fh:
            for record in result.log:
                fh.write(json.dumps(record) + "\n")
    return result

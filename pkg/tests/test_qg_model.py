"""Seq2seq wrapper: encoding policy, batch losses, decoding, training loop."""

from __future__ import annotations

import pytest
import torch

from storyqg.corpus import Corpus
from storyqg.inputs import EncoderInput
from storyqg.qg_model import (
    QGModel,
    TokenBudgetError,
    TrainingObjectiveConfig,
    build_training_examples,
    train,
)
from storyqg.textutils import OTHER_TYPE

from conftest import make_toy_corpus


@pytest.fixture
def tiny_model(toy_tokenizer):
    return QGModel.tiny(toy_tokenizer, seed=0)


CONFIG = TrainingObjectiveConfig(
    beta=1.0,
    learning_rate=1e-3,
    batch_size=4,
    epochs=2,
    max_input_tokens=256,
    max_target_tokens=32,
    seed=0,
)


class TestEncoding:
    def test_layout_and_reference_spans(self, tiny_model):
        tok = tiny_model.tokenizer
        enc = EncoderInput("why", "the fox found a lamp", ("why is it?", "what was it?"))
        ids, spans = tiny_model.encode_input(enc, max_input_tokens=64)
        assert ids[0] == tok.bos_id
        assert ids[-1] == tok.eos_id
        assert ids.count(tok.sep_id) == 3
        for span, reference in zip(spans, enc.reference_questions):
            assert ids[span[0] : span[1]] == tok.encode(reference)
            assert ids[span[0] - 1] == tok.sep_id

    def test_truncation_drops_references_first(self, tiny_model):
        context = "the fox found a lamp near the river and was happy"
        refs = tuple(f"why was the fox happy about the lamp number {i}?" for i in range(6))
        enc = EncoderInput("why", context, refs)
        full_ids, full_spans = tiny_model.encode_input(enc, max_input_tokens=512)
        assert len(full_spans) == 6
        budget = len(full_ids) - 4  # force dropping at least one reference
        ids, spans = tiny_model.encode_input(enc, max_input_tokens=budget)
        assert len(spans) < 6
        # context is intact: dropping references was enough
        ctx_ids = tiny_model.tokenizer.encode(context)
        assert ids[3 : 3 + len(ctx_ids)] == ctx_ids  # [bos, type, sep, ctx...]

    def test_truncation_cuts_context_tail_after_references(self, tiny_model):
        context = " ".join(["word"] * 60)
        enc = EncoderInput("why", context, ("why was it so?",))
        ids, spans = tiny_model.encode_input(enc, max_input_tokens=32)
        assert len(ids) == 32
        assert spans == []  # reference dropped before context truncation
        # type prefix survives
        assert ids[1] == tiny_model.tokenizer.encode("why")[0]

    def test_budget_too_small_for_prefix(self, tiny_model):
        enc = EncoderInput("why", "context words here")
        with pytest.raises(TokenBudgetError):
            tiny_model.encode_input(enc, max_input_tokens=4)

    def test_target_encoding(self, tiny_model):
        labels, target_len = tiny_model.encode_target("why was it so?", 32)
        assert labels[-1] == tiny_model.tokenizer.eos_id
        assert target_len == len(labels) - 1


class TestBatchLosses:
    def _examples(self, model, with_refs=True):
        refs = ("what did the fox find?",) if with_refs else ()
        enc = EncoderInput("why", "the fox found a lamp", refs)
        return [model.encode_example(enc, "why was the fox happy?", CONFIG)]

    def test_ce_and_mqs_finite(self, tiny_model):
        ce, mqs, n = tiny_model.batch_losses(self._examples(tiny_model))
        assert torch.isfinite(ce)
        assert mqs is not None and torch.isfinite(mqs)
        assert 0.0 <= float(mqs.detach()) <= 2.0
        assert n == 1

    def test_no_references_skips_mqs(self, tiny_model):
        ce, mqs, n = tiny_model.batch_losses(self._examples(tiny_model, with_refs=False))
        assert mqs is None
        assert n == 0
        assert torch.isfinite(ce)

    def test_beta_zero_detaches_mqs(self, tiny_model):
        ce, mqs, _ = tiny_model.batch_losses(self._examples(tiny_model), mqs_requires_grad=False)
        assert mqs is not None
        assert not mqs.requires_grad
        assert ce.requires_grad

    def test_beta_zero_backward_matches_pure_ce(self, toy_tokenizer):
        def grads(use_detached_mqs):
            model = QGModel.tiny(toy_tokenizer, seed=3)
            enc = EncoderInput("why", "the fox found a lamp", ("what did the fox find?",))
            examples = [model.encode_example(enc, "why was the fox happy?", CONFIG)]
            ce, mqs, _ = model.batch_losses(examples, mqs_requires_grad=not use_detached_mqs)
            from storyqg.qg_model import total_loss

            loss = total_loss(ce, mqs, 0.0) if use_detached_mqs else ce
            loss.backward()
            return [p.grad.clone() for p in model.model.parameters() if p.grad is not None]

        beta_zero = grads(use_detached_mqs=True)
        pure_ce = grads(use_detached_mqs=False)
        assert len(beta_zero) == len(pure_ce)
        for a, b in zip(beta_zero, pure_ce):
            assert torch.equal(a, b)


class TestDecoding:
    def test_beam_candidates_ranked_and_sized(self, tiny_model):
        enc = EncoderInput("why", "the fox found a lamp near the river")
        candidates = tiny_model.beam_candidates(enc, beam_size=5, max_new_tokens=8)
        assert len(candidates) == 5
        assert all(isinstance(c, str) for c in candidates)

    def test_deterministic(self, tiny_model):
        enc = EncoderInput("what", "the fox found a lamp near the river")
        first = tiny_model.beam_candidates(enc, beam_size=3, max_new_tokens=8)
        second = tiny_model.beam_candidates(enc, beam_size=3, max_new_tokens=8)
        assert first == second

    def test_invalid_beam_size(self, tiny_model):
        enc = EncoderInput("why", "ctx words")
        with pytest.raises(ValueError):
            tiny_model.beam_candidates(enc, beam_size=0, max_new_tokens=4)

    def test_sampling_decoder_same_interface(self, tiny_model):
        enc = EncoderInput("why", "the fox found a lamp near the river")
        first = tiny_model.sampled_candidates(enc, num_sequences=4, max_new_tokens=8,
                                              top_p=0.9, seed=0)
        second = tiny_model.sampled_candidates(enc, num_sequences=4, max_new_tokens=8,
                                               top_p=0.9, seed=0)
        assert len(first) == 4
        assert first == second  # seeded sampling is reproducible


class TestCheckpointRoundtrip:
    def test_save_load_preserves_weights_and_vocab(self, tmp_path, tiny_model):
        directory = tiny_model.save(tmp_path / "ckpt")
        loaded = QGModel.load(directory)
        for a, b in zip(tiny_model.model.parameters(), loaded.model.parameters()):
            assert torch.equal(a, b)
        assert loaded.tokenizer.vocab == tiny_model.tokenizer.vocab
        enc = EncoderInput("why", "the fox found a lamp")
        assert loaded.beam_candidates(enc, 2, 6) == tiny_model.beam_candidates(enc, 2, 6)

    def test_load_missing_checkpoint(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            QGModel.load(tmp_path / "absent")


class TestBuildTrainingExamples:
    def test_references_exclude_target_and_other_typed_skipped(self, toy_corpus):
        sections, qa_pairs = toy_corpus
        extra = qa_pairs[0].__class__(
            story_id=sections[0].story_id,
            section_ids=(sections[0].section_id,),
            question="Did the fox wait?",
            answers=("no",),
            answer_type="implicit",
            question_type=OTHER_TYPE,
        )
        examples = build_training_examples(sections[:1], list(qa_pairs[:3]) + [extra])
        # three typed questions -> three examples; `other` skipped as target
        assert len(examples) == 3
        for enc, target in examples:
            assert target not in enc.reference_questions
            # the other-typed question still serves as a reference
            assert "Did the fox wait?" in enc.reference_questions

    def test_section_with_single_question_gets_empty_references(self, toy_corpus):
        sections, qa_pairs = toy_corpus
        examples = build_training_examples(sections[:1], qa_pairs[:1])
        assert examples[0][0].reference_questions == ()


class TestTrain:
    def test_smoke_run_logs_and_selects(self, tmp_path, toy_corpus, toy_tokenizer):
        sections, qa_pairs = toy_corpus
        train_corpus = Corpus(sections[:4], [p for p in qa_pairs if any(
            p.key == s.key for s in sections[:4])])
        val_corpus = Corpus(sections[4:6], [p for p in qa_pairs if any(
            p.key == s.key for s in sections[4:6])])
        model = QGModel.tiny(toy_tokenizer, seed=0)
        result = train(train_corpus, val_corpus, model, CONFIG, out_dir=tmp_path)
        assert len(result.log) == 2 * CONFIG.epochs
        for record in result.log:
            assert set(record) == {"epoch", "split", "ce_loss", "mqs_loss", "total_loss"}
            assert record["mqs_loss"] is not None  # toy sections carry references
        assert result.best_epoch >= 1
        assert (tmp_path / "checkpoint").is_dir()
        assert (tmp_path / "training_log.jsonl").exists()

    def test_beta_zero_logs_mqs_without_training_on_it(self, toy_corpus, toy_tokenizer):
        sections, qa_pairs = toy_corpus
        corpus = Corpus(sections[:2], [p for p in qa_pairs if any(
            p.key == s.key for s in sections[:2])])
        config = TrainingObjectiveConfig(
            beta=0.0, learning_rate=1e-3, batch_size=4, epochs=1,
            max_input_tokens=256, max_target_tokens=32, seed=0,
            selection_criterion="validation_total_loss",
        )
        model = QGModel.tiny(toy_tokenizer, seed=0)
        result = train(corpus, corpus, model, config)
        assert all(r["mqs_loss"] is not None for r in result.log)
        assert all(r["total_loss"] == r["ce_loss"] for r in result.log)

    def test_empty_training_split_rejected(self, toy_corpus, toy_tokenizer):
        sections, _ = toy_corpus
        model = QGModel.tiny(toy_tokenizer, seed=0)
        empty = Corpus(sections[:1], [])
        with pytest.raises(ValueError):
            train(empty, empty, model, CONFIG)

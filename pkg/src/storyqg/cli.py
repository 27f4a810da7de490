"""Command-line pipeline: preprocess -> split -> train-qg -> generate ->
train-answerability -> sweep-threshold -> classify -> evaluate -> report.

Stages communicate only through files, so any stage can be swapped for a stub
(classify ships one behind --stub). Flag values override config-file values,
which override defaults. The STORYQG_CACHE_DIR environment variable selects
the cache directory for pretrained checkpoints.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shlex
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    CorpusError,
    load_corpus,
    make_cross_validation_splits,
    preprocess,
    read_split_manifest,
    select_fold,
    split_by_books,
    SplitSpec,
    write_qa_file,
    write_split_manifest,
)
from .metrics import FoldMetrics, MetricError, aggregate, compute_fold_metrics

logger = logging.getLogger(__name__)

CACHE_ENV_VAR = "STORYQG_CACHE_DIR"

_EXPECTED_ERRORS = (
    FileNotFoundError,
    CorpusError,
    MetricError,
    ValueError,
    RuntimeError,
)


def _cache_dir() -> str | None:
    return os.environ.get(CACHE_ENV_VAR) or None


# ---------------------------------------------------------------------------
# run manifests


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str]
    outputs: list[str]
    seed: int | None
    started_at: str
    finished_at: str = ""
    version: str = __version__
    output_hashes: dict[str, str] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.config, sort_keys=True).encode("utf-8")
        ).hexdigest()

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "output_hashes": self.output_hashes,
            "seed": self.seed,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "version": self.version,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _finish_manifest(manifest: RunManifest, manifest_path: Path) -> None:
    for output in manifest.outputs:
        path = Path(output)
        if path.is_file():
            manifest.output_hashes[output] = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest.finished_at = _now()
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(
        json.dumps(manifest.as_dict(), sort_keys=True, indent=2), encoding="utf-8"
    )


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    config_path = Path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"config file not found: {config_path}")
    config = json.loads(config_path.read_text(encoding="utf-8"))
    if not isinstance(config, dict):
        raise ValueError(f"config file must hold a flat JSON object: {config_path}")
    return config


def _resolve(defaults: dict, file_config: dict, flag_values: dict) -> dict:
    resolved = dict(defaults)
    for key, value in file_config.items():
        resolved[key] = value
    for key, value in flag_values.items():
        if value is not None:
            resolved[key] = value
    return resolved


# ---------------------------------------------------------------------------
# verbs


def _cmd_preprocess(args) -> int:
    sections, qa_pairs = load_corpus(args.sections, args.qa)
    kept, report = preprocess(sections, qa_pairs, args.mode)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    qa_out = out_dir / "qa_clean.jsonl"
    report_out = out_dir / "preprocess_report.json"
    write_qa_file(qa_out, kept)
    report_out.write_text(json.dumps(report.as_dict(), indent=2), encoding="utf-8")
    manifest = RunManifest(
        command="preprocess",
        config={"mode": args.mode},
        inputs={"sections": str(args.sections), "qa": str(args.qa)},
        outputs=[str(qa_out), str(report_out)],
        seed=None,
        started_at=args._started_at,
    )
    _finish_manifest(manifest, out_dir / "manifest-preprocess.json")
    print(json.dumps(report.as_dict()["removed"]))
    return 0


def _parse_ratios(raw: str) -> tuple[float, float, float]:
    parts = [float(p) for p in raw.split(",")]
    if len(parts) != 3:
        raise ValueError("ratios must be three comma-separated fractions")
    return tuple(parts)  # type: ignore[return-value]


def _cmd_split(args) -> int:
    sections, qa_pairs = load_corpus(args.sections, args.qa)
    ratios = _parse_ratios(args.ratios)
    if args.folds >= 2:
        splits = make_cross_validation_splits(
            sections, qa_pairs, k=args.folds, seed=args.seed, ratios=ratios
        )
    else:
        splits = [split_by_books(sections, qa_pairs, SplitSpec(seed=args.seed, ratios=ratios))]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits_out = out_dir / "splits.jsonl"
    write_split_manifest(splits_out, splits)
    manifest = RunManifest(
        command="split",
        config={"folds": args.folds, "seed": args.seed, "ratios": list(ratios)},
        inputs={"sections": str(args.sections), "qa": str(args.qa)},
        outputs=[str(splits_out)],
        seed=args.seed,
        started_at=args._started_at,
    )
    _finish_manifest(manifest, out_dir / "manifest-split.json")
    return 0


_TRAIN_QG_DEFAULTS = {
    "base_checkpoint": "tiny",
    "beta": 1.0,
    "learning_rate": 5e-6,
    "batch_size": 8,
    "epochs": 15,
    "max_input_tokens": 1024,
    "selection_criterion": "validation_mqs_loss",
    "max_references": 8,
    "max_target_tokens": 64,
    "seed": 0,
    "tiny_d_model": 32,
    "tiny_layers": 1,
    "tiny_heads": 2,
    "tiny_ffn_dim": 64,
    "tiny_max_positions": 512,
}


def _fold_assignment(splits_path: str, fold: int) -> dict[str, str]:
    folds = read_split_manifest(splits_path)
    if fold not in folds:
        raise ValueError(f"fold {fold} not present in {splits_path}")
    return folds[fold]


def _cmd_train_qg(args) -> int:
    from .qg_model import QGModel, TrainingObjectiveConfig, train
    from .tokenization import WhitespaceTokenizer

    config = _resolve(
        _TRAIN_QG_DEFAULTS,
        _load_config(args.config),
        {"beta": args.beta, "seed": args.seed, "epochs": args.epochs},
    )
    sections, qa_pairs = load_corpus(args.sections, args.qa)
    qa_pairs, _ = preprocess(sections, qa_pairs, "qg")
    assignment = _fold_assignment(args.splits, args.fold)
    train_corpus = select_fold(sections, qa_pairs, assignment, "train")
    val_corpus = select_fold(sections, qa_pairs, assignment, "validation")
    if not train_corpus.qa_pairs:
        raise ValueError("training split has no QA pairs")

    objective = TrainingObjectiveConfig(
        beta=float(config["beta"]),
        learning_rate=float(config["learning_rate"]),
        batch_size=int(config["batch_size"]),
        epochs=int(config["epochs"]),
        max_input_tokens=int(config["max_input_tokens"]),
        selection_criterion=str(config["selection_criterion"]),
        max_references=int(config["max_references"]),
        max_target_tokens=int(config["max_target_tokens"]),
        seed=int(config["seed"]),
    )
    if config["base_checkpoint"] == "tiny":
        texts = [s.text for s in sections] + [p.question for p in qa_pairs]
        tokenizer = WhitespaceTokenizer.build(texts)
        model = QGModel.tiny(
            tokenizer,
            d_model=int(config["tiny_d_model"]),
            layers=int(config["tiny_layers"]),
            heads=int(config["tiny_heads"]),
            ffn_dim=int(config["tiny_ffn_dim"]),
            max_positions=int(config["tiny_max_positions"]),
            seed=objective.seed,
        )
    else:
        model = QGModel.from_pretrained(str(config["base_checkpoint"]), cache_dir=_cache_dir())

    out_dir = Path(args.out_dir)
    result = train(train_corpus, val_corpus, model, objective, out_dir=out_dir)
    manifest = RunManifest(
        command="train-qg",
        config=config,
        inputs={"sections": str(args.sections), "qa": str(args.qa), "splits": str(args.splits)},
        outputs=[str(result.checkpoint_dir), str(out_dir / "training_log.jsonl")],
        seed=objective.seed,
        started_at=args._started_at,
    )
    _finish_manifest(manifest, out_dir / "manifest-train-qg.json")
    print(f"best epoch: {result.best_epoch}")
    return 0


def _cmd_generate(args) -> int:
    from .generator import GenerationConfig, generate_corpus, write_generated
    from .qg_model import QGModel

    sections, qa_pairs = load_corpus(args.sections, args.qa) if args.qa else (None, None)
    if sections is None:
        from .corpus import Section, _load_jsonl

        sections = [
            Section(
                story_id=str(r["story_id"]),
                section_id=str(r["section_id"]),
                text=str(r["text"]).strip(),
            )
            for _, r in _load_jsonl(args.sections)
        ]
    if args.splits is not None:
        assignment = _fold_assignment(args.splits, args.fold)
        keep = {b for b, name in assignment.items() if name == args.split}
        sections = [s for s in sections if s.story_id in keep]
    types = tuple(args.types.split(",")) if args.types else None
    config_kwargs = {
        "questions_per_type": args.n_per_type,
        "beam_size": args.beam_size,
        "max_new_tokens": args.max_new_tokens,
        "max_input_tokens": args.max_input_tokens,
    }
    if types:
        config_kwargs["types"] = types
    config = GenerationConfig(**config_kwargs)
    model = QGModel.load(args.checkpoint)
    records = generate_corpus(model, sections, config)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_generated(out_path, records)
    manifest = RunManifest(
        command="generate",
        config={
            "n_per_type": config.questions_per_type,
            "beam_size": config.beam_size,
            "types": list(config.types),
            "max_new_tokens": config.max_new_tokens,
            "max_input_tokens": config.max_input_tokens,
        },
        inputs={"checkpoint": str(args.checkpoint), "sections": str(args.sections)},
        outputs=[str(out_path)],
        seed=None,
        started_at=args._started_at,
    )
    _finish_manifest(manifest, out_path.parent / "manifest-generate.json")
    print(f"generated {len(records)} questions over {len(sections)} sections")
    return 0


_TRAIN_ANS_DEFAULTS = {
    "base_encoder": "tiny",
    "learning_rate": 5e-6,
    "batch_size": 16,
    "epochs_step1": 2,
    "epochs_step2": 8,
    "max_tokens": 384,
    "seed": 0,
    "tiny_hidden": 32,
    "tiny_layers": 1,
    "tiny_heads": 2,
    "tiny_max_positions": 512,
}


def _cmd_train_answerability(args) -> int:
    from .answerability.model import (
        SpanClassifier,
        TwoStepTrainConfig,
        load_general_qa,
        train_two_step,
    )
    from .corpus import Corpus
    from .tokenization import WhitespaceTokenizer

    config = _resolve(
        _TRAIN_ANS_DEFAULTS, _load_config(args.config), {"seed": args.seed}
    )
    general_qa = load_general_qa(args.squad)
    sections, qa_pairs = load_corpus(args.sections, args.qa)
    qa_pairs, _ = preprocess(sections, qa_pairs, "answerability")
    train_config = TwoStepTrainConfig(
        learning_rate=float(config["learning_rate"]),
        batch_size=int(config["batch_size"]),
        epochs_step1=int(config["epochs_step1"]),
        epochs_step2=int(config["epochs_step2"]),
        max_tokens=int(config["max_tokens"]),
        seed=int(config["seed"]),
    )
    if config["base_encoder"] == "tiny":
        texts = (
            [s.text for s in sections]
            + [p.question for p in qa_pairs]
            + [r["question"] for r in general_qa]
            + [r["context"] for r in general_qa]
        )
        tokenizer = WhitespaceTokenizer.build(texts)
        classifier = SpanClassifier.tiny(
            tokenizer,
            hidden_size=int(config["tiny_hidden"]),
            layers=int(config["tiny_layers"]),
            heads=int(config["tiny_heads"]),
            max_positions=int(config["tiny_max_positions"]),
            seed=train_config.seed,
        )
    else:
        raise ValueError(
            "pretrained encoders need a word-level tokenizer adapter; "
            "use base_encoder=tiny or load a saved checkpoint"
        )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = train_two_step(
        general_qa,
        Corpus(sections=sections, qa_pairs=qa_pairs),
        tokenizer,
        classifier,
        train_config,
        out_dir=out_dir,
    )
    (out_dir / "training_log.json").write_text(json.dumps(log, indent=2), encoding="utf-8")
    manifest = RunManifest(
        command="train-answerability",
        config=config,
        inputs={"squad": str(args.squad), "sections": str(args.sections), "qa": str(args.qa)},
        outputs=[
            str(out_dir / "step1"),
            str(out_dir / "step2"),
            str(out_dir / "training_log.json"),
        ],
        seed=train_config.seed,
        started_at=args._started_at,
    )
    _finish_manifest(manifest, out_dir / "manifest-train-answerability.json")
    return 0


def _parse_tau_grid(raw: str) -> list[float]:
    if ":" in raw:
        start, stop, step = (float(p) for p in raw.split(":"))
        if step <= 0:
            raise ValueError("tau grid step must be positive")
        grid = []
        tau = start
        while tau <= stop + 1e-9:
            grid.append(round(tau, 10))
            tau += step
        return grid
    return [float(p) for p in raw.split(",")]


def _load_scores_file(path: str) -> list:
    from .answerability.rule import SpanScores

    scores_path = Path(path)
    if not scores_path.exists():
        raise FileNotFoundError(f"scores file not found: {scores_path}")
    scored = []
    with scores_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            scored.append(
                SpanScores(
                    start_logits=np.array(record["start_logits"], dtype=np.float64),
                    end_logits=np.array(record["end_logits"], dtype=np.float64),
                    cls_index=int(record["cls_index"]),
                    imp_index=record.get("imp_index"),
                    context_mask=np.array(record["context_mask"], dtype=bool),
                )
            )
    return scored


def _cmd_sweep_threshold(args) -> int:
    from .answerability.rule import sweep_threshold

    tau_grid = _parse_tau_grid(args.tau_grid)
    if args.scores:
        scored = _load_scores_file(args.scores)
        inputs = {"scores": str(args.scores)}
    else:
        from .answerability.model import SpanClassifier, score_spans

        if not (args.checkpoint and args.sections and args.qa):
            raise ValueError("sweep-threshold needs either --scores or --checkpoint with --sections/--qa")
        classifier, tokenizer = SpanClassifier.load(args.checkpoint)
        sections, qa_pairs = load_corpus(args.sections, args.qa)
        qa_pairs, _ = preprocess(sections, qa_pairs, "answerability")
        by_key = {s.key: s for s in sections}
        scored = [
            score_spans(classifier, tokenizer, p.question, by_key[p.key].text)
            for p in qa_pairs
        ]
        inputs = {"checkpoint": str(args.checkpoint), "sections": str(args.sections), "qa": str(args.qa)}
    sweep = sweep_threshold(
        scored,
        tau_grid,
        max_answer_length=args.max_answer_length,
        drop_tolerance=args.drop_tolerance,
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(
        json.dumps(
            {
                "curve": [[tau, ratio] for tau, ratio in sweep.curve],
                "recommended_tau": sweep.recommended_tau,
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    manifest = RunManifest(
        command="sweep-threshold",
        config={
            "tau_grid": tau_grid,
            "max_answer_length": args.max_answer_length,
            "drop_tolerance": args.drop_tolerance,
        },
        inputs=inputs,
        outputs=[str(out_path)],
        seed=None,
        started_at=args._started_at,
    )
    _finish_manifest(manifest, out_path.parent / "manifest-sweep-threshold.json")
    print(f"recommended tau: {sweep.recommended_tau}")
    return 0


def _cmd_classify(args) -> int:
    from .answerability.model import (
        HeuristicSpanScorer,
        SpanClassifier,
        classify_generated,
        write_classified,
    )
    from .answerability.rule import ClassifierConfig
    from .generator import read_generated

    records = read_generated(args.generated)
    sections, _ = load_corpus(args.sections, args.qa) if args.qa else (None, None)
    if sections is None:
        from .corpus import Section, _load_jsonl

        sections = [
            Section(
                story_id=str(r["story_id"]),
                section_id=str(r["section_id"]),
                text=str(r["text"]).strip(),
            )
            for _, r in _load_jsonl(args.sections)
        ]
    config = ClassifierConfig(tau=args.tau, max_answer_length=args.max_answer_length)
    if args.stub:
        scorer, tokenizer = HeuristicSpanScorer(), None
    else:
        if not args.checkpoint:
            raise ValueError("classify needs --checkpoint or --stub")
        scorer, tokenizer = SpanClassifier.load(args.checkpoint)
    classified = classify_generated(scorer, tokenizer, records, sections, config)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_classified(out_path, classified)
    manifest = RunManifest(
        command="classify",
        config={
            "tau": args.tau,
            "max_answer_length": args.max_answer_length,
            "stub": bool(args.stub),
        },
        inputs={
            "generated": str(args.generated),
            "sections": str(args.sections),
            "checkpoint": str(args.checkpoint) if args.checkpoint else "",
        },
        outputs=[str(out_path)],
        seed=None,
        started_at=args._started_at,
    )
    _finish_manifest(manifest, out_path.parent / "manifest-classify.json")
    return 0


def _cmd_evaluate(args) -> int:
    from .answerability.model import read_classified

    sections, qa_pairs = load_corpus(args.sections, args.qa)
    qa_pairs, _ = preprocess(sections, qa_pairs, "qg")
    scorers = {}
    for spec_item in args.scorer or []:
        name, _, command = spec_item.partition("=")
        scorers[name] = shlex.split(command) if command else None

    folds: list[FoldMetrics] = []
    for classified_path in args.classified:
        records = read_classified(classified_path)
        present = {(r.story_id, r.section_id) for r in records}
        fold_sections = [s for s in sections if s.key in present]
        fold_pairs = [p for p in qa_pairs if p.key in present]
        folds.append(
            compute_fold_metrics(
                fold_sections,
                fold_pairs,
                records,
                self_bleu_scope=args.self_bleu_scope,
                external_scorers=scorers,
            )
        )
    report = {
        "folds": [f.as_dict() for f in folds],
        "aggregate": aggregate(folds),
        "provenance": {
            "classified_files": [str(p) for p in args.classified],
            "sections": str(args.sections),
            "qa": str(args.qa),
            "self_bleu_scope": args.self_bleu_scope,
            "version": __version__,
        },
    }
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=2), encoding="utf-8")
    manifest = RunManifest(
        command="evaluate",
        config={"self_bleu_scope": args.self_bleu_scope},
        inputs={
            "classified": ",".join(str(p) for p in args.classified),
            "sections": str(args.sections),
            "qa": str(args.qa),
        },
        outputs=[str(out_path)],
        seed=None,
        started_at=args._started_at,
    )
    _finish_manifest(manifest, out_path.parent / "manifest-evaluate.json")
    return 0


_METRIC_TITLES = {
    "generated_per_section": "# Generated / Section",
    "answerable_per_section": "# Answerable / Section",
    "rouge_l_ori": "Rouge-L F1 (ori)",
    "rouge_l_alt": "Rouge-L F1 (alt)",
    "self_bleu": "Self-BLEU",
}


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def render_report(report: dict) -> str:
    """Human-readable metric table with mean/SE columns and hyphens for
    undefined metrics."""
    folds = report["folds"]
    agg = report["aggregate"]
    lines = []
    header = ["Metric"] + [f"Fold {i}" for i in range(len(folds))] + ["Mean", "SE"]
    rows = [header]
    for key, title in _METRIC_TITLES.items():
        entry = agg["metrics"][key]
        row = [title]
        row += [_fmt(f[key]) for f in folds]
        row += [_fmt(entry["mean"]), _fmt(entry["se"])]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    for r in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)))
    if agg.get("single_fold"):
        lines.append("(single fold: SE is reported as 0)")
    ratio = agg.get("answer_type_ratio") or {}
    if ratio:
        lines.append("")
        lines.append("Answer types (% of deduplicated questions)")
        for label in ("explicit", "implicit", "no_answer"):
            if label in ratio:
                lines.append(
                    f"  {label:<10} {ratio[label]['mean']:6.2f}%  (SE {ratio[label]['se']:.2f})"
                )
    external = agg.get("external") or {}
    if external:
        lines.append("")
        lines.append("External scorers (max-match mean)")
        for name, entry in external.items():
            value = entry.get("mean")
            shown = "skipped" if value is None else f"{value:.4f}"
            lines.append(f"  {name:<12} {shown}")
    return "\n".join(lines)


def _cmd_report(args) -> int:
    report_path = Path(args.report)
    if not report_path.exists():
        raise FileNotFoundError(f"report file not found: {report_path}")
    report = json.loads(report_path.read_text(encoding="utf-8"))
    text = render_report(report)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storyqg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean a QA corpus")
    p.add_argument("--sections", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--mode", choices=["qg", "answerability"], default="qg")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("split", help="book-level train/validation/test splits")
    p.add_argument("--sections", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--folds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train-qg", help="fine-tune the question generator")
    p.add_argument("--sections", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--beta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=_cmd_train_qg)

    p = sub.add_parser("generate", help="run the recursive generation framework")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sections", required=True)
    p.add_argument("--qa")
    p.add_argument("--splits")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-type", type=int, default=4)
    p.add_argument("--beam-size", type=int, default=5)
    p.add_argument("--types")
    p.add_argument("--max-new-tokens", type=int, default=64)
    p.add_argument("--max-input-tokens", type=int, default=1024)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train-answerability", help="two-step classifier training")
    p.add_argument("--squad", required=True)
    p.add_argument("--sections", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train_answerability)

    p = sub.add_parser("sweep-threshold", help="answerable-ratio curve over tau")
    p.add_argument("--scores")
    p.add_argument("--checkpoint")
    p.add_argument("--sections")
    p.add_argument("--qa")
    p.add_argument("--tau-grid", required=True)
    p.add_argument("--max-answer-length", type=int, default=30)
    p.add_argument("--drop-tolerance", type=float, default=0.02)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep_threshold)

    p = sub.add_parser("classify", help="label generated questions")
    p.add_argument("--generated", required=True)
    p.add_argument("--sections", required=True)
    p.add_argument("--qa")
    p.add_argument("--checkpoint")
    p.add_argument("--stub", action="store_true")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--max-answer-length", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("evaluate", help="compute the metric report")
    p.add_argument("--classified", nargs="+", required=True)
    p.add_argument("--sections", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--self-bleu-scope", default="per_section",
                   choices=["per_section", "per_section_per_type"])
    p.add_argument("--scorer", action="append",
                   help="name=command for an external scorer; empty command skips")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="render a metric report as a table")
    p.add_argument("report")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    args._started_at = _now()
    try:
        return args.func(args)
    except _EXPECTED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command line pipeline.

Each subcommand covers one stage and exchanges data with the others only
through files: checkpoints under ``checkpoint_dir`` and JSON/JSONL dumps
under ``dump_dir``.  ``e2e`` chains every stage in order.  All artifacts are
deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import base64
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint, evaluation, head as head_mod, indicators as ind_mod, tgnn
from .config import ConfigError, RunConfig, load_config
from .embeddings import BasePretrainConfig, init_random, pretrain_base
from .llm import GenerationParams, LlmClient, MockLlmClient, RemoteLlmClient
from .prompts import render_instruction
from .retrieval import retrieve_question, subgraph_from_record, subgraph_record
from .store import (
    AnswerType,
    Question,
    StoreError,
    TkgStore,
    load_questions,
    load_tkg,
)

log = logging.getLogger("tempkgqa")

PREDICT_DEPTH = 10

# artifact names, relative to dump_dir / checkpoint_dir
KG_SUMMARY = "kg.json"
BASE_TABLE_CKPT = "base_table.ckpt"
TGNN_TABLE_CKPT = "tgnn_table.ckpt"
TGNN_CKPT = "tgnn.ckpt"
HEAD_CKPT = "head.ckpt"
SPLITS = ("train", "test")


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------

def _dump_path(cfg: RunConfig, name: str) -> Path:
    path = Path(cfg.dump_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path / name

def _ckpt_path(cfg: RunConfig, name: str) -> Path:
    path = Path(cfg.checkpoint_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path / name


def _write_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    log.info("wrote %s", path)


def _write_jsonl(path: Path, records) -> None:
    lines = [json.dumps(r, ensure_ascii=False) for r in records]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    log.info("wrote %s (%d records)", path, len(lines))


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        raise CliError(f"missing artifact {path}; run the earlier stages first")
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


def _encode_vector(vector: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(vector, dtype="<f4").tobytes()).decode("ascii")


def _decode_vector(text: str, width: int) -> np.ndarray:
    vector = np.frombuffer(base64.b64decode(text), dtype="<f4")
    if vector.shape != (width,):
        raise CliError(f"encoded vector has width {vector.shape}, expected {width}")
    return vector.astype(np.float64)


def _load_world(cfg: RunConfig) -> tuple[TkgStore, list[Question], list[Question]]:
    store = load_tkg(cfg.tkg_path)
    train = load_questions(cfg.questions_train, store)
    test = load_questions(cfg.questions_test, store)
    return store, train, test


@dataclasses.dataclass
class _FixedModel:
    """Client wrapper pinning the model name from the run config."""

    inner: LlmClient
    model: str

    def send(self, messages, params: GenerationParams) -> str:
        return self.inner.send(messages, dataclasses.replace(params, model=self.model))


def _client(cfg: RunConfig) -> LlmClient | None:
    if cfg.oracle:
        return None
    if cfg.endpoint:
        return _FixedModel(RemoteLlmClient(cfg.endpoint), cfg.model)
    # Offline default: a scriptless mock whose empty replies push every
    # question onto the deterministic fallback path.
    return _FixedModel(MockLlmClient(default=""), cfg.model)


def answer_space(store: TkgStore) -> tuple[str, ...]:
    """Entity labels first, then time labels; ids index this tuple."""
    return tuple(store.entities.labels) + tuple(store.times.labels)


def gold_answer_ids(store: TkgStore, question: Question) -> list[int]:
    if question.atype is AnswerType.TIME:
        return sorted(len(store.entities) + g for g in question.gold)
    return sorted(question.gold)


def gold_answer_labels(store: TkgStore, question: Question) -> set[str]:
    if question.atype is AnswerType.TIME:
        return {store.times.label(g) for g in question.gold}
    return {store.entities.label(g) for g in question.gold}


def _answer_text(store: TkgStore, question: Question) -> str:
    return "\t".join(sorted(gold_answer_labels(store, question)))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_build_kg(cfg: RunConfig) -> None:
    store, train, test = _load_world(cfg)
    def histogram(questions: Sequence[Question]) -> dict[str, int]:
        counts: dict[str, int] = {}
        for q in questions:
            counts[q.qtype.value] = counts.get(q.qtype.value, 0) + 1
        return dict(sorted(counts.items()))
    _write_json(_dump_path(cfg, KG_SUMMARY), {
        "entities": len(store.entities),
        "relations": len(store.relations),
        "times": len(store.times),
        "facts": len(store.facts),
        "questions_train": len(train),
        "questions_test": len(test),
        "train_types": histogram(train),
        "test_types": histogram(test),
    })


def stage_pretrain_base(cfg: RunConfig) -> None:
    store, _, _ = _load_world(cfg)
    table = init_random(
        len(store.entities), len(store.relations), len(store.times), cfg.d, cfg.seed
    )
    trained, losses = pretrain_base(
        store,
        table,
        BasePretrainConfig(
            learning_rate=cfg.stage_lr("base"),
            epochs=cfg.stage_epochs("base"),
            batch_size=cfg.batch_size,
            seed=cfg.seed,
        ),
    )
    checkpoint.save_table(_ckpt_path(cfg, BASE_TABLE_CKPT), trained)
    _write_json(_dump_path(cfg, "base_losses.json"), {"losses": losses})
    log.info("base pre-training epochs: %s", [round(x, 4) for x in losses])


def stage_pretrain_tgnn(cfg: RunConfig) -> None:
    store, _, _ = _load_world(cfg)
    table = checkpoint.load_table(_ckpt_path(cfg, BASE_TABLE_CKPT))
    params = tgnn.init_params(cfg.d, len(store.entities), cfg.seed, cfg.layers)
    table, params, losses = tgnn.pretrain(
        store,
        table,
        params,
        tgnn.TgnnPretrainConfig(
            learning_rate=cfg.stage_lr("tgnn"),
            epochs=cfg.stage_epochs("tgnn"),
            batch_size=cfg.batch_size,
            seed=cfg.seed,
            cap_edges=cfg.cap_edges,
            time_mode=cfg.time_mode,
            max_steps=cfg.tgnn_max_steps,
        ),
    )
    checkpoint.save_table(_ckpt_path(cfg, TGNN_TABLE_CKPT), table)
    checkpoint.save_tgnn(_ckpt_path(cfg, TGNN_CKPT), params)
    _write_json(_dump_path(cfg, "tgnn_losses.json"), {"losses": losses})
    log.info("graph encoder pre-training epochs: %s", [round(x, 4) for x in losses])


def stage_retrieve(cfg: RunConfig) -> None:
    store, train, test = _load_world(cfg)
    client = _client(cfg)

    def worker(question: Question) -> dict:
        subgraph = retrieve_question(
            store, question, client,
            top_k=cfg.top_k, max_facts=cfg.max_facts, oracle=cfg.oracle,
        )
        return subgraph_record(store, subgraph)

    for split, questions in zip(SPLITS, (train, test)):
        if cfg.jobs > 1 and client is not None:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                records = list(pool.map(worker, questions))
        else:
            records = [worker(q) for q in questions]
        empties = sum(1 for r in records if r["empty"])
        if empties:
            log.warning("%s split: %d empty subgraphs", split, empties)
        _write_jsonl(_dump_path(cfg, f"subgraphs_{split}.jsonl"), records)


def _subgraphs(cfg: RunConfig, store: TkgStore, split: str) -> dict[str, object]:
    records = _read_jsonl(_dump_path(cfg, f"subgraphs_{split}.jsonl"))
    return {r["uid"]: subgraph_from_record(store, r) for r in records}


def stage_build_prompts(cfg: RunConfig) -> None:
    store, train, test = _load_world(cfg)
    for split, questions in zip(SPLITS, (train, test)):
        subgraphs = _subgraphs(cfg, store, split)
        records = []
        for question in questions:
            subgraph = subgraphs[question.uid]
            answer = _answer_text(store, question) if split == "train" else None
            bundle = render_instruction(store, question.text, subgraph.facts, answer)
            records.append({
                "uid": question.uid,
                "template_id": bundle.template_id,
                "messages": [dict(m) for m in bundle.messages],
            })
        _write_jsonl(_dump_path(cfg, f"prompts_{split}.jsonl"), records)


def stage_build_indicators(cfg: RunConfig) -> None:
    store, _, _ = _load_world(cfg)
    table = checkpoint.load_table(_ckpt_path(cfg, TGNN_TABLE_CKPT))
    params = checkpoint.load_tgnn(_ckpt_path(cfg, TGNN_CKPT))
    projection = ind_mod.init_projection(cfg.d, cfg.d_llm, cfg.seed)
    for split in SPLITS:
        records = []
        for record in _read_jsonl(_dump_path(cfg, f"subgraphs_{split}.jsonl")):
            subgraph = subgraph_from_record(store, record)
            if subgraph.empty:
                continue
            encoded = tgnn.encode_entities(subgraph.facts, table, params, cfg.time_mode)
            built = ind_mod.build_indicators(
                subgraph, encoded, table, projection, cfg.pooling
            )
            records.append({
                "uid": subgraph.uid,
                "d": cfg.d,
                "d_llm": cfg.d_llm,
                "sub": _encode_vector(built.sub_vec),
                "rel": _encode_vector(built.rel_vec),
                "obj": _encode_vector(built.obj_vec),
                "sub_proj": _encode_vector(built.sub_proj),
                "rel_proj": _encode_vector(built.rel_proj),
                "obj_proj": _encode_vector(built.obj_proj),
                "t_min": store.times.label(built.t_min),
                "t_max": store.times.label(built.t_max),
            })
        _write_jsonl(_dump_path(cfg, f"indicators_{split}.jsonl"), records)


def _indicator_sets(
    cfg: RunConfig, store: TkgStore, split: str, projection: ind_mod.Projection
) -> dict[str, ind_mod.IndicatorSet]:
    """Rebuild indicator sets from a dump, re-projecting with ``projection``."""
    sets = {}
    for record in _read_jsonl(_dump_path(cfg, f"indicators_{split}.jsonl")):
        if record["d"] != cfg.d or record["d_llm"] != cfg.d_llm:
            raise CliError(
                f"indicator widths {record['d']}/{record['d_llm']} do not match config"
            )
        raw = ind_mod.IndicatorSet(
            sub_vec=_decode_vector(record["sub"], cfg.d),
            rel_vec=_decode_vector(record["rel"], cfg.d),
            obj_vec=_decode_vector(record["obj"], cfg.d),
            sub_proj=np.zeros(cfg.d_llm),
            rel_proj=np.zeros(cfg.d_llm),
            obj_proj=np.zeros(cfg.d_llm),
            t_min=store.times.id(record["t_min"]),
            t_max=store.times.id(record["t_max"]),
        )
        sets[record["uid"]] = ind_mod.project(raw, projection)
    return sets


def stage_train_head(cfg: RunConfig) -> None:
    store, train, _ = _load_world(cfg)
    projection = ind_mod.init_projection(cfg.d, cfg.d_llm, cfg.seed)
    indicator_sets = _indicator_sets(cfg, store, "train", projection)
    subgraphs = _subgraphs(cfg, store, "train")

    params = head_mod.init_head(
        (q.text for q in train), answer_space(store), cfg.d_llm, cfg.seed
    )
    dataset: list[head_mod.TrainExample] = []
    skipped = 0
    for question in train:
        built = indicator_sets.get(question.uid)
        if built is None:
            skipped += 1
            continue
        bundle = render_instruction(
            store, question.text, subgraphs[question.uid].facts,
            _answer_text(store, question),
        )
        dataset.append((head_mod.assemble(built, bundle), gold_answer_ids(store, question)))
    if skipped:
        log.warning("skipping %d training questions without evidence", skipped)

    params, projection, losses = head_mod.train(
        dataset,
        params,
        projection,
        head_mod.HeadTrainConfig(
            learning_rate=cfg.stage_lr("head"),
            epochs=cfg.stage_epochs("head"),
            batch_size=cfg.batch_size,
            seed=cfg.seed,
        ),
    )
    checkpoint.save_head(_ckpt_path(cfg, HEAD_CKPT), params, projection)
    _write_json(_dump_path(cfg, "head_losses.json"), {"losses": losses})
    log.info("answer head epochs: %s", [round(x, 4) for x in losses])


def stage_predict(cfg: RunConfig) -> None:
    store, _, test = _load_world(cfg)
    params, projection = checkpoint.load_head(_ckpt_path(cfg, HEAD_CKPT))
    indicator_sets = _indicator_sets(cfg, store, "test", projection)
    subgraphs = _subgraphs(cfg, store, "test")
    records = []
    for question in test:
        built = indicator_sets.get(question.uid)
        if built is None:
            records.append({"uid": question.uid, "answers": []})
            continue
        bundle = render_instruction(store, question.text, subgraphs[question.uid].facts)
        example = head_mod.assemble(built, bundle)
        ranked = head_mod.predict_topk(example, params, PREDICT_DEPTH)
        records.append({
            "uid": question.uid,
            "answers": evaluation.parse_generated("\t".join(ranked)),
        })
    _write_jsonl(_dump_path(cfg, "predictions.jsonl"), records)


def stage_evaluate(cfg: RunConfig) -> None:
    store, _, test = _load_world(cfg)
    predictions = {r["uid"]: r["answers"] for r in _read_jsonl(_dump_path(cfg, "predictions.jsonl"))}
    records = []
    for question in test:
        rank = evaluation.rank_of(
            predictions.get(question.uid, []), gold_answer_labels(store, question)
        )
        records.append(
            evaluation.RankRecord(question.uid, question.qtype.value, question.atype.value, rank)
        )
    report = evaluation.build_report(records)
    _write_json(_dump_path(cfg, "report.json"), {
        "ks": list(report.ks),
        "overall": {str(k): v for k, v in report.overall.items()},
        "by_question_type": {
            name: {str(k): v for k, v in cell.items()}
            for name, cell in report.by_question_type.items()
        },
        "by_group": {
            name: {str(k): v for k, v in cell.items()}
            for name, cell in report.by_group.items()
        },
        "by_answer_type": {
            name: {str(k): v for k, v in cell.items()}
            for name, cell in report.by_answer_type.items()
        },
        "counts": report.counts,
        "records": [evaluation.record_payload(r) for r in report.records],
    })
    print(evaluation.render_report(report))


STAGES = {
    "build-kg": stage_build_kg,
    "pretrain-base": stage_pretrain_base,
    "pretrain-tgnn": stage_pretrain_tgnn,
    "retrieve": stage_retrieve,
    "build-prompts": stage_build_prompts,
    "build-indicators": stage_build_indicators,
    "train-head": stage_train_head,
    "predict": stage_predict,
    "evaluate": stage_evaluate,
}


def stage_e2e(cfg: RunConfig) -> None:
    for name, stage in STAGES.items():
        log.info("stage %s", name)
        stage(cfg)


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempkgqa",
        description="Temporal knowledge graph question answering pipeline.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, help="parallel LLM requests during retrieval")
    common.add_argument("--endpoint", help="chat completion endpoint URL")
    common.add_argument("--model", help="model name sent to the endpoint")
    common.add_argument("--oracle", action="store_true",
                        help="replace both LLM stages with deterministic oracles")
    common.add_argument("--dump-dir", help="artifact directory (checkpoints go under it)")
    common.add_argument("-v", "--verbose", action="store_true")

    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["e2e"]:
        subparsers.add_parser(name, parents=[common])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides: dict[str, object] = {}
    for name in ("seed", "jobs", "endpoint", "model"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.oracle:
        overrides["oracle"] = True
    if args.dump_dir is not None:
        overrides["dump_dir"] = args.dump_dir
        overrides["checkpoint_dir"] = str(Path(args.dump_dir) / "checkpoints")
    cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    log.info("resolved config: %s", json.dumps(cfg.resolved(), ensure_ascii=False))
    stage = stage_e2e if args.command == "e2e" else STAGES[args.command]
    try:
        stage(cfg)
    except (StoreError, CliError, OSError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

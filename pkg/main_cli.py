from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from core.analysis import parse_grid, render_ablation_table, run_ablation
from core.checkpoint import load_checkpoint, save_checkpoint
from core.config import TrainConfig, apply_settings, load_config_file, parse_overrides, train_config_to_dict
from core.corpus import (
    balance_none,
    build_dataset,
    check_none_instances,
    dataset_stats,
    load_kb,
    load_wikihop_records,
    read_instances,
    split_records,
    split_train_val,
    write_instances,
    write_kb,
    write_records,
)
from core.encoder import Vocab, load_pretrained_embeddings
from core.errors import ContractError, HopRelError, InputError
from core.evaluation import BOOTSTRAP_SAMPLES, N_RUNS, bootstrap_significance, median_of_runs
from core.gradcheck import render_gradcheck_text, run_gradcheck
from core.graphs import build_chain_graphs, chain_graphs_to_dot
from core.model import MODEL_KINDS
from core.proof_pack import export_run_pack
from core.report import build_eval_report, build_run_manifest, build_stats_report, render_eval_report_text, render_stats_text
from core.synthetic import SyntheticConfig, generate_synthetic
from core.training import LOG_FORMAT, evaluate_checkpoint, relation_vocabulary, run_seeds


logger = logging.getLogger("hoprel")

SPLIT_FILES = {"train": "train.jsonl", "val": "val.jsonl", "test": "test.jsonl"}
RELATIONS_FILE = "relations.txt"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hoprel", description="Извлечение отношений по цепочкам из двух документов")
    parser.add_argument("-q", "--quiet", action="store_true", help="только предупреждения и ошибки")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="построить экземпляры дистанционной разметкой")
    p.add_argument("--in", dest="inp", required=True, help="записи WikiHop (JSONL)")
    p.add_argument("--test-in", help="отдельные записи для тестовой выборки")
    p.add_argument("--kb", required=True, help="тройки базы знаний (TSV)")
    p.add_argument("--out", required=True, help="каталог набора данных")
    p.add_argument("--balance", action="store_true", help="уравнять число None и положительных в train/val")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dump-graphs", help="каталог для DOT-графов экземпляров")

    p = sub.add_parser("train", help="обучить модель")
    _add_training_args(p)
    p.add_argument("--pretrained", help="текстовый файл предобученных эмбеддингов")

    p = sub.add_parser("eval", help="оценить контрольную точку")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True, help="экземпляры (JSONL)")
    p.add_argument("--compare", help="вторая контрольная точка для бутстрэп-сравнения")
    p.add_argument("--samples", type=int, default=BOOTSTRAP_SAMPLES)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="путь JSON-отчёта")

    p = sub.add_parser("ablate", help="сетка абляций (слои и типы рёбер)")
    _add_training_args(p)
    p.add_argument("--grid", default="edges=each", help="например layers=1x1,2x1;edges=each")

    p = sub.add_parser("gradcheck", help="проверка градиентов конечными разностями")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-coords", type=int, default=25, help="координат на параметр модели (0 = все)")
    p.add_argument("--models", default=",".join(MODEL_KINDS))

    p = sub.add_parser("synth", help="синтетический корпус")
    p.add_argument("--out", required=True)
    p.add_argument("--relations", type=int, default=5)
    p.add_argument("--records", type=int, default=200)
    p.add_argument("--vocab", type=int, default=40)
    p.add_argument("--seed", type=int, default=1)
    return parser


def _add_training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="каталог, созданный build-dataset")
    p.add_argument("--model", choices=MODEL_KINDS, default=None)
    p.add_argument("--config", help="файл конфигурации ключ = значение")
    p.add_argument("--set", dest="overrides", action="append", default=[], help="ключ=значение")
    p.add_argument("--seed", type=int, help="один запуск с этим seed")
    p.add_argument("--seeds", help="несколько запусков: 1..5 или 1,2,3")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)


def parse_seeds(raw: Optional[str], single: Optional[int], default: int) -> List[int]:
    if raw:
        try:
            if ".." in raw:
                lo, hi = (int(v) for v in raw.split("..", 1))
                seeds = list(range(lo, hi + 1))
            else:
                seeds = [int(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise InputError(f"Некорректный список seed: {raw!r}") from None
        if not seeds:
            raise InputError(f"Пустой список seed: {raw!r}")
        return seeds
    return [single if single is not None else default]


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    config = TrainConfig()
    if args.config:
        config = apply_settings(config, load_config_file(args.config))
    config = apply_settings(config, parse_overrides(args.overrides))
    changes: Dict[str, str] = {}
    if args.model:
        changes["model"] = args.model
    if args.seed is not None:
        changes["seed"] = str(args.seed)
    return apply_settings(config, changes)


def load_split(data_dir: Path, name: str, required: bool = True) -> list:
    path = data_dir / SPLIT_FILES[name]
    if not path.is_file():
        if required:
            raise InputError(f"Нет файла {path}")
        return []
    return read_instances(path)


def load_relations(data_dir: Path, instances: Sequence) -> tuple:
    path = data_dir / RELATIONS_FILE
    if path.is_file():
        return tuple(line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip())
    return relation_vocabulary(instances)


def _write_json(path: Path, payload: Mapping[str, Any]) -> None:
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- команды ---


def cmd_build_dataset(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = load_wikihop_records(args.inp)
    test_records = load_wikihop_records(args.test_in) if args.test_in else []
    kb = load_kb(args.kb).with_relations(r.relation for r in list(records) + list(test_records))

    rng = np.random.default_rng(args.seed)
    if not test_records:
        records, test_records = split_records(records, rng)
    instances, warnings = build_dataset(records, kb, jobs=args.jobs)
    test, test_warnings = build_dataset(test_records, kb, jobs=args.jobs) if test_records else ([], None)
    if test_warnings:
        warnings.update(test_warnings)
    violations = check_none_instances(list(instances) + list(test), kb)
    if violations:
        raise ContractError(f"{len(violations)} None-экземпляров имеют связь в базе знаний")

    train, val = split_train_val(instances, rng)
    if args.balance:
        train, val = balance_none(train, rng), balance_none(val, rng)

    splits = {"train": train, "val": val, "test": test}
    for name, items in splits.items():
        write_instances(out / SPLIT_FILES[name], items)
    (out / RELATIONS_FILE).write_text("".join(f"{r}\n" for r in kb.relations), encoding="utf-8")

    all_items = train + val + test
    stats = build_stats_report(
        dataset_stats(all_items).to_dict(),
        {name: dataset_stats(items).to_dict() for name, items in splits.items()},
    )
    _write_json(out / "stats.json", stats)
    (out / "stats.txt").write_text(render_stats_text(stats), encoding="utf-8")

    if args.dump_graphs:
        graph_dir = Path(args.dump_graphs)
        graph_dir.mkdir(parents=True, exist_ok=True)
        for idx, inst in enumerate(all_items):
            name = f"instance_{idx:06d}"
            (graph_dir / f"{name}.dot").write_text(chain_graphs_to_dot(build_chain_graphs(inst), name), encoding="utf-8")

    for key, count in sorted(warnings.items()):
        logger.warning("%s: %d", key, count)
    manifest = build_run_manifest(
        command="build-dataset",
        config={"balance": bool(args.balance), "warnings": dict(warnings)},
        seed=args.seed,
        inputs={"records": args.inp, "test_records": args.test_in, "kb": args.kb},
        outputs={name: str(out / f) for name, f in SPLIT_FILES.items()},
        timings={"total": time.perf_counter() - started},
    )
    _write_json(out / "manifest.json", manifest)
    print(render_stats_text(stats), end="")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    data_dir, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set = load_split(data_dir, "train")
    val_set = load_split(data_dir, "val", required=False)
    test_set = load_split(data_dir, "test", required=False)
    relations = load_relations(data_dir, train_set + val_set)
    vocab = Vocab.build(train_set)
    word_table = None
    if args.pretrained:
        word_table = load_pretrained_embeddings(
            args.pretrained, vocab, config.model.d_w, np.random.default_rng(config.seed)
        )
    seeds = parse_seeds(args.seeds, args.seed, config.seed)
    kind = config.model_kind

    results = run_seeds(
        kind, train_set, val_set, config, seeds, vocab, relations, word_table, log_dir=out, jobs=args.jobs
    )
    eval_set = test_set or val_set or train_set
    eval_name = "test" if test_set else ("val" if val_set else "train")
    reports = []
    for seed, result in zip(seeds, results):
        run_dir = out / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = run_dir / "checkpoint.zip"
        save_checkpoint(ckpt_path, result.checkpoint)
        report, _ = evaluate_checkpoint(result.checkpoint, eval_set)
        reports.append(report)
        payload = build_eval_report(
            model_kind=kind,
            checkpoint_path=str(ckpt_path),
            data_path=str(data_dir / SPLIT_FILES[eval_name]),
            report=report.to_dict(),
            threshold_rule=result.checkpoint.train_config.threshold_rule,
            relations=relations,
        )
        manifest = build_run_manifest(
            command="train",
            config=train_config_to_dict(result.checkpoint.train_config),
            seed=seed,
            inputs={"train": str(data_dir / SPLIT_FILES["train"]), "pretrained": args.pretrained, "config": args.config},
            outputs={"checkpoint": str(ckpt_path), "log": str(run_dir / "train.log")},
            timings={"train": result.seconds},
        )
        export_run_pack(run_dir / "run_pack.zip", payload, manifest, result.history)
        _write_json(run_dir / "report.json", payload)
        logger.info("seed %d: %s F1=%.4f (τ=%.2f)", seed, eval_name, report.f1, report.threshold)

    if len(reports) == N_RUNS:
        aggregate = median_of_runs(reports)
        median_seed = seeds[aggregate.median_index]
        _write_json(
            out / "aggregate.json",
            {
                "model_kind": kind,
                "eval_split": eval_name,
                "seeds": seeds,
                "runs": [r.to_dict() for r in aggregate.runs],
                "median_seed": median_seed,
                "median": aggregate.median.to_dict(),
            },
        )
        print(f"Медиана {N_RUNS} запусков ({eval_name}): F1={aggregate.median.f1:.4f}, seed {median_seed}")
    else:
        for seed, report in zip(seeds, reports):
            print(f"seed {seed} ({eval_name}): P={report.precision:.4f} R={report.recall:.4f} F1={report.f1:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    instances = read_instances(args.test)
    report, predictions = evaluate_checkpoint(checkpoint, instances)
    comparison = None
    if args.compare:
        other = load_checkpoint(args.compare)
        other_report, other_predictions = evaluate_checkpoint(other, instances)
        p_value = bootstrap_significance(
            predictions, other_predictions, [i.label for i in instances], n=args.samples, seed=args.seed
        )
        comparison = {
            "other_checkpoint": args.compare,
            "other_f1": round(other_report.f1, 6),
            "samples": int(args.samples),
            "seed": int(args.seed),
            "p_value": p_value,
        }
    payload = build_eval_report(
        model_kind=checkpoint.kind,
        checkpoint_path=args.checkpoint,
        data_path=args.test,
        report=report.to_dict(),
        threshold_rule=checkpoint.train_config.threshold_rule,
        relations=checkpoint.relations,
        comparison=comparison,
    )
    if args.out:
        _write_json(Path(args.out), payload)
    print(render_eval_report_text(payload), end="")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    data_dir, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set = load_split(data_dir, "train")
    val_set = load_split(data_dir, "val", required=False)
    test_set = load_split(data_dir, "test", required=False)
    settings = parse_grid(args.grid, config)
    seeds = parse_seeds(args.seeds, args.seed, 0) if (args.seeds or args.seed is not None) else list(range(1, N_RUNS + 1))
    rows = run_ablation(config.model_kind, train_set, val_set, test_set, config, settings, seeds, jobs=args.jobs)
    table = render_ablation_table(rows)
    _write_json(out / "ablation.json", {"model_kind": config.model_kind, "grid": args.grid, "seeds": seeds, "rows": rows})
    (out / "ablation.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    unknown = [m for m in models if m not in MODEL_KINDS]
    if unknown:
        raise InputError(f"Неизвестная модель: {unknown[0]!r}")
    report = run_gradcheck(seed=args.seed, models=models, max_coords=args.max_coords or None)
    print(render_gradcheck_text(report), end="")
    return 0 if report.passed else 1


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, kb = generate_synthetic(
        SyntheticConfig(n_relations=args.relations, n_records=args.records, vocab=args.vocab, seed=args.seed)
    )
    write_records(out / "records.jsonl", records)
    write_kb(out / "kb.tsv", kb)
    print(f"Записей: {len(records)}, троек: {len(kb.triples)}, отношений: {len(kb.relations)} -> {out}")
    return 0


COMMANDS = {
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else logging.INFO
    console = logging.StreamHandler()
    console.setLevel(level)
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.basicConfig(level=level, handlers=[console])
    try:
        return COMMANDS[args.command](args)
    except (HopRelError, OSError) as exc:
        print(f"ошибка: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

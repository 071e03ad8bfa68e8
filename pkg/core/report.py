from __future__ import annotations

from datetime import datetime, timezone
from hashlib import sha1
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence
import uuid


APP_NAME = "HopRel"
APP_VERSION = "0.1.0"
EVAL_SCHEMA_NAME = "hoprel_eval_report"
STATS_SCHEMA_NAME = "hoprel_dataset_stats"
MANIFEST_SCHEMA_NAME = "hoprel_run_manifest"
SCHEMA_VERSION = "1.0.0"


def build_eval_report(
    *,
    model_kind: str,
    checkpoint_path: Optional[str],
    data_path: Optional[str],
    report: Mapping[str, Any],
    threshold_rule: str,
    relations: Sequence[str],
    comparison: Optional[Mapping[str, Any]] = None,
) -> Dict[str, Any]:
    """Отчёт об оценке; без времени и случайных идентификаторов, чтобы повтор давал те же байты."""
    counts = report.get("counts", {})
    return {
        "schema": {"name": EVAL_SCHEMA_NAME, "version": SCHEMA_VERSION},
        "meta": {"app_name": APP_NAME, "app_version": APP_VERSION},
        "input": {
            "model_kind": model_kind,
            "checkpoint_path": checkpoint_path,
            "data_path": data_path,
            "n_relations": len(relations),
        },
        "metrics": {
            "precision": _round_or_none(report.get("precision"), 6),
            "recall": _round_or_none(report.get("recall"), 6),
            "f1": _round_or_none(report.get("f1"), 6),
            "threshold": _round_or_none(report.get("threshold"), 2),
            "threshold_rule": threshold_rule,
            "n_instances": int(report.get("n_instances", 0)),
            "gold_positive": int(counts.get("gold_positive", 0)),
            "predicted_positive": int(counts.get("predicted_positive", 0)),
            "correct": int(counts.get("correct", 0)),
        },
        "per_relation": dict(report.get("per_relation", {})),
        "comparison": dict(comparison) if comparison else None,
        "artifacts": {"run_pack_path": None},
    }


def render_eval_report_text(report: Mapping[str, Any]) -> str:
    schema = report.get("schema", {})
    input_block = report.get("input", {})
    metrics = report.get("metrics", {})
    comparison = report.get("comparison") or {}
    per_relation = report.get("per_relation", {})

    lines = [
        "HopRel — отчёт об оценке",
        f"Схема отчёта: {schema.get('name', '-')}/{schema.get('version', '-')}",
        "",
        "Входные данные:",
        f"- Модель: {input_block.get('model_kind', '-')}",
        f"- Контрольная точка: {input_block.get('checkpoint_path', '-')}",
        f"- Набор данных: {input_block.get('data_path', '-')}",
        f"- Отношений (без None): {input_block.get('n_relations', '-')}",
        "",
        "Метрики (None не учитывается):",
        f"- Precision: {metrics.get('precision', '-')}",
        f"- Recall: {metrics.get('recall', '-')}",
        f"- F1: {metrics.get('f1', '-')}",
        f"- Порог τ: {metrics.get('threshold', '-')} ({metrics.get('threshold_rule', '-')})",
        f"- Экземпляров: {metrics.get('n_instances', '-')}",
        f"- Эталонных положительных: {metrics.get('gold_positive', '-')}",
        f"- Предсказанных положительных: {metrics.get('predicted_positive', '-')}",
        f"- Верных: {metrics.get('correct', '-')}",
    ]
    if comparison:
        lines.extend(
            [
                "",
                "Сравнение (парный бутстрэп):",
                f"- Вторая модель: {comparison.get('other_checkpoint', '-')}",
                f"- F1 второй модели: {comparison.get('other_f1', '-')}",
                f"- Выборок: {comparison.get('samples', '-')}",
                f"- p-value: {comparison.get('p_value', '-')}",
            ]
        )
    if per_relation:
        lines.extend(["", "По отношениям (эталон / предсказано / верно):"])
        for name in sorted(per_relation):
            row = per_relation[name]
            lines.append(f"- {name}: {row.get('gold', 0)} / {row.get('predicted', 0)} / {row.get('correct', 0)}")
    lines.append("")
    return "\n".join(lines)


def build_stats_report(stats: Mapping[str, Any], splits: Mapping[str, Mapping[str, Any]]) -> Dict[str, Any]:
    return {
        "schema": {"name": STATS_SCHEMA_NAME, "version": SCHEMA_VERSION},
        "meta": {"app_name": APP_NAME, "app_version": APP_VERSION},
        "total": dict(stats),
        "splits": {name: dict(values) for name, values in splits.items()},
    }


def render_stats_text(report: Mapping[str, Any]) -> str:
    lines = ["HopRel — статистика набора данных", ""]
    blocks = [("всего", report.get("total", {}))] + sorted(report.get("splits", {}).items())
    for name, block in blocks:
        histogram = block.get("common_entities_histogram", {})
        lines.extend(
            [
                f"[{name}]",
                f"- Положительных отношений: {block.get('positive_relations', '-')}",
                f"- Цепочек документов: {block.get('document_chains', '-')}",
                f"- Положительных экземпляров: {block.get('positive_instances', '-')}",
                f"- None-экземпляров: {block.get('none_instances', '-')}",
                f"- Пар сущностей (положительных): {block.get('positive_entity_pairs', '-')}",
                "- Общих сущностей в цепочке: " + ", ".join(f"{k}: {v}" for k, v in histogram.items()),
                "",
            ]
        )
    return "\n".join(lines)


def git_blob_hash(path: str | Path) -> str:
    """Хеш содержимого как у git: sha1("blob <len>\\0" + содержимое)."""
    data = Path(path).read_bytes()
    return sha1(b"blob %d\0" % len(data) + data).hexdigest()


def build_run_manifest(
    *,
    command: str,
    config: Mapping[str, Any],
    seed: Optional[int],
    inputs: Mapping[str, Optional[str]],
    outputs: Mapping[str, Optional[str]],
    timings: Mapping[str, float],
) -> Dict[str, Any]:
    input_block = {}
    for name, path in sorted(inputs.items()):
        if path is None:
            continue
        p = Path(path)
        input_block[name] = {"path": str(p), "git_blob_sha1": git_blob_hash(p) if p.is_file() else None}
    return {
        "schema": {"name": MANIFEST_SCHEMA_NAME, "version": SCHEMA_VERSION},
        "meta": {
            "run_id": str(uuid.uuid4()),
            "generated_at_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "app_name": APP_NAME,
            "app_version": APP_VERSION,
        },
        "command": command,
        "seed": seed,
        "config": dict(config),
        "inputs": input_block,
        "outputs": {name: path for name, path in sorted(outputs.items()) if path is not None},
        "timings_sec": {name: _round_or_none(value, 3) for name, value in sorted(timings.items())},
    }


def _round_or_none(value: Any, digits: int) -> Optional[float]:
    if value is None:
        return None
    try:
        return round(float(value), digits)
    except Exception:
        return None

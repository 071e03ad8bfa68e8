from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Sequence, Tuple

from .config import TrainConfig
from .corpus import InstanceChain
from .errors import InputError
from .evaluation import N_RUNS, EvalReport, median_of_runs
from .graphs import EDGE_TYPES, EdgeToggles
from .training import evaluate_checkpoint, run_seeds


logger = logging.getLogger(__name__)

LAYER_GRID = ((1, 1), (2, 1), (2, 2), (3, 1), (3, 2), (3, 3))
EDGE_REMOVALS = ((), ("emg1",), ("emg2",), ("emg3",), ("eg1",), ("eg2",))


@dataclass(frozen=True)
class AblationSetting:
    l1: int
    l2: int
    toggles: EdgeToggles

    @property
    def label(self) -> str:
        return f"L1={self.l1} L2={self.l2} {self.toggles.label()}"


def parse_grid(spec: str, base: TrainConfig) -> List[AblationSetting]:
    """Сетка вида ``layers=1x1,2x1;edges=full,-emg1,-emg1-eg2``; сокращения layers=grid, edges=each.

    Строки строятся как декартово произведение слоёв и наборов рёбер в порядке записи.
    """
    layers: List[Tuple[int, int]] = [(base.model.l1, base.model.l2)]
    edges: List[EdgeToggles] = [base.model.toggles]
    for clause in (c.strip() for c in (spec or "").split(";")):
        if not clause:
            continue
        if "=" not in clause:
            raise InputError(f"Элемент сетки должен иметь вид ключ=значения: {clause!r}")
        key, values = (part.strip() for part in clause.split("=", 1))
        items = [v.strip() for v in values.split(",") if v.strip()]
        if not items:
            raise InputError(f"Пустой список значений для {key}")
        if key == "layers":
            layers = list(LAYER_GRID) if items == ["grid"] else [_parse_layers(v) for v in items]
        elif key == "edges":
            if items == ["each"]:
                edges = [EdgeToggles.without(names) for names in EDGE_REMOVALS]
            else:
                edges = [_parse_edges(v) for v in items]
        else:
            raise InputError(f"Неизвестный ключ сетки: {key!r}; допустимо: layers, edges")
    return [AblationSetting(l1, l2, toggles) for (l1, l2), toggles in itertools.product(layers, edges)]


def _parse_layers(value: str) -> Tuple[int, int]:
    parts = value.lower().split("x")
    try:
        l1, l2 = (int(p) for p in parts)
    except ValueError:
        raise InputError(f"Слои задаются как L1xL2, получено {value!r}") from None
    if l1 < 1 or l2 < 1:
        raise InputError(f"Число слоёв должно быть не меньше 1: {value!r}")
    return l1, l2


def _parse_edges(value: str) -> EdgeToggles:
    if value == "full":
        return EdgeToggles()
    if not value.startswith("-"):
        raise InputError(f"Набор рёбер задаётся как full или -тип[-тип...]: {value!r}")
    names = [part for part in value.split("-") if part]
    unknown = [n for n in names if n not in EDGE_TYPES]
    if unknown:
        raise InputError(f"Неизвестный тип рёбер: {unknown[0]!r}; допустимо: {', '.join(EDGE_TYPES)}")
    return EdgeToggles.without(names)


def aggregate(reports: Sequence[EvalReport]) -> EvalReport:
    if len(reports) == N_RUNS:
        return median_of_runs(reports).median
    logger.warning("Медиана по %d запускам вместо %d", len(reports), N_RUNS)
    return sorted(reports, key=lambda r: (r.f1, r.precision, r.recall, r.threshold))[len(reports) // 2]


def run_ablation(
    kind: str,
    train_set: Sequence[InstanceChain],
    val_set: Sequence[InstanceChain],
    test_set: Sequence[InstanceChain],
    base: TrainConfig,
    settings: Sequence[AblationSetting],
    seeds: Sequence[int] = tuple(range(1, N_RUNS + 1)),
    jobs: int = 1,
) -> List[Dict[str, Any]]:
    eval_set = test_set or val_set
    if not eval_set:
        raise InputError("Нет данных для оценки строк абляции")
    rows: List[Dict[str, Any]] = []
    for setting in settings:
        model = replace(base.model, l1=setting.l1, l2=setting.l2, toggles=setting.toggles)
        results = run_seeds(kind, train_set, val_set, replace(base, model=model), seeds, jobs=jobs)
        reports = [evaluate_checkpoint(r.checkpoint, eval_set)[0] for r in results]
        median = aggregate(reports)
        rows.append(
            {
                "setting": setting.label,
                "l1": setting.l1,
                "l2": setting.l2,
                "disabled_edges": list(setting.toggles.disabled()),
                "precision": median.precision,
                "recall": median.recall,
                "f1": median.f1,
                "threshold": median.threshold,
                "run_f1": [r.f1 for r in reports],
            }
        )
        logger.info("Абляция %s: F1=%.4f", setting.label, median.f1)
    return rows


def render_ablation_table(rows: Sequence[Dict[str, Any]]) -> str:
    header = ("Настройка", "P", "R", "F1", "τ")
    body = [
        (str(row["setting"]), f"{row['precision']:.3f}", f"{row['recall']:.3f}", f"{row['f1']:.3f}", f"{row['threshold']:.2f}")
        for row in rows
    ]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"

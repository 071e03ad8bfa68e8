from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DimensionError, InputError


THRESHOLD_GRID = tuple(round(0.05 * k, 2) for k in range(20))
THRESHOLD_RULES = ("argmax", "max_over_r")
N_RUNS = 5
BOOTSTRAP_SAMPLES = 10000
_BOOTSTRAP_CHUNK = 500

Label = Optional[str]


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    threshold: float
    n_instances: int
    n_gold_positive: int
    n_pred_positive: int
    n_correct: int
    per_relation: Tuple[Tuple[str, Tuple[int, int, int]], ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "threshold": self.threshold,
            "n_instances": self.n_instances,
            "counts": {
                "gold_positive": self.n_gold_positive,
                "predicted_positive": self.n_pred_positive,
                "correct": self.n_correct,
            },
            "per_relation": {
                rel: {"gold": gold, "predicted": pred, "correct": correct}
                for rel, (gold, pred, correct) in self.per_relation
            },
        }


@dataclass(frozen=True)
class RunAggregate:
    runs: Tuple[EvalReport, ...]
    median: EvalReport

    @property
    def median_index(self) -> int:
        return self.runs.index(self.median)


def decide_label(probs: np.ndarray, relations: Sequence[str], tau: float, rule: str = "argmax") -> Label:
    """argmax: метка с максимумом по всем |R|+1, затем понижение до None при p < τ.
    max_over_r: лучшая метка из R без учёта None, понижение до None при p < τ."""
    probs = np.asarray(probs, dtype=np.float64)
    none_index = len(relations)
    if probs.shape != (none_index + 1,):
        raise DimensionError(f"Ожидается {none_index + 1} вероятностей, получено {probs.shape}")
    if rule == "argmax":
        best = int(np.argmax(probs))
        if best == none_index:
            return None
    elif rule == "max_over_r":
        if none_index == 0:
            return None
        best = int(np.argmax(probs[:none_index]))
    else:
        raise InputError(f"Неизвестное правило порога: {rule!r}; допустимо: {', '.join(THRESHOLD_RULES)}")
    return relations[best] if probs[best] >= tau else None


def decide_labels(probabilities: np.ndarray, relations: Sequence[str], tau: float, rule: str = "argmax") -> List[Label]:
    return [decide_label(row, relations, tau, rule) for row in np.asarray(probabilities)]


def evaluate(predictions: Sequence[Label], gold: Sequence[Label], threshold: float = 0.0) -> EvalReport:
    if len(predictions) != len(gold):
        raise InputError(f"Длины предсказаний ({len(predictions)}) и эталона ({len(gold)}) не совпадают")
    per_relation: Dict[str, List[int]] = {}
    n_gold = n_pred = n_correct = 0
    for pred, ref in zip(predictions, gold):
        if ref is not None:
            n_gold += 1
            per_relation.setdefault(ref, [0, 0, 0])[0] += 1
        if pred is not None:
            n_pred += 1
            per_relation.setdefault(pred, [0, 0, 0])[1] += 1
            if pred == ref:
                n_correct += 1
                per_relation[pred][2] += 1
    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
        threshold=float(threshold),
        n_instances=len(gold),
        n_gold_positive=n_gold,
        n_pred_positive=n_pred,
        n_correct=n_correct,
        per_relation=tuple((rel, tuple(counts)) for rel, counts in sorted(per_relation.items())),
    )


def tune_threshold(
    probabilities: np.ndarray,
    gold: Sequence[Label],
    relations: Sequence[str],
    rule: str = "argmax",
    grid: Sequence[float] = THRESHOLD_GRID,
) -> Tuple[float, EvalReport]:
    """Порог с максимальным F1 на сетке; при равенстве берётся наименьший."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if len(gold) == 0:
        raise InputError("Пустая валидационная выборка")
    if probabilities.shape[0] != len(gold):
        raise InputError(f"Число строк вероятностей ({probabilities.shape[0]}) не совпадает с эталоном ({len(gold)})")
    best: Optional[EvalReport] = None
    for tau in sorted(grid):
        report = evaluate(decide_labels(probabilities, relations, tau, rule), gold, tau)
        if best is None or report.f1 > best.f1:
            best = report
    return best.threshold, best


def median_of_runs(reports: Sequence[EvalReport]) -> RunAggregate:
    if len(reports) != N_RUNS:
        raise ContractError(f"Медиана считается ровно по {N_RUNS} запускам, получено {len(reports)}")
    ranked = sorted(reports, key=lambda r: (r.f1, r.precision, r.recall, r.threshold))
    return RunAggregate(runs=tuple(reports), median=ranked[N_RUNS // 2])


def bootstrap_significance(
    preds_a: Sequence[Label],
    preds_b: Sequence[Label],
    gold: Sequence[Label],
    n: int = BOOTSTRAP_SAMPLES,
    seed: int = 0,
) -> float:
    """Парный бутстрэп: доля выборок, где F1 более слабой системы не ниже F1 более сильной."""
    if not (len(preds_a) == len(preds_b) == len(gold)):
        raise InputError("Списки предсказаний и эталон должны быть одной длины")
    if len(gold) == 0:
        raise InputError("Пустой набор для бутстрэпа")
    if n < 1:
        raise InputError(f"Число бутстрэп-выборок должно быть положительным, получено {n}")
    gp = np.array([g is not None for g in gold], dtype=np.int64)
    stats = []
    for preds in (preds_a, preds_b):
        pp = np.array([p is not None for p in preds], dtype=np.int64)
        tp = np.array([p is not None and p == g for p, g in zip(preds, gold)], dtype=np.int64)
        stats.append((tp, pp))
    if _f1(stats[1][0].sum(), stats[1][1].sum(), gp.sum()) > _f1(stats[0][0].sum(), stats[0][1].sum(), gp.sum()):
        stats.reverse()

    rng = np.random.default_rng(seed)
    size = len(gold)
    not_worse = 0
    remaining = int(n)
    while remaining > 0:
        chunk = min(_BOOTSTRAP_CHUNK, remaining)
        idx = rng.integers(0, size, size=(chunk, size))
        g = gp[idx].sum(axis=1)
        f1_hi = _f1(stats[0][0][idx].sum(axis=1), stats[0][1][idx].sum(axis=1), g)
        f1_lo = _f1(stats[1][0][idx].sum(axis=1), stats[1][1][idx].sum(axis=1), g)
        not_worse += int(np.count_nonzero(f1_lo >= f1_hi))
        remaining -= chunk
    return not_worse / float(n)


def _f1(tp, pp, gp):
    tp = np.asarray(tp, dtype=np.float64)
    denom = np.asarray(pp, dtype=np.float64) + np.asarray(gp, dtype=np.float64)
    return np.divide(2.0 * tp, denom, out=np.zeros_like(denom), where=denom > 0)

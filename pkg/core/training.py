from __future__ import annotations

import logging
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .checkpoint import Checkpoint
from .config import TrainConfig
from .corpus import InstanceChain
from .encoder import Vocab
from .errors import ContractError, InputError, NumericsError
from .evaluation import EvalReport, Label, decide_label, evaluate, tune_threshold
from .model import MODEL_KINDS, PreparedInstance, forward_logits, init_params, predict_proba, prepare_instance
from .numerics import Tape, adagrad_step, backward, nll_loss


logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

__all__ = [
    "TrainConfig",
    "TrainResult",
    "train",
    "predict",
    "predict_probabilities",
    "evaluate_checkpoint",
    "tune_checkpoint_threshold",
    "run_seeds",
]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    warnings: Counter = field(default_factory=Counter)
    seconds: float = 0.0

    @property
    def history(self) -> List[Dict[str, float]]:
        return self.checkpoint.history


def relation_vocabulary(instances: Sequence[InstanceChain]) -> Tuple[str, ...]:
    return tuple(sorted({inst.label for inst in instances if inst.label is not None}))


def prepare_all(
    instances: Sequence[InstanceChain],
    vocab: Vocab,
    relations: Sequence[str],
    config: TrainConfig,
    warnings: Optional[Counter] = None,
) -> List[PreparedInstance]:
    return [prepare_instance(inst, vocab, relations, config.model, config.seed, warnings) for inst in instances]


def predict_probabilities(
    kind: str,
    store,
    prepared: Sequence[PreparedInstance],
    config,
    progress: bool = False,
) -> np.ndarray:
    rows = [
        predict_proba(kind, store, p, config)
        for p in tqdm(prepared, desc="Предсказание", disable=not progress or None, leave=False)
    ]
    return np.vstack(rows) if rows else np.zeros((0, 0))


def train(
    kind: str,
    train_set: Sequence[InstanceChain],
    val_set: Sequence[InstanceChain],
    config: TrainConfig,
    vocab: Optional[Vocab] = None,
    relations: Optional[Sequence[str]] = None,
    word_table: Optional[np.ndarray] = None,
    log_path: Optional[str | Path] = None,
    progress: bool = False,
) -> TrainResult:
    """Обучение с выбором лучшей эпохи по валидационному F1, при равном F1 по валидационному NLL.

    Порог подбирается на каждой эпохе. Эпоха без улучшения увеличивает счётчики ранней остановки
    и уменьшения шага.
    """
    if not train_set:
        raise InputError("Пустая обучающая выборка")
    if kind not in MODEL_KINDS:
        raise InputError(f"Неизвестная модель: {kind!r}; допустимо: {', '.join(MODEL_KINDS)}")
    config = replace(config, model_kind=kind)
    started = time.perf_counter()
    warnings: Counter = Counter()
    if not val_set:
        warnings["empty_validation"] += 1
        logger.warning("Валидационная выборка пуста: порог и лучшая эпоха выбираются по обучающей")
        val_set = train_set

    vocab = vocab or Vocab.build(train_set)
    relations = tuple(relations) if relations is not None else relation_vocabulary(list(train_set) + list(val_set))
    rng = np.random.default_rng(config.seed)
    store = init_params(kind, config.model, len(vocab), len(relations) + 1, rng, word_table)
    store.learning_rate = config.learning_rate

    prepared_train = prepare_all(train_set, vocab, relations, config, warnings)
    prepared_val = prepare_all(val_set, vocab, relations, config, warnings)
    unknown = sorted({p.chain.label for p in prepared_train if p.label_id < 0})
    if unknown:
        raise InputError(f"Метки обучающей выборки вне словаря отношений: {', '.join(unknown)}")
    gold_val = [p.chain.label for p in prepared_val]

    handler = _attach_log_file(log_path)
    history: List[Dict[str, float]] = []
    best_store, best_tau, best_f1, best_epoch = store.copy(), 0.0, -1.0, 0
    best_val_loss = float("inf")
    stale = lr_stale = 0
    try:
        logger.info(
            "Обучение %s: %d обучающих, %d валидационных, %d отношений, %d параметров",
            kind, len(prepared_train), len(prepared_val), len(relations), store.n_parameters(),
        )
        for epoch in tqdm(range(1, config.max_epochs + 1), desc=f"Эпохи {kind}", disable=not progress or None):
            loss = _run_epoch(kind, store, prepared_train, config, rng)
            probs = predict_probabilities(kind, store, prepared_val, config.model)
            tau, report = tune_threshold(probs, gold_val, relations, config.threshold_rule)
            val_loss = validation_loss(probs, prepared_val)
            row = {
                "epoch": epoch,
                "loss": loss,
                "val_loss": val_loss,
                "val_precision": report.precision,
                "val_recall": report.recall,
                "val_f1": report.f1,
                "threshold": tau,
                "learning_rate": store.learning_rate,
            }
            history.append(row)
            logger.info(
                "epoch=%d loss=%.6f val_loss=%.6f val_f1=%.4f tau=%.2f lr=%.6g",
                epoch, loss, val_loss, report.f1, tau, store.learning_rate,
            )
            # при равном F1 прогрессом считается снижение валидационного NLL
            if report.f1 > best_f1 or (report.f1 == best_f1 and val_loss < best_val_loss):
                best_store, best_tau, best_f1, best_epoch = store.copy(), tau, report.f1, epoch
                best_val_loss = val_loss
                stale = lr_stale = 0
                continue
            stale += 1
            lr_stale += 1
            if stale >= config.patience:
                logger.info("Ранняя остановка на эпохе %d: нет улучшения F1 и NLL %d эпох", epoch, stale)
                break
            if lr_stale >= config.lr_halving_patience:
                store.learning_rate /= 2.0
                lr_stale = 0
    finally:
        if handler is not None:
            logger.removeHandler(handler)
            handler.close()

    checkpoint = Checkpoint(
        kind=kind,
        train_config=config,
        vocab=vocab,
        relations=relations,
        store=best_store,
        threshold=best_tau,
        best_epoch=best_epoch,
        history=history,
    )
    return TrainResult(checkpoint=checkpoint, warnings=warnings, seconds=time.perf_counter() - started)


def validation_loss(probs: np.ndarray, prepared: Sequence[PreparedInstance]) -> float:
    """Средний NLL по экземплярам с известной меткой; метки вне словаря пропускаются."""
    ids = np.array([p.label_id for p in prepared], dtype=np.int64)
    known = ids >= 0
    if probs.size == 0 or not np.any(known):
        return float("inf")
    picked = probs[np.flatnonzero(known), ids[known]]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def _run_epoch(kind, store, prepared: Sequence[PreparedInstance], config: TrainConfig, rng: np.random.Generator) -> float:
    order = rng.permutation(len(prepared))
    losses: List[float] = []
    for start in range(0, len(order), config.batch_size):
        batch = order[start : start + config.batch_size]
        grads: Dict[str, np.ndarray] = {}
        for idx in batch:
            item = prepared[int(idx)]
            tape = Tape()
            loss = nll_loss(forward_logits(kind, tape, store, item, config.model, training=True, rng=rng), item.label_id)
            for name, g in backward(tape, loss).items():
                grads[name] = g if name not in grads else grads[name] + g
            losses.append(float(loss.value))
        for name in grads:
            grads[name] = grads[name] / len(batch)
            if not np.all(np.isfinite(grads[name])):
                raise NumericsError(f"Нечисловой градиент параметра {name}")
        adagrad_step(store, grads)
        if not store.all_finite():
            raise NumericsError("Нечисловые значения параметров после шага Adagrad")
    return float(np.mean(losses))


def _attach_log_file(log_path: Optional[str | Path]) -> Optional[logging.Handler]:
    if log_path is None:
        return None
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(log_path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.setLevel(logging.INFO)
    logger.addHandler(handler)
    if logger.getEffectiveLevel() > logging.INFO:
        logger.setLevel(logging.INFO)
    return handler


def _prepare_for(checkpoint: Checkpoint, instances: Sequence[InstanceChain]) -> List[PreparedInstance]:
    return prepare_all(instances, checkpoint.vocab, checkpoint.relations, checkpoint.train_config)


def predict(checkpoint: Checkpoint, instance: InstanceChain, tau: Optional[float] = None) -> Label:
    tau = checkpoint.threshold if tau is None else float(tau)
    if not 0.0 <= tau <= 1.0:
        raise InputError(f"Порог должен быть в [0, 1], получено {tau}")
    prepared = _prepare_for(checkpoint, [instance])[0]
    probs = predict_proba(checkpoint.kind, checkpoint.store, prepared, checkpoint.model_config)
    return decide_label(probs, checkpoint.relations, tau, checkpoint.train_config.threshold_rule)


def tune_checkpoint_threshold(checkpoint: Checkpoint, val_set: Sequence[InstanceChain]) -> float:
    if not val_set:
        raise InputError("Пустая валидационная выборка")
    probs = predict_probabilities(checkpoint.kind, checkpoint.store, _prepare_for(checkpoint, val_set), checkpoint.model_config)
    tau, _ = tune_threshold(probs, [i.label for i in val_set], checkpoint.relations, checkpoint.train_config.threshold_rule)
    return tau


def evaluate_checkpoint(
    checkpoint: Checkpoint,
    instances: Sequence[InstanceChain],
    tau: Optional[float] = None,
    progress: bool = False,
) -> Tuple[EvalReport, List[Label]]:
    if not instances:
        raise InputError("Пустая тестовая выборка")
    tau = checkpoint.threshold if tau is None else float(tau)
    probs = predict_probabilities(
        checkpoint.kind, checkpoint.store, _prepare_for(checkpoint, instances), checkpoint.model_config, progress
    )
    rule = checkpoint.train_config.threshold_rule
    predictions = [decide_label(row, checkpoint.relations, tau, rule) for row in probs]
    return evaluate(predictions, [i.label for i in instances], tau), predictions


def _train_job(args) -> TrainResult:
    kind, train_set, val_set, config, vocab, relations, word_table, log_path = args
    return train(kind, train_set, val_set, config, vocab, relations, word_table, log_path)


def run_seeds(
    kind: str,
    train_set: Sequence[InstanceChain],
    val_set: Sequence[InstanceChain],
    config: TrainConfig,
    seeds: Sequence[int],
    vocab: Optional[Vocab] = None,
    relations: Optional[Sequence[str]] = None,
    word_table: Optional[np.ndarray] = None,
    log_dir: Optional[str | Path] = None,
    jobs: int = 1,
) -> List[TrainResult]:
    """Независимые запуски с разными seed; результаты в порядке seeds."""
    if not seeds:
        raise ContractError("Не задано ни одного seed")
    vocab = vocab or Vocab.build(train_set)
    if relations is None:
        relations = relation_vocabulary(list(train_set) + list(val_set))
    tasks = []
    for seed in seeds:
        log_path = None if log_dir is None else Path(log_dir) / f"seed{seed}" / "train.log"
        tasks.append((kind, list(train_set), list(val_set), replace(config, seed=int(seed)), vocab, tuple(relations), word_table, log_path))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_train_job, tasks))
    return [_train_job(task) for task in tasks]

"""Конфигурация запусков.

Файл конфигурации: по строке ``ключ = значение``, ``#`` начинает комментарий,
пустые строки пропускаются. Ключи модели: d_w, d_z, l1, l2, dropout,
indicator_size, max_doc_len, cnn_filters, kernel_widths (через запятую),
linkpath_max_paths, emg2_wiring (pairwise|chain), disable_edges (через запятую:
emg1, emg2, emg3, eg1, eg2). Ключи обучения: batch_size, learning_rate,
max_epochs, patience, lr_halving_patience, seed, model, threshold_rule
(argmax|max_over_r).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Mapping, Tuple

from .errors import InputError, ParseError
from .evaluation import THRESHOLD_RULES
from .graphs import EdgeToggles
from .model import MODEL_KINDS, ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.01
    max_epochs: int = 30
    patience: int = 5
    lr_halving_patience: int = 2
    seed: int = 1
    model_kind: str = "hegcn"
    threshold_rule: str = "argmax"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise InputError(f"Размер батча должен быть не меньше 1, получено {self.batch_size}")
        if self.learning_rate <= 0:
            raise InputError(f"Скорость обучения должна быть положительной, получено {self.learning_rate}")
        if self.max_epochs < 1 or self.patience < 1 or self.lr_halving_patience < 1:
            raise InputError("Число эпох и терпение должны быть не меньше 1")
        if self.model_kind not in MODEL_KINDS:
            raise InputError(f"Неизвестная модель: {self.model_kind!r}; допустимо: {', '.join(MODEL_KINDS)}")
        if self.threshold_rule not in THRESHOLD_RULES:
            raise InputError(f"Неизвестное правило порога: {self.threshold_rule!r}")


def _int_tuple(raw: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _toggles(raw: str) -> EdgeToggles:
    return EdgeToggles.without(part for part in raw.split(",") if part.strip())


MODEL_KEYS: Dict[str, Callable[[str], Any]] = {
    "d_w": int,
    "d_z": int,
    "l1": int,
    "l2": int,
    "dropout": float,
    "indicator_size": int,
    "max_doc_len": int,
    "cnn_filters": int,
    "kernel_widths": _int_tuple,
    "linkpath_max_paths": int,
    "emg2_wiring": str,
    "disable_edges": _toggles,
}

TRAIN_KEYS: Dict[str, Callable[[str], Any]] = {
    "batch_size": int,
    "learning_rate": float,
    "max_epochs": int,
    "patience": int,
    "lr_halving_patience": int,
    "seed": int,
    "model": str,
    "threshold_rule": str,
}

_FIELD_ALIASES = {"disable_edges": "toggles", "model": "model_kind"}


def load_config_file(path: str | Path) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"Файл конфигурации не найден: {path}")
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(path, line_no, "ожидается строка вида ключ = значение")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in MODEL_KEYS and key not in TRAIN_KEYS:
                raise ParseError(path, line_no, f"неизвестный ключ {key!r}")
            values[key] = value
    return values


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for item in items:
        if "=" not in item:
            raise InputError(f"Переопределение должно иметь вид ключ=значение: {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in MODEL_KEYS and key not in TRAIN_KEYS:
            raise InputError(f"Неизвестный ключ конфигурации: {key!r}")
        values[key] = value
    return values


def apply_settings(config: TrainConfig, values: Mapping[str, str]) -> TrainConfig:
    model_changes: Dict[str, Any] = {}
    train_changes: Dict[str, Any] = {}
    for key, raw in values.items():
        if key in MODEL_KEYS:
            target, coerce = model_changes, MODEL_KEYS[key]
        elif key in TRAIN_KEYS:
            target, coerce = train_changes, TRAIN_KEYS[key]
        else:
            raise InputError(f"Неизвестный ключ конфигурации: {key!r}")
        try:
            target[_FIELD_ALIASES.get(key, key)] = coerce(raw)
        except ValueError:
            raise InputError(f"Некорректное значение для {key}: {raw!r}") from None
    model = replace(config.model, **model_changes) if model_changes else config.model
    return replace(config, model=model, **train_changes)


def model_config_to_dict(config: ModelConfig) -> Dict[str, Any]:
    data = asdict(config)
    data["kernel_widths"] = list(config.kernel_widths)
    data["toggles"] = {name: bool(value) for name, value in data["toggles"].items()}
    return data


def model_config_from_dict(data: Mapping[str, Any]) -> ModelConfig:
    values = dict(data)
    values["kernel_widths"] = tuple(int(v) for v in values.get("kernel_widths", ()))
    values["toggles"] = EdgeToggles(**values.get("toggles", {}))
    return ModelConfig(**values)


def train_config_to_dict(config: TrainConfig) -> Dict[str, Any]:
    data = {k: v for k, v in asdict(config).items() if k != "model"}
    data["model"] = model_config_to_dict(config.model)
    return data


def train_config_from_dict(data: Mapping[str, Any]) -> TrainConfig:
    values = dict(data)
    values["model"] = model_config_from_dict(values.get("model", {}))
    return TrainConfig(**values)

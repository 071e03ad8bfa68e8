from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from io import BytesIO
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from .config import TrainConfig, train_config_from_dict, train_config_to_dict
from .encoder import Vocab
from .errors import ContractError, InputError
from .model import ModelConfig
from .numerics import DTYPE, ParamStore
from .proof_pack import write_deterministic_zip


CHECKPOINT_SCHEMA_NAME = "hoprel_checkpoint"
CHECKPOINT_SCHEMA_VERSION = "1.0.0"
HEADER_NAME = "header.json"


@dataclass
class Checkpoint:
    kind: str
    train_config: TrainConfig
    vocab: Vocab
    relations: Tuple[str, ...]
    store: ParamStore
    threshold: float = 0.0
    best_epoch: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def model_config(self) -> ModelConfig:
        return self.train_config.model

    @property
    def n_labels(self) -> int:
        return len(self.relations) + 1


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> str:
    names = checkpoint.store.names()
    header = {
        "schema": {"name": CHECKPOINT_SCHEMA_NAME, "version": CHECKPOINT_SCHEMA_VERSION},
        "kind": checkpoint.kind,
        "train_config": train_config_to_dict(checkpoint.train_config),
        "vocab": list(checkpoint.vocab.words),
        "relations": list(checkpoint.relations),
        "threshold": float(checkpoint.threshold),
        "best_epoch": int(checkpoint.best_epoch),
        "history": list(checkpoint.history),
        "params": {name: list(checkpoint.store.params[name].shape) for name in names},
    }
    files = [(HEADER_NAME, json.dumps(header, ensure_ascii=False, indent=2, sort_keys=True).encode("utf-8"))]
    for name in names:
        buf = BytesIO()
        np.save(buf, np.ascontiguousarray(checkpoint.store.params[name], dtype=DTYPE), allow_pickle=False)
        files.append((f"params/{name}.npy", buf.getvalue()))
    return write_deterministic_zip(path, files)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"Контрольная точка не найдена: {path}")
    try:
        with zipfile.ZipFile(path, "r") as zf:
            header = json.loads(zf.read(HEADER_NAME).decode("utf-8"))
            _check_schema(header.get("schema", {}), path)
            store = ParamStore()
            for name, shape in sorted(header["params"].items()):
                arr = np.load(BytesIO(zf.read(f"params/{name}.npy")), allow_pickle=False)
                if list(arr.shape) != list(shape):
                    raise ContractError(f"{path}: параметр {name} имеет форму {arr.shape}, в заголовке {tuple(shape)}")
                store.add(name, arr)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"Повреждённая контрольная точка {path}: {exc}") from None

    train_config = train_config_from_dict(header["train_config"])
    store.learning_rate = train_config.learning_rate
    return Checkpoint(
        kind=str(header["kind"]),
        train_config=train_config,
        vocab=Vocab(words=tuple(header["vocab"])),
        relations=tuple(header["relations"]),
        store=store,
        threshold=float(header.get("threshold", 0.0)),
        best_epoch=int(header.get("best_epoch", 0)),
        history=list(header.get("history", [])),
    )


def _check_schema(schema: Dict[str, Any], path: Path) -> None:
    if schema.get("name") != CHECKPOINT_SCHEMA_NAME:
        raise ContractError(f"{path}: ожидается схема {CHECKPOINT_SCHEMA_NAME}, получено {schema.get('name')!r}")
    major = str(schema.get("version", "")).split(".")[0]
    if major != CHECKPOINT_SCHEMA_VERSION.split(".")[0]:
        raise ContractError(f"{path}: несовместимая версия схемы {schema.get('version')!r}")

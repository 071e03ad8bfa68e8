"""Общие данные тестов: пример Zoo Lake из WikiHop и маленькие синтетические цепочки."""

from __future__ import annotations

from collections import Counter
from dataclasses import replace
from typing import Tuple

import numpy as np

from core.config import TrainConfig
from core.corpus import (
    InstanceChain,
    KBStore,
    WikiHopRecord,
    build_dataset,
    build_two_hop_instances,
    split_train_val,
    tokenize,
)
from core.gradcheck import toy_model_config
from core.synthetic import SyntheticConfig, generate_synthetic

RELATION = "located_in_administrative_entity"

DOC1 = (
    "Zoo Lake is a popular lake and public park in Johannesburg , South Africa . "
    "It is part of the Hermann Eckstein Park and is opposite the Johannesburg Zoo . "
    "The Zoo Lake consists of two dams , an upper feeder dam , and a larger lower dam , "
    "both constructed in natural marshland watered by the Parktown Spruit ."
)
DOC2 = (
    "Johannesburg is the largest city in South Africa and is one of the 50 largest urban areas in the world . "
    "It is the provincial capital of Gauteng , which is the wealthiest province in South Africa ."
)
DOC3 = (
    "Mozambique is a country in Southeast Africa bordered by the Indian Ocean to the east , "
    "Tanzania to the north , Malawi and Zambia to the northwest , Zimbabwe to the west , "
    "and Swaziland and South Africa to the southwest ."
)


def zoo_lake_record() -> WikiHopRecord:
    return WikiHopRecord(
        id="zoo",
        relation=RELATION,
        subject_key="zoo lake",
        candidates=("gauteng", "tanzania"),
        answer="gauteng",
        supports=(tokenize(DOC1, "zoo#0"), tokenize(DOC2, "zoo#1"), tokenize(DOC3, "zoo#2")),
    )


def zoo_lake_kb() -> KBStore:
    return KBStore.from_triples(
        [
            ("Zoo Lake", RELATION, "Gauteng"),
            ("Johannesburg", "country", "South Africa"),
        ]
    )


def zoo_lake_instances() -> Tuple[InstanceChain, InstanceChain]:
    """(положительный экземпляр Doc1→Doc2, None-экземпляр Doc1→Doc3)."""
    instances = build_two_hop_instances(zoo_lake_record(), zoo_lake_kb(), warnings=Counter())
    positive = next(i for i in instances if not i.is_none)
    negative = next(i for i in instances if i.is_none)
    return positive, negative


def small_split(n_records: int = 6, seed: int = 0):
    """Маленький синтетический набор: (train, val, отношения базы знаний)."""
    records, kb = generate_synthetic(SyntheticConfig(n_relations=3, n_records=n_records, vocab=10, seed=seed))
    instances, _ = build_dataset(records, kb)
    train_set, val_set = split_train_val(instances, np.random.default_rng(seed))
    return train_set, val_set, kb.relations


def small_config(**changes):
    config = TrainConfig(batch_size=4, max_epochs=2, seed=1, model=toy_model_config())
    return replace(config, **changes)

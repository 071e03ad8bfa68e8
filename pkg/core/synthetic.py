from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Set, Tuple

import numpy as np

from .corpus import LEADING_FUNCTION_WORDS, KBStore, WikiHopRecord, normalize_key, tokenize
from .errors import InputError


logger = logging.getLogger(__name__)

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")
_CODAS = ("", "", "n", "r", "l", "s")


@dataclass(frozen=True)
class SyntheticConfig:
    n_relations: int = 5
    n_records: int = 200
    vocab: int = 40
    seed: int = 1
    filler_sentences: int = 1


def relation_name(idx: int) -> str:
    return f"rel_{idx}"


def link_word(idx: int) -> str:
    return f"link{idx}"


def generate_synthetic(config: SyntheticConfig) -> Tuple[List[WikiHopRecord], KBStore]:
    """Шаблонный корпус: метка = rel_{(a+b) mod n}, где a и b видны только в разных документах.

    Документ 1 связывает субъект S с общей сущностью C словом link{a} и содержит
    отвлекающее предложение S' link{d} C'. Документ 2 связывает C с ответом O словом
    link{b}. Документ 3 связывает C' с кандидатом W, который даёт None-экземпляр.
    """
    if config.n_relations < 2:
        raise InputError(f"Нужно хотя бы 2 отношения, получено {config.n_relations}")
    if config.n_records < 1:
        raise InputError(f"Нужна хотя бы одна запись, получено {config.n_records}")
    if config.vocab < 1:
        raise InputError(f"Словарь заполнителей пуст: {config.vocab}")

    rng = np.random.default_rng(config.seed)
    n = int(config.n_relations)
    fillers = [f"w{k}" for k in range(int(config.vocab))]
    used: Set[str] = set()
    records: List[WikiHopRecord] = []
    triples: List[Tuple[str, str, str]] = []

    for idx in range(int(config.n_records)):
        subject, common, answer, decoy_subject, decoy_common, wrong = (_fresh_name(rng, used) for _ in range(6))
        a, b, c, d = (int(v) for v in rng.integers(0, n, size=4))
        label = relation_name((a + b) % n)
        record_id = f"syn{idx:05d}"

        doc1 = [f"{subject} {link_word(a)} {common} .", f"{decoy_subject} {link_word(d)} {decoy_common} ."]
        doc2 = [f"{common} {link_word(b)} {answer} ."]
        doc3 = [f"{decoy_common} {link_word(c)} {wrong} ."]
        for sentences in (doc1, doc2, doc3):
            for _ in range(int(config.filler_sentences)):
                pos = int(rng.integers(0, len(sentences) + 1))
                sentences.insert(pos, _filler_sentence(rng, fillers))

        supports = tuple(tokenize(" ".join(s), f"{record_id}#{k}") for k, s in enumerate((doc1, doc2, doc3)))
        candidates = [normalize_key(answer), normalize_key(wrong)]
        order = rng.permutation(len(candidates))
        records.append(
            WikiHopRecord(
                id=record_id,
                relation=label,
                subject_key=normalize_key(subject),
                candidates=tuple(candidates[int(k)] for k in order),
                answer=normalize_key(answer),
                supports=supports,
            )
        )
        triples.append((subject, label, answer))

    kb = KBStore.from_triples(triples, extra_relations=[relation_name(k) for k in range(n)])
    logger.info("Синтетический корпус: %d записей, %d отношений", len(records), n)
    return records, kb


def _fresh_name(rng: np.random.Generator, used: Set[str]) -> str:
    # Слова имён не повторяются во всём корпусе, поэтому имена не вкладываются друг в друга.
    while True:
        words = [_word(rng) for _ in range(int(rng.integers(1, 3)))]
        if len(set(words)) != len(words) or any(w in used or w in LEADING_FUNCTION_WORDS for w in words):
            continue
        used.update(words)
        return " ".join(w.capitalize() for w in words)


def _word(rng: np.random.Generator) -> str:
    parts = []
    for _ in range(int(rng.integers(2, 4))):
        parts.append(_ONSETS[int(rng.integers(len(_ONSETS)))])
        parts.append(_VOWELS[int(rng.integers(len(_VOWELS)))])
    parts.append(_CODAS[int(rng.integers(len(_CODAS)))])
    return "".join(parts)


def _filler_sentence(rng: np.random.Generator, fillers: List[str]) -> str:
    length = int(rng.integers(3, 7))
    return " ".join(fillers[int(k)] for k in rng.integers(0, len(fillers), size=length)) + " ."

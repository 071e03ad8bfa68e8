from __future__ import annotations

import json
import logging
import string
from bisect import bisect_right
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from tqdm import tqdm

from .errors import ContractError, InputError, ParseError


logger = logging.getLogger(__name__)

SENTENCE_END_TOKENS = frozenset({".", "!", "?"})
PUNCTUATION = frozenset(string.punctuation)
VAL_FRACTION = 0.1
HISTOGRAM_BUCKETS = ("1", "2", "3", "4", ">=5")

# Служебные слова, которые не начинают имя сущности в начале капитализированной серии.
LEADING_FUNCTION_WORDS = frozenset(
    {
        "a", "an", "the", "this", "that", "these", "those", "there", "here",
        "it", "its", "he", "his", "him", "she", "her", "they", "their", "them",
        "we", "our", "i", "my", "you", "your", "who", "which", "what", "where",
        "when", "while", "if", "but", "and", "or", "so", "yet", "also",
        "in", "on", "at", "of", "for", "from", "by", "with", "as", "to", "into",
        "after", "before", "during", "since", "although", "however", "because",
        "is", "was", "are", "were", "be", "been", "has", "had", "have",
        "some", "many", "most", "all", "both", "each", "other", "such", "one",
    }
)

Span = Tuple[int, int]
Recognizer = Callable[["Document"], Iterable[Span]]


@dataclass(frozen=True)
class Document:
    id: str
    tokens: Tuple[str, ...]
    sentence_spans: Tuple[Span, ...]

    def __post_init__(self) -> None:
        expected = 0
        for start, end in self.sentence_spans:
            if start != expected or end <= start:
                raise ContractError(f"Документ {self.id}: границы предложений не покрывают токены подряд")
            expected = end
        if expected != len(self.tokens):
            raise ContractError(f"Документ {self.id}: предложения покрывают {expected} из {len(self.tokens)} токенов")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def sentence_of(self, token_idx: int) -> int:
        starts = [s for s, _ in self.sentence_spans]
        return bisect_right(starts, int(token_idx)) - 1


@dataclass(frozen=True)
class Mention:
    doc_id: str
    start: int
    end: int
    surface: str
    entity_key: str


@dataclass(frozen=True)
class InstanceChain:
    doc_s: Document
    doc_o: Document
    subject_key: str
    object_key: str
    common_keys: Tuple[str, ...]
    label: Optional[str]
    mentions: Tuple[Mention, ...]
    record_id: str = ""
    # ответ записи-источника; для None-экземпляров нужен при проверке по базе знаний
    answer_key: str = ""

    def __post_init__(self) -> None:
        if self.doc_s.id == self.doc_o.id:
            raise ContractError(f"Цепочка из одного документа: {self.doc_s.id}")
        if not self.common_keys:
            raise ContractError("В цепочке нет общих сущностей")
        by_doc = {self.doc_s.id: self.doc_s, self.doc_o.id: self.doc_o}
        keys: Dict[str, Set[str]] = {self.doc_s.id: set(), self.doc_o.id: set()}
        for doc_id in by_doc:
            previous_end = 0
            for m in sorted((m for m in self.mentions if m.doc_id == doc_id), key=lambda m: (m.start, m.end)):
                doc = by_doc[doc_id]
                if not 0 <= m.start < m.end <= len(doc):
                    raise ContractError(f"Упоминание {m.surface!r} вне документа {doc_id}")
                if m.surface != " ".join(doc.tokens[m.start : m.end]):
                    raise ContractError(f"Упоминание {m.surface!r} не совпадает с токенами документа {doc_id}")
                if m.start < previous_end:
                    raise ContractError(f"Упоминания перекрываются в документе {doc_id}")
                previous_end = m.end
                keys[doc_id].add(m.entity_key)
        if any(m.doc_id not in by_doc for m in self.mentions):
            raise ContractError("Упоминание ссылается на документ вне цепочки")
        if self.subject_key not in keys[self.doc_s.id]:
            raise ContractError(f"Субъект {self.subject_key!r} не упомянут в первом документе")
        if self.object_key not in keys[self.doc_o.id]:
            raise ContractError(f"Объект {self.object_key!r} не упомянут во втором документе")
        for key in self.common_keys:
            if key not in keys[self.doc_s.id] or key not in keys[self.doc_o.id]:
                raise ContractError(f"Общая сущность {key!r} упомянута не в обоих документах")

    @property
    def is_none(self) -> bool:
        return self.label is None

    @property
    def documents(self) -> Tuple[Document, Document]:
        return self.doc_s, self.doc_o

    def doc_mentions(self, doc_index: int) -> Tuple[Mention, ...]:
        doc_id = self.documents[doc_index].id
        return tuple(sorted((m for m in self.mentions if m.doc_id == doc_id), key=lambda m: (m.start, m.end)))

    def entity_keys(self, doc_index: int) -> FrozenSet[str]:
        return frozenset(m.entity_key for m in self.doc_mentions(doc_index))


@dataclass(frozen=True)
class KBStore:
    triples: FrozenSet[Tuple[str, str, str]]
    relations: Tuple[str, ...]
    _pairs: FrozenSet[Tuple[str, str]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_pairs", frozenset((s, o) for s, _, o in self.triples))
        if len(set(self.relations)) != len(self.relations):
            raise ContractError("Повторяющиеся отношения в словаре")

    @classmethod
    def from_triples(cls, triples: Iterable[Tuple[str, str, str]], extra_relations: Iterable[str] = ()) -> "KBStore":
        triples = frozenset((normalize_key(s), r.strip(), normalize_key(o)) for s, r, o in triples)
        relations = sorted({r for _, r, _ in triples} | {r.strip() for r in extra_relations})
        return cls(triples=triples, relations=tuple(relations))

    def with_relations(self, names: Iterable[str]) -> "KBStore":
        relations = sorted(set(self.relations) | {n.strip() for n in names})
        return KBStore(triples=self.triples, relations=tuple(relations))

    @property
    def none_id(self) -> int:
        return len(self.relations)

    def relation_id(self, name: Optional[str]) -> int:
        if name is None:
            return self.none_id
        try:
            return self.relations.index(name)
        except ValueError:
            raise ContractError(f"Отношение {name!r} отсутствует в словаре") from None

    def has_any_relation(self, a: str, b: str) -> bool:
        return (a, b) in self._pairs


@dataclass(frozen=True)
class WikiHopRecord:
    id: str
    relation: str
    subject_key: str
    candidates: Tuple[str, ...]
    answer: str
    supports: Tuple[Document, ...]

    def __post_init__(self) -> None:
        if self.answer not in self.candidates:
            raise ContractError(f"Запись {self.id}: ответ {self.answer!r} не входит в кандидаты")


@dataclass(frozen=True)
class StatsReport:
    n_positive_relations: int
    n_chains: int
    n_positive: int
    n_none: int
    n_positive_entity_pairs: int
    common_histogram: Tuple[Tuple[str, int], ...]
    per_relation: Tuple[Tuple[str, int], ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "positive_relations": self.n_positive_relations,
            "document_chains": self.n_chains,
            "positive_instances": self.n_positive,
            "none_instances": self.n_none,
            "positive_entity_pairs": self.n_positive_entity_pairs,
            "common_entities_histogram": dict(self.common_histogram),
            "per_relation": dict(self.per_relation),
        }


# --- токенизация и поиск упоминаний ---


def split_tokens(text: str) -> List[str]:
    tokens: List[str] = []
    for chunk in text.split():
        if all(ch in PUNCTUATION for ch in chunk):
            tokens.append(chunk)
            continue
        start, end = 0, len(chunk)
        while chunk[start] in PUNCTUATION:
            start += 1
        while chunk[end - 1] in PUNCTUATION:
            end -= 1
        tokens.extend(chunk[:start])
        tokens.append(chunk[start:end])
        tokens.extend(chunk[end:])
    return tokens


def normalize_key(text: str) -> str:
    return " ".join(tok.casefold() for tok in split_tokens(text))


def tokenize(text: str, doc_id: str = "doc") -> Document:
    tokens = split_tokens(text or "")
    if not tokens:
        raise InputError(f"Пустой текст документа {doc_id}")
    spans: List[Span] = []
    start = 0
    for idx, tok in enumerate(tokens):
        if tok in SENTENCE_END_TOKENS:
            spans.append((start, idx + 1))
            start = idx + 1
    if start < len(tokens):
        spans.append((start, len(tokens)))
    return Document(id=doc_id, tokens=tuple(tokens), sentence_spans=tuple(spans))


def find_mentions(doc: Document, gazetteer: Iterable[str]) -> List[Mention]:
    """Регистронезависимый поиск: самое длинное совпадение, слева направо, без перекрытий."""
    index: Dict[str, List[Tuple[str, ...]]] = {}
    for key in set(gazetteer):
        key_tokens = tuple(key.split(" "))
        if key_tokens and key_tokens[0]:
            index.setdefault(key_tokens[0], []).append(key_tokens)
    for options in index.values():
        options.sort(key=lambda toks: (-len(toks), toks))

    lowered = [tok.casefold() for tok in doc.tokens]
    mentions: List[Mention] = []
    i = 0
    while i < len(lowered):
        match = None
        for key_tokens in index.get(lowered[i], ()):
            if tuple(lowered[i : i + len(key_tokens)]) == key_tokens:
                match = key_tokens
                break
        if match is None:
            i += 1
            continue
        end = i + len(match)
        mentions.append(Mention(doc.id, i, end, " ".join(doc.tokens[i:end]), " ".join(match)))
        i = end
    return mentions


def capitalized_runs(doc: Document) -> List[Span]:
    """Распознаватель по умолчанию: максимальные серии токенов с заглавной буквы."""
    spans: List[Span] = []
    tokens = doc.tokens
    for s0, s1 in doc.sentence_spans:
        i = s0
        while i < s1:
            if not tokens[i][:1].isupper():
                i += 1
                continue
            j = i
            while j < s1 and tokens[j][:1].isupper():
                j += 1
            start = i
            while start < j and tokens[start].casefold() in LEADING_FUNCTION_WORDS:
                start += 1
            if start < j:
                spans.append((start, j))
            i = j
    return spans


def detect_entities(doc: Document, recognizer: Optional[Recognizer] = None) -> Set[str]:
    recognizer = recognizer or capitalized_runs
    keys: Set[str] = set()
    for start, end in recognizer(doc):
        if not 0 <= start < end <= len(doc):
            raise ContractError(f"Распознаватель вернул некорректный диапазон ({start}, {end}) для {doc.id}")
        keys.add(" ".join(tok.casefold() for tok in doc.tokens[start:end]))
    return keys


# --- дистанционная разметка ---


def none_candidates(record: WikiHopRecord, kb: KBStore) -> Set[str]:
    subject, answer = record.subject_key, record.answer
    out: Set[str] = set()
    for cand in record.candidates:
        if cand == answer or cand == subject:
            continue
        pairs = ((subject, cand), (cand, subject), (cand, answer), (answer, cand))
        if not any(kb.has_any_relation(a, b) for a, b in pairs):
            out.add(cand)
    return out


def build_two_hop_instances(
    record: WikiHopRecord,
    kb: KBStore,
    recognizer: Optional[Recognizer] = None,
    warnings: Optional[Counter] = None,
) -> List[InstanceChain]:
    subject = record.subject_key
    gazetteer: Set[str] = {subject, record.answer, *record.candidates}
    for doc in record.supports:
        gazetteer |= detect_entities(doc, recognizer)

    mentions = [tuple(find_mentions(doc, gazetteer)) for doc in record.supports]
    keys = [{m.entity_key for m in ms} for ms in mentions]
    objects: List[Tuple[str, Optional[str]]] = [(record.answer, record.relation)]
    objects.extend((cand, None) for cand in sorted(none_candidates(record, kb)))

    instances: List[InstanceChain] = []
    n_positive = 0
    for i, j in permutations(range(len(record.supports)), 2):
        if subject not in keys[i]:
            continue
        for obj, label in objects:
            if obj == subject or obj not in keys[j]:
                continue
            common = (keys[i] & keys[j]) - {subject, obj}
            if not common:
                continue
            instances.append(
                InstanceChain(
                    doc_s=record.supports[i],
                    doc_o=record.supports[j],
                    subject_key=subject,
                    object_key=obj,
                    common_keys=tuple(sorted(common)),
                    label=label,
                    mentions=mentions[i] + mentions[j],
                    record_id=record.id,
                    answer_key=record.answer,
                )
            )
            n_positive += int(label is not None)

    if n_positive == 0:
        if warnings is not None:
            warnings["record_without_positive_chain"] += 1
        logger.warning("Запись %s пропущена: нет пары документов для положительного кортежа", record.id)
        return []
    return instances


def _build_one(args: Tuple[WikiHopRecord, KBStore, Optional[Recognizer]]) -> Tuple[List[InstanceChain], Counter]:
    record, kb, recognizer = args
    warnings: Counter = Counter()
    return build_two_hop_instances(record, kb, recognizer, warnings), warnings


def build_dataset(
    records: Sequence[WikiHopRecord],
    kb: KBStore,
    recognizer: Optional[Recognizer] = None,
    jobs: int = 1,
) -> Tuple[List[InstanceChain], Counter]:
    """Строит экземпляры по всем записям; порядок вывода совпадает с порядком записей."""
    tasks = [(record, kb, recognizer) for record in records]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_build_one, tasks, chunksize=16))
    else:
        results = [_build_one(task) for task in tqdm(tasks, desc="Записи", disable=None)]
    instances: List[InstanceChain] = []
    warnings: Counter = Counter()
    for chunk, chunk_warnings in results:
        instances.extend(chunk)
        warnings.update(chunk_warnings)
    return instances, warnings


def check_none_instances(instances: Iterable[InstanceChain], kb: KBStore) -> List[InstanceChain]:
    """Возвращает None-экземпляры, для которых в базе знаний есть связь (должно быть пусто).

    Кандидат проверяется в обе стороны и с субъектом, и с ответом записи;
    у экземпляров без сохранённого ответа остаются только пары с субъектом.
    """
    bad = []
    for inst in instances:
        if not inst.is_none:
            continue
        s, o, a = inst.subject_key, inst.object_key, inst.answer_key
        pairs = [(s, o), (o, s)]
        if a:
            pairs += [(o, a), (a, o)]
        if any(kb.has_any_relation(x, y) for x, y in pairs):
            bad.append(inst)
    return bad


def balance_none(instances: Sequence[InstanceChain], rng: np.random.Generator) -> List[InstanceChain]:
    positive_idx = [i for i, inst in enumerate(instances) if not inst.is_none]
    none_idx = [i for i, inst in enumerate(instances) if inst.is_none]
    if len(none_idx) <= len(positive_idx):
        return list(instances)
    chosen = rng.choice(len(none_idx), size=len(positive_idx), replace=False)
    keep = set(positive_idx) | {none_idx[k] for k in chosen}
    return [inst for i, inst in enumerate(instances) if i in keep]


def split_train_val(
    instances: Sequence[InstanceChain],
    rng: np.random.Generator,
    val_fraction: float = VAL_FRACTION,
) -> Tuple[List[InstanceChain], List[InstanceChain]]:
    n = len(instances)
    n_val = int(np.floor(n * float(val_fraction) + 1e-9))
    perm = rng.permutation(n)
    val_idx = set(int(i) for i in perm[:n_val])
    train = [inst for i, inst in enumerate(instances) if i not in val_idx]
    val = [inst for i, inst in enumerate(instances) if i in val_idx]
    return train, val


def split_records(
    records: Sequence[WikiHopRecord],
    rng: np.random.Generator,
    test_fraction: float = VAL_FRACTION,
) -> Tuple[List[WikiHopRecord], List[WikiHopRecord]]:
    """Отделяет тестовые записи целиком: экземпляры одной записи не попадают в разные части."""
    n_test = int(np.floor(len(records) * float(test_fraction) + 1e-9))
    test_idx = set(int(i) for i in rng.permutation(len(records))[:n_test])
    rest = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return rest, test


def dataset_stats(instances: Sequence[InstanceChain]) -> StatsReport:
    positives = [inst for inst in instances if not inst.is_none]
    chains: Dict[Tuple[str, str, str], int] = {}
    for inst in instances:
        chains.setdefault((inst.record_id, inst.doc_s.id, inst.doc_o.id), len(inst.common_keys))
    histogram = Counter(_bucket(n) for n in chains.values())
    per_relation = Counter(inst.label for inst in positives)
    return StatsReport(
        n_positive_relations=len(per_relation),
        n_chains=len(chains),
        n_positive=len(positives),
        n_none=len(instances) - len(positives),
        n_positive_entity_pairs=len({(inst.subject_key, inst.object_key) for inst in positives}),
        common_histogram=tuple((bucket, int(histogram.get(bucket, 0))) for bucket in HISTOGRAM_BUCKETS),
        per_relation=tuple(sorted(per_relation.items())),
    )


def _bucket(n_common: int) -> str:
    return str(n_common) if n_common < 5 else ">=5"


# --- ввод/вывод ---


def record_from_dict(data: Mapping[str, Any]) -> WikiHopRecord:
    record_id = str(data["id"])
    question = data["question"]
    supports = []
    for k, support in enumerate(data["supports"]):
        if isinstance(support, str):
            doc_id, text = f"{record_id}#{k}", support
        else:
            doc_id, text = str(support.get("id") or f"{record_id}#{k}"), str(support["text"])
        supports.append(tokenize(text, doc_id))
    return WikiHopRecord(
        id=record_id,
        relation=str(question["relation"]).strip(),
        subject_key=normalize_key(str(question["subject"])),
        candidates=tuple(normalize_key(str(c)) for c in data["candidates"]),
        answer=normalize_key(str(data["answer"])),
        supports=tuple(supports),
    )


def record_to_dict(record: WikiHopRecord) -> Dict[str, Any]:
    return {
        "id": record.id,
        "question": {"relation": record.relation, "subject": record.subject_key},
        "candidates": list(record.candidates),
        "answer": record.answer,
        "supports": [{"id": doc.id, "text": doc.text} for doc in record.supports],
    }


def load_wikihop_records(path: str | Path) -> List[WikiHopRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(record_from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"некорректный JSON ({exc.msg})") from None
            except (KeyError, TypeError, AttributeError) as exc:
                raise ParseError(path, line_no, f"нет обязательного поля {exc}") from None
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
    return records


def write_records(path: str | Path, records: Iterable[WikiHopRecord]) -> None:
    _write_jsonl(path, (record_to_dict(r) for r in records))


def load_kb(path: str | Path) -> KBStore:
    triples = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise ParseError(path, line_no, "ожидается тройка субъект\\tотношение\\tобъект")
            triples.append((parts[0], parts[1], parts[2]))
    return KBStore.from_triples(triples)


def write_kb(path: str | Path, kb: KBStore) -> None:
    lines = [f"{s}\t{r}\t{o}" for s, r, o in sorted(kb.triples)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _document_to_dict(doc: Document) -> Dict[str, Any]:
    return {"id": doc.id, "tokens": list(doc.tokens), "sentence_spans": [list(s) for s in doc.sentence_spans]}


def _document_from_dict(data: Mapping[str, Any]) -> Document:
    return Document(
        id=str(data["id"]),
        tokens=tuple(str(t) for t in data["tokens"]),
        sentence_spans=tuple((int(s), int(e)) for s, e in data["sentence_spans"]),
    )


def instance_to_dict(inst: InstanceChain) -> Dict[str, Any]:
    return {
        "record_id": inst.record_id,
        "doc_s": _document_to_dict(inst.doc_s),
        "doc_o": _document_to_dict(inst.doc_o),
        "subject": inst.subject_key,
        "object": inst.object_key,
        "common": list(inst.common_keys),
        "label": inst.label,
        "mentions": [[m.doc_id, m.start, m.end, m.surface, m.entity_key] for m in inst.mentions],
        "answer": inst.answer_key,
    }


def instance_from_dict(data: Mapping[str, Any]) -> InstanceChain:
    return InstanceChain(
        doc_s=_document_from_dict(data["doc_s"]),
        doc_o=_document_from_dict(data["doc_o"]),
        subject_key=str(data["subject"]),
        object_key=str(data["object"]),
        common_keys=tuple(str(k) for k in data["common"]),
        label=None if data["label"] is None else str(data["label"]),
        mentions=tuple(Mention(str(d), int(s), int(e), str(sf), str(k)) for d, s, e, sf, k in data["mentions"]),
        record_id=str(data.get("record_id", "")),
        answer_key=str(data.get("answer", "")),
    )


def write_instances(path: str | Path, instances: Iterable[InstanceChain]) -> None:
    _write_jsonl(path, (instance_to_dict(inst) for inst in instances))


def read_instances(path: str | Path) -> List[InstanceChain]:
    instances = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                instances.append(instance_from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"некорректный JSON ({exc.msg})") from None
            except (KeyError, TypeError) as exc:
                raise ParseError(path, line_no, f"нет обязательного поля {exc}") from None
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
    return instances


def _write_jsonl(path: str | Path, rows: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True))
            f.write("\n")

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .corpus import Document, InstanceChain, Mention
from .errors import ContractError, InputError, ParseError
from .numerics import (
    DTYPE,
    UNKNOWN_WORD_SCALE,
    ParamStore,
    Tape,
    Tensor,
    concat,
    dropout,
    lstm_step,
    stack_rows,
    take_rows,
    uniform_init,
)


logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SEP_TOKEN = "<sep>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, SEP_TOKEN)

INDICATOR_PAD = 0
INDICATOR_PLAIN = 1
INDICATOR_SUBJECT = 2
INDICATOR_OBJECT = 3
INDICATOR_FIRST_COMMON = 4
DEFAULT_INDICATOR_SIZE = 64
DEFAULT_MAX_DOC_LEN = 512


@dataclass(frozen=True)
class Vocab:
    words: Tuple[str, ...]
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.words[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ContractError("Словарь должен начинаться со служебных токенов <pad>, <unk>, <sep>")
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    @classmethod
    def build(cls, instances: Iterable[InstanceChain]) -> "Vocab":
        seen = set()
        for inst in instances:
            for doc in inst.documents:
                seen.update(tok.casefold() for tok in doc.tokens)
        seen.difference_update(SPECIAL_TOKENS)
        return cls(words=SPECIAL_TOKENS + tuple(sorted(seen)))

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def id(self, word: str) -> int:
        return self._index.get(word.casefold(), self._index[UNK_TOKEN])

    @property
    def sep_id(self) -> int:
        return self._index[SEP_TOKEN]


@dataclass(frozen=True)
class EncoderInput:
    """Последовательность doc_s ⊕ [sep] ⊕ doc_o с индексами слов и индикаторов."""

    word_ids: np.ndarray
    indicator_ids: np.ndarray
    separator: int
    doc_offsets: Tuple[int, int]
    # для каждого документа: границы предложений в координатах общей последовательности
    sentence_rows: Tuple[Tuple[Tuple[int, int], ...], Tuple[Tuple[int, int], ...]]
    token_doc: np.ndarray
    token_sentence: np.ndarray
    token_mention: np.ndarray

    @property
    def n_total(self) -> int:
        return int(self.word_ids.shape[0])

    def global_span(self, doc_index: int, mention: Mention) -> Tuple[int, int]:
        offset = self.doc_offsets[doc_index]
        return offset + mention.start, offset + mention.end

    def sentence_rows_of(self, doc_index: int, mention: Mention) -> Tuple[int, int]:
        start, _ = self.global_span(doc_index, mention)
        for s0, s1 in self.sentence_rows[doc_index]:
            if s0 <= start < s1:
                return s0, s1
        raise ContractError(f"Упоминание {mention.surface!r} вне предложений документа")


@dataclass(frozen=True)
class EncodedChain:
    H: Tensor
    inputs: EncoderInput

    @property
    def token_meta(self) -> List[Tuple[int, int, int]]:
        return list(
            zip(
                self.inputs.token_doc.tolist(),
                self.inputs.token_sentence.tolist(),
                self.inputs.token_mention.tolist(),
            )
        )


def assign_indicator_indices(
    chain: InstanceChain,
    indicator_size: int = DEFAULT_INDICATOR_SIZE,
    warnings: Optional[Counter] = None,
) -> np.ndarray:
    """Индексы индикаторов для всей цепочки (doc_s, разделитель, doc_o)."""
    if indicator_size < INDICATOR_FIRST_COMMON + 1:
        raise ContractError(f"Размер таблицы индикаторов {indicator_size} меньше {INDICATOR_FIRST_COMMON + 1}")
    common = set(chain.common_keys)
    order: List[str] = []
    for doc_index in (0, 1):
        for m in chain.doc_mentions(doc_index):
            if m.entity_key in common and m.entity_key not in order:
                order.append(m.entity_key)
    common_index: Dict[str, int] = {}
    for rank, key in enumerate(order):
        idx = INDICATOR_FIRST_COMMON + rank
        if idx >= indicator_size:
            idx = indicator_size - 1
            if warnings is not None:
                warnings["indicator_overflow"] += 1
            logger.warning("Общих сущностей больше таблицы индикаторов: %r получает индекс %d", key, idx)
        common_index[key] = idx

    parts = []
    for doc_index, doc in enumerate(chain.documents):
        ids = np.full(len(doc), INDICATOR_PLAIN, dtype=np.int64)
        for m in chain.doc_mentions(doc_index):
            if m.entity_key == chain.subject_key:
                ids[m.start : m.end] = INDICATOR_SUBJECT
            elif m.entity_key == chain.object_key:
                ids[m.start : m.end] = INDICATOR_OBJECT
            elif m.entity_key in common_index:
                ids[m.start : m.end] = common_index[m.entity_key]
        parts.append(ids)
    return np.concatenate([parts[0], np.array([INDICATOR_PLAIN], dtype=np.int64), parts[1]])


def truncate_chain(
    chain: InstanceChain,
    max_doc_len: int = DEFAULT_MAX_DOC_LEN,
    warnings: Optional[Counter] = None,
) -> InstanceChain:
    if all(len(doc) <= max_doc_len for doc in chain.documents):
        return chain
    docs = [_truncate_document(doc, max_doc_len) for doc in chain.documents]
    limits = {doc.id: len(doc) for doc in docs}
    mentions = tuple(m for m in chain.mentions if m.end <= limits[m.doc_id])
    kept_keys = [
        {m.entity_key for m in mentions if m.doc_id == doc.id} for doc in docs
    ]
    common = tuple(k for k in chain.common_keys if k in kept_keys[0] and k in kept_keys[1])
    try:
        truncated = InstanceChain(
            doc_s=docs[0],
            doc_o=docs[1],
            subject_key=chain.subject_key,
            object_key=chain.object_key,
            common_keys=common,
            label=chain.label,
            mentions=mentions,
            record_id=chain.record_id,
            answer_key=chain.answer_key,
        )
    except ContractError:
        if warnings is not None:
            warnings["truncation_skipped"] += 1
        logger.warning("Цепочка %s длиннее %d токенов, но обрезка удалила бы ключевые упоминания", chain.record_id, max_doc_len)
        return chain
    if warnings is not None:
        warnings["truncated_document"] += 1
    logger.warning("Цепочка %s обрезана до %d токенов на документ", chain.record_id, max_doc_len)
    return truncated


def _truncate_document(doc: Document, limit: int) -> Document:
    if len(doc) <= limit:
        return doc
    spans = tuple((s, min(e, limit)) for s, e in doc.sentence_spans if s < limit)
    return Document(id=doc.id, tokens=doc.tokens[:limit], sentence_spans=spans)


def prepare_encoder_input(
    chain: InstanceChain,
    vocab: Vocab,
    indicator_size: int = DEFAULT_INDICATOR_SIZE,
    warnings: Optional[Counter] = None,
) -> EncoderInput:
    doc_s, doc_o = chain.documents
    separator = len(doc_s)
    offsets = (0, separator + 1)
    words = [vocab.id(t) for t in doc_s.tokens] + [vocab.sep_id] + [vocab.id(t) for t in doc_o.tokens]
    n_total = len(words)

    token_doc = np.full(n_total, -1, dtype=np.int64)
    token_sentence = np.full(n_total, -1, dtype=np.int64)
    token_mention = np.full(n_total, -1, dtype=np.int64)
    sentence_rows = []
    mention_id = 0
    for doc_index, doc in enumerate(chain.documents):
        offset = offsets[doc_index]
        rows = tuple((offset + s, offset + e) for s, e in doc.sentence_spans)
        sentence_rows.append(rows)
        for sent_idx, (s0, s1) in enumerate(rows):
            token_doc[s0:s1] = doc_index
            token_sentence[s0:s1] = sent_idx
        for m in chain.doc_mentions(doc_index):
            token_mention[offset + m.start : offset + m.end] = mention_id
            mention_id += 1

    return EncoderInput(
        word_ids=np.asarray(words, dtype=np.int64),
        indicator_ids=assign_indicator_indices(chain, indicator_size, warnings),
        separator=separator,
        doc_offsets=offsets,
        sentence_rows=(sentence_rows[0], sentence_rows[1]),
        token_doc=token_doc,
        token_sentence=token_sentence,
        token_mention=token_mention,
    )


# --- параметры и прямой проход ---


def init_encoder_params(
    store: ParamStore,
    vocab_size: int,
    d_w: int,
    d_z: int,
    indicator_size: int,
    rng: np.random.Generator,
    word_table: Optional[np.ndarray] = None,
    with_lstm: bool = True,
) -> None:
    if word_table is None:
        word_table = uniform_init(rng, (vocab_size, d_w), UNKNOWN_WORD_SCALE)
    elif word_table.shape != (vocab_size, d_w):
        raise ContractError(f"Таблица слов {word_table.shape} не совпадает с ({vocab_size}, {d_w})")
    store.add("embed.word", word_table)
    store.add("embed.indicator", uniform_init(rng, (indicator_size, d_z)))
    if not with_lstm:
        return
    hidden = d_w + d_z
    for direction in ("fw", "bw"):
        store.add(f"encoder.{direction}.w_ih", uniform_init(rng, (4 * hidden, hidden)))
        store.add(f"encoder.{direction}.w_hh", uniform_init(rng, (4 * hidden, hidden)))
        store.add(f"encoder.{direction}.bias", uniform_init(rng, (4 * hidden,)))


def embed_chain(
    tape: Tape,
    store: ParamStore,
    inputs: EncoderInput,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    words = take_rows(tape.param(store, "embed.word"), inputs.word_ids)
    indicators = take_rows(tape.param(store, "embed.indicator"), inputs.indicator_ids)
    x = concat([words, indicators], axis=1)
    return dropout(x, dropout_rate, training, rng)


def run_lstm(tape: Tape, store: ParamStore, x: Tensor, prefix: str, reverse: bool = False) -> Tensor:
    if x.value.ndim != 2 or x.value.shape[0] == 0:
        raise ContractError(f"Пустая последовательность для LSTM: {x.shape}")
    w_ih = tape.param(store, f"{prefix}.w_ih")
    w_hh = tape.param(store, f"{prefix}.w_hh")
    bias = tape.param(store, f"{prefix}.bias")
    hidden = w_hh.shape[1]
    h = tape.constant(np.zeros(hidden, dtype=DTYPE))
    c = tape.constant(np.zeros(hidden, dtype=DTYPE))
    n = x.shape[0]
    outputs: List[Optional[Tensor]] = [None] * n
    for t in (range(n - 1, -1, -1) if reverse else range(n)):
        h, c = lstm_step(take_rows(x, t), (h, c), w_ih, w_hh, bias)
        outputs[t] = h
    return stack_rows(outputs)


def encode_chain(tape: Tape, store: ParamStore, x: Tensor, inputs: Optional[EncoderInput] = None) -> EncodedChain:
    forward = run_lstm(tape, store, x, "encoder.fw")
    backward = run_lstm(tape, store, x, "encoder.bw", reverse=True)
    return EncodedChain(H=concat([forward, backward], axis=1), inputs=inputs)


def load_pretrained_embeddings(
    path: str | Path,
    vocab: Vocab,
    d_w: int,
    rng: np.random.Generator,
    warnings: Optional[Counter] = None,
) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"Файл эмбеддингов не найден: {path}")
    table = uniform_init(rng, (len(vocab), d_w), UNKNOWN_WORD_SCALE)
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ParseError(path, line_no, "ожидается слово и вектор")
            try:
                vector = np.array([float(v) for v in parts[1:]], dtype=DTYPE)
            except ValueError:
                raise ParseError(path, line_no, "вектор содержит нечисловое значение") from None
            if vector.shape[0] != d_w:
                raise ContractError(f"{path}:{line_no}: размерность {vector.shape[0]} вместо d_w={d_w}")
            word = parts[0].casefold()
            if word in seen:
                if warnings is not None:
                    warnings["duplicate_embedding"] += 1
                logger.warning("%s:%d: повтор слова %r, используется последнее вхождение", path, line_no, word)
            seen.add(word)
            if word in vocab and word not in SPECIAL_TOKENS:
                table[vocab.id(word)] = vector
    logger.info("Загружено эмбеддингов для %d слов словаря из %d", len(seen & set(vocab.words)), len(vocab))
    return table

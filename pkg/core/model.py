from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import InstanceChain
from .encoder import (
    DEFAULT_INDICATOR_SIZE,
    DEFAULT_MAX_DOC_LEN,
    EncoderInput,
    Vocab,
    embed_chain,
    encode_chain,
    init_encoder_params,
    prepare_encoder_input,
    truncate_chain,
)
from .errors import ContractError, InputError
from .graphs import EMG2_WIRINGS, ChainGraphs, EdgeToggles, UnifiedEntityGraph, build_chain_graphs
from .numerics import (
    DTYPE,
    ParamStore,
    Tape,
    Tensor,
    add,
    concat,
    conv1d,
    dropout,
    matmul,
    max_rows,
    relu,
    softmax,
    take_rows,
    tanh,
    transpose,
    uniform_init,
)


logger = logging.getLogger(__name__)

MODEL_KINDS = ("hegcn", "cnn", "bilstm", "bilstm_cnn", "linkpath")
ATTENTION_MASK = -1e30


@dataclass(frozen=True)
class ModelConfig:
    d_w: int = 300
    d_z: int = 20
    l1: int = 1
    l2: int = 1
    dropout: float = 0.5
    indicator_size: int = DEFAULT_INDICATOR_SIZE
    max_doc_len: int = DEFAULT_MAX_DOC_LEN
    cnn_filters: int = 500
    kernel_widths: Tuple[int, ...] = (3, 4, 5)
    linkpath_max_paths: int = 512
    toggles: EdgeToggles = field(default_factory=EdgeToggles)
    emg2_wiring: str = "pairwise"

    def __post_init__(self) -> None:
        if self.d_w < 1 or self.d_z < 1:
            raise InputError(f"Размерности эмбеддингов должны быть положительны: d_w={self.d_w}, d_z={self.d_z}")
        if self.l1 < 1 or self.l2 < 1:
            raise InputError(f"Число слоёв GCN должно быть не меньше 1: L1={self.l1}, L2={self.l2}")
        if not 0.0 <= self.dropout < 1.0:
            raise InputError(f"Доля dropout должна быть в [0, 1), получено {self.dropout}")
        if self.cnn_filters < 1 or not self.kernel_widths or min(self.kernel_widths) < 1:
            raise InputError("Параметры свёртки должны быть положительны")
        if self.linkpath_max_paths < 1 or self.max_doc_len < 1:
            raise InputError("Лимиты путей и длины документа должны быть положительны")
        if self.emg2_wiring not in EMG2_WIRINGS:
            raise InputError(f"Неизвестная схема рёбер EMG2: {self.emg2_wiring!r}")

    @property
    def hidden(self) -> int:
        return self.d_w + self.d_z

    @property
    def d_g(self) -> int:
        return 6 * self.hidden


HEGCNConfig = ModelConfig


@dataclass(frozen=True)
class PreparedInstance:
    chain: InstanceChain
    inputs: EncoderInput
    graphs: ChainGraphs
    mention_adjacency: Tuple[np.ndarray, np.ndarray]
    entity_adjacency: np.ndarray
    # пути LinkPath: индексы (субъект в doc_s, общая в doc_s, общая в doc_o, объект в doc_o)
    paths: np.ndarray
    label_id: int


def label_index(label: Optional[str], relations: Sequence[str]) -> int:
    if label is None:
        return len(relations)
    try:
        return list(relations).index(label)
    except ValueError:
        return -1


def prepare_instance(
    chain: InstanceChain,
    vocab: Vocab,
    relations: Sequence[str],
    config: ModelConfig,
    seed: int = 0,
    warnings: Optional[Counter] = None,
) -> PreparedInstance:
    chain = truncate_chain(chain, config.max_doc_len, warnings)
    graphs = build_chain_graphs(chain, config.toggles, config.emg2_wiring)
    return PreparedInstance(
        chain=chain,
        inputs=prepare_encoder_input(chain, vocab, config.indicator_size, warnings),
        graphs=graphs,
        mention_adjacency=(graphs.mention_graphs[0].adjacency(), graphs.mention_graphs[1].adjacency()),
        entity_adjacency=graphs.unified.adjacency(),
        paths=_enumerate_paths(chain, graphs, config.linkpath_max_paths, seed),
        label_id=label_index(chain.label, relations),
    )


def _enumerate_paths(chain: InstanceChain, graphs: ChainGraphs, max_paths: int, seed: int) -> np.ndarray:
    ms, mo = (g.mentions for g in graphs.mention_graphs)
    offset = len(ms)
    subjects = [i for i, m in enumerate(ms) if m.entity_key == chain.subject_key]
    objects = [offset + j for j, m in enumerate(mo) if m.entity_key == chain.object_key]
    rows = []
    for key in chain.common_keys:
        in_s = [i for i, m in enumerate(ms) if m.entity_key == key]
        in_o = [offset + j for j, m in enumerate(mo) if m.entity_key == key]
        rows.extend(itertools.product(subjects, in_s, in_o, objects))
    paths = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    if paths.shape[0] > max_paths:
        keep = np.sort(np.random.default_rng(seed).choice(paths.shape[0], size=max_paths, replace=False))
        paths = paths[keep]
    return paths


# --- параметры ---


def init_params(
    kind: str,
    config: ModelConfig,
    vocab_size: int,
    n_labels: int,
    rng: np.random.Generator,
    word_table: Optional[np.ndarray] = None,
) -> ParamStore:
    if kind not in MODEL_KINDS:
        raise InputError(f"Неизвестная модель: {kind!r}; допустимо: {', '.join(MODEL_KINDS)}")
    h = config.hidden
    store = ParamStore()
    init_encoder_params(
        store, vocab_size, config.d_w, config.d_z, config.indicator_size, rng, word_table, with_lstm=kind != "cnn"
    )
    if kind == "hegcn":
        store.add("attention.w", uniform_init(rng, (4 * h, 2 * h)))
        for layer in range(config.l1):
            store.add(f"emgcn.{layer}.w", uniform_init(rng, (config.d_g, config.d_g)))
        for layer in range(config.l2):
            store.add(f"egcn.{layer}.w", uniform_init(rng, (config.d_g, config.d_g)))
        features = 12 * h
    elif kind in ("cnn", "bilstm_cnn"):
        d_in = h if kind == "cnn" else 2 * h
        for width in config.kernel_widths:
            store.add(f"cnn.w{width}.w", uniform_init(rng, (config.cnn_filters, width * d_in)))
            store.add(f"cnn.w{width}.b", uniform_init(rng, (config.cnn_filters,)))
        features = len(config.kernel_widths) * config.cnn_filters
    elif kind == "bilstm":
        features = 8 * h
    else:
        features = 16 * h
    store.add("classifier.w", uniform_init(rng, (n_labels, features)))
    store.add("classifier.b", uniform_init(rng, (n_labels,)))
    return store


def gcn_weights(tape: Tape, store: ParamStore, prefix: str, n_layers: int) -> List[Tensor]:
    return [tape.param(store, f"{prefix}.{layer}.w") for layer in range(n_layers)]


# --- блоки HEGCN ---


def mention_node_init(
    tape: Tape,
    store: ParamStore,
    H: Tensor,
    spans: Sequence[Tuple[int, int]],
    sentence_rows: Sequence[Tuple[int, int]],
) -> Tensor:
    """Начальные векторы узлов-упоминаний q = p ∥ c, по строке на упоминание.

    p = h_b ∥ h_e (первый и последний токен), c = Σ a_t h_t, где внимание
    a = softmax(tanh(pᵀW)·h_t) берётся только по токенам предложения упоминания.
    """
    if not spans:
        raise ContractError("Документ без упоминаний")
    n_total = H.shape[0]
    starts = [s for s, _ in spans]
    lasts = [e - 1 for _, e in spans]
    P = concat([take_rows(H, starts), take_rows(H, lasts)], axis=1)
    keys = tanh(matmul(P, tape.param(store, "attention.w")))
    scores = matmul(keys, transpose(H))
    mask = np.full((len(spans), n_total), ATTENTION_MASK, dtype=DTYPE)
    for row, (s0, s1) in enumerate(sentence_rows):
        mask[row, s0:s1] = 0.0
    attention = softmax(add(scores, tape.constant(mask)))
    context = matmul(attention, H)
    return concat([P, context], axis=1)


def gcn_forward(adjacency: np.ndarray, nodes: Tensor, weights: Sequence[Tensor]) -> Tensor:
    """L слоёв G ← ReLU(Â G W); ширина узлов сохраняется."""
    m = nodes.shape[0]
    if adjacency.shape != (m, m):
        raise ContractError(f"Матрица смежности {adjacency.shape} не подходит для {m} узлов")
    a_hat = nodes.tape.constant(adjacency)
    out = nodes
    for w in weights:
        if w.shape != (out.shape[1], out.shape[1]):
            raise ContractError(f"Вес GCN {w.shape} не совпадает с шириной узлов {out.shape[1]}")
        out = relu(matmul(matmul(a_hat, out), w))
    return out


def entity_node_init(mention_outputs: Sequence[Tensor], unified: UnifiedEntityGraph) -> Tensor:
    """Среднее выходов EMGCN по всем упоминаниям сущности в обоих документах."""
    sizes = [t.shape[0] for t in mention_outputs]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    averaging = np.zeros((unified.n_nodes, int(sum(sizes))), dtype=DTYPE)
    for node, members in enumerate(unified.node_mentions):
        if not members:
            raise ContractError(f"У сущности {unified.nodes[node]!r} нет упоминаний")
        for doc_index, mention in members:
            averaging[node, offsets[doc_index] + mention] = 1.0 / len(members)
    stacked = concat(list(mention_outputs), axis=0)
    return matmul(stacked.tape.constant(averaging), stacked)


def classify(tape: Tape, store: ParamStore, features: Tensor) -> Tensor:
    """Логиты W_r x + b_r; вероятности получаются softmax от них."""
    w = tape.param(store, "classifier.w")
    if features.value.ndim != 1 or features.shape[0] != w.shape[1]:
        raise ContractError(f"Вход классификатора {features.shape} не совпадает с весами {w.shape}")
    return add(matmul(w, features), tape.param(store, "classifier.b"))


def _mention_vectors(H: Tensor, inputs: EncoderInput, graphs: ChainGraphs) -> Tensor:
    """Вектор упоминания h_b ∥ h_e; сначала упоминания doc_s, затем doc_o."""
    starts, lasts = [], []
    for doc_index, mg in enumerate(graphs.mention_graphs):
        for m in mg.mentions:
            start, end = inputs.global_span(doc_index, m)
            starts.append(start)
            lasts.append(end - 1)
    return concat([take_rows(H, starts), take_rows(H, lasts)], axis=1)


def _row_mean(x: Tensor, rows: Sequence[int]) -> Tensor:
    if not rows:
        raise ContractError("Пустое множество строк для усреднения")
    weights = np.zeros(x.shape[0], dtype=DTYPE)
    for r in rows:
        weights[r] += 1.0 / len(rows)
    return matmul(x.tape.constant(weights), x)


# --- прямые проходы (логиты) ---


def _encode(tape, store, prepared, config, training, rng) -> Tensor:
    x = embed_chain(tape, store, prepared.inputs, config.dropout, training, rng)
    return encode_chain(tape, store, x, prepared.inputs).H


def hegcn_logits(
    tape: Tape,
    store: ParamStore,
    prepared: PreparedInstance,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    H = _encode(tape, store, prepared, config, training, rng)
    inputs, graphs = prepared.inputs, prepared.graphs
    emgcn = gcn_weights(tape, store, "emgcn", config.l1)
    outputs = []
    for doc_index, mg in enumerate(graphs.mention_graphs):
        spans = [inputs.global_span(doc_index, m) for m in mg.mentions]
        rows = [inputs.sentence_rows_of(doc_index, m) for m in mg.mentions]
        q = mention_node_init(tape, store, H, spans, rows)
        outputs.append(gcn_forward(prepared.mention_adjacency[doc_index], q, emgcn))
    entities = entity_node_init(outputs, graphs.unified)
    entities = gcn_forward(prepared.entity_adjacency, entities, gcn_weights(tape, store, "egcn", config.l2))
    subject = take_rows(entities, graphs.unified.index_of(prepared.chain.subject_key))
    obj = take_rows(entities, graphs.unified.index_of(prepared.chain.object_key))
    features = dropout(concat([subject, obj]), config.dropout, training, rng)
    return classify(tape, store, features)


def conv_features(tape: Tape, store: ParamStore, x: Tensor, config: ModelConfig) -> Tensor:
    """tanh по каждому окну свёртки, затем max-pooling по времени; ширины склеиваются."""
    pooled = []
    for width in config.kernel_widths:
        fmap = conv1d(x, tape.param(store, f"cnn.w{width}.w"), tape.param(store, f"cnn.w{width}.b"), width)
        pooled.append(max_rows(tanh(fmap)))
    return concat(pooled)


def cnn_logits(tape, store, prepared, config, training=False, rng=None) -> Tensor:
    x = embed_chain(tape, store, prepared.inputs, config.dropout, training, rng)
    features = dropout(conv_features(tape, store, x, config), config.dropout, training, rng)
    return classify(tape, store, features)


def bilstm_cnn_logits(tape, store, prepared, config, training=False, rng=None) -> Tensor:
    H = _encode(tape, store, prepared, config, training, rng)
    features = dropout(conv_features(tape, store, H, config), config.dropout, training, rng)
    return classify(tape, store, features)


def bilstm_logits(tape, store, prepared, config, training=False, rng=None) -> Tensor:
    H = _encode(tape, store, prepared, config, training, rng)
    vectors = _mention_vectors(H, prepared.inputs, prepared.graphs)
    keys = [m.entity_key for mg in prepared.graphs.mention_graphs for m in mg.mentions]
    subject = _row_mean(vectors, [i for i, k in enumerate(keys) if k == prepared.chain.subject_key])
    obj = _row_mean(vectors, [i for i, k in enumerate(keys) if k == prepared.chain.object_key])
    features = dropout(concat([subject, obj]), config.dropout, training, rng)
    return classify(tape, store, features)


def linkpath_logits(tape, store, prepared, config, training=False, rng=None) -> Tensor:
    if prepared.paths.shape[0] == 0:
        raise ContractError("У экземпляра нет ни одного пути субъект-общая-объект")
    H = _encode(tape, store, prepared, config, training, rng)
    vectors = _mention_vectors(H, prepared.inputs, prepared.graphs)
    slots = [take_rows(vectors, prepared.paths[:, k]) for k in range(4)]
    path_matrix = concat(slots, axis=1)
    features = _row_mean(path_matrix, list(range(path_matrix.shape[0])))
    features = dropout(features, config.dropout, training, rng)
    return classify(tape, store, features)


LogitsFn = Callable[..., Tensor]

LOGITS: Dict[str, LogitsFn] = {
    "hegcn": hegcn_logits,
    "cnn": cnn_logits,
    "bilstm": bilstm_logits,
    "bilstm_cnn": bilstm_cnn_logits,
    "linkpath": linkpath_logits,
}


def forward_logits(
    kind: str,
    tape: Tape,
    store: ParamStore,
    prepared: PreparedInstance,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    try:
        fn = LOGITS[kind]
    except KeyError:
        raise InputError(f"Неизвестная модель: {kind!r}; допустимо: {', '.join(MODEL_KINDS)}") from None
    return fn(tape, store, prepared, config, training, rng)


def predict_proba(kind: str, store: ParamStore, prepared: PreparedInstance, config: ModelConfig) -> np.ndarray:
    tape = Tape()
    return softmax(forward_logits(kind, tape, store, prepared, config)).value


def hegcn_forward(store: ParamStore, prepared: PreparedInstance, config: ModelConfig) -> np.ndarray:
    return predict_proba("hegcn", store, prepared, config)


def cnn_forward(store: ParamStore, prepared: PreparedInstance, config: ModelConfig) -> np.ndarray:
    return predict_proba("cnn", store, prepared, config)


def bilstm_baseline_forward(store: ParamStore, prepared: PreparedInstance, config: ModelConfig) -> np.ndarray:
    return predict_proba("bilstm", store, prepared, config)


def bilstm_cnn_forward(store: ParamStore, prepared: PreparedInstance, config: ModelConfig) -> np.ndarray:
    return predict_proba("bilstm_cnn", store, prepared, config)


def linkpath_forward(store: ParamStore, prepared: PreparedInstance, config: ModelConfig) -> np.ndarray:
    return predict_proba("linkpath", store, prepared, config)

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, fields, replace
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Set, Tuple

import numpy as np

from .corpus import Document, InstanceChain, Mention
from .errors import ContractError, InputError


EDGE_TYPES = ("emg1", "emg2", "emg3", "eg1", "eg2")
EMG2_WIRINGS = ("pairwise", "chain")

Edge = Tuple[int, int]
Edges = Mapping[Edge, FrozenSet[str]]


@dataclass(frozen=True)
class EdgeToggles:
    emg1: bool = True
    emg2: bool = True
    emg3: bool = True
    eg1: bool = True
    eg2: bool = True

    @classmethod
    def without(cls, names: Iterable[str]) -> "EdgeToggles":
        disabled = {_edge_name(n) for n in names}
        return cls(**{name: name not in disabled for name in EDGE_TYPES})

    @classmethod
    def all_off(cls) -> "EdgeToggles":
        return cls.without(EDGE_TYPES)

    def disable(self, name: str) -> "EdgeToggles":
        return replace(self, **{_edge_name(name): False})

    def disabled(self) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(self) if not getattr(self, f.name))

    def label(self) -> str:
        off = self.disabled()
        return "full" if not off else "-" + ",-".join(off)


def _edge_name(name: str) -> str:
    key = str(name).strip().lower().replace("_", "").replace(" ", "")
    if key not in EDGE_TYPES:
        raise InputError(f"Неизвестный тип рёбер: {name!r}; допустимо: {', '.join(EDGE_TYPES)}")
    return key


@dataclass(frozen=True)
class MentionGraph:
    doc_id: str
    mentions: Tuple[Mention, ...]
    edges: Edges

    @property
    def n_nodes(self) -> int:
        return len(self.mentions)

    def adjacency(self) -> np.ndarray:
        return normalize_adjacency(self.edges, self.n_nodes)


@dataclass(frozen=True)
class EntityGraph:
    doc_id: str
    nodes: Tuple[str, ...]
    edges: Edges
    node_mentions: Tuple[Tuple[int, ...], ...]


@dataclass(frozen=True)
class UnifiedEntityGraph:
    nodes: Tuple[str, ...]
    edges: Edges
    # для каждого узла: пары (номер документа, номер упоминания в его графе упоминаний)
    node_mentions: Tuple[Tuple[Tuple[int, int], ...], ...]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def index_of(self, key: str) -> int:
        try:
            return self.nodes.index(key)
        except ValueError:
            raise ContractError(f"Сущность {key!r} отсутствует в объединённом графе") from None

    def adjacency(self) -> np.ndarray:
        return normalize_adjacency(self.edges, self.n_nodes)


@dataclass(frozen=True)
class ChainGraphs:
    mention_graphs: Tuple[MentionGraph, MentionGraph]
    entity_graphs: Tuple[EntityGraph, EntityGraph]
    unified: UnifiedEntityGraph


def _add_edge(edges: Dict[Edge, Set[str]], i: int, j: int, kind: str) -> None:
    if i == j:
        return
    edges.setdefault((min(i, j), max(i, j)), set()).add(kind)


def _freeze(edges: Dict[Edge, Set[str]]) -> Dict[Edge, FrozenSet[str]]:
    return {key: frozenset(edges[key]) for key in sorted(edges)}


def _sorted_mentions(doc: Document, mentions: Sequence[Mention]) -> Tuple[Mention, ...]:
    if any(m.doc_id != doc.id for m in mentions):
        raise ContractError(f"Упоминания не принадлежат документу {doc.id}")
    return tuple(sorted(mentions, key=lambda m: (m.start, m.end)))


def build_mention_graph(
    doc: Document,
    mentions: Sequence[Mention],
    toggles: EdgeToggles = EdgeToggles(),
    emg2_wiring: str = "pairwise",
) -> MentionGraph:
    if emg2_wiring not in EMG2_WIRINGS:
        raise InputError(f"Неизвестная схема рёбер EMG2: {emg2_wiring!r}")
    ordered = _sorted_mentions(doc, mentions)
    sentences = [doc.sentence_of(m.start) for m in ordered]
    edges: Dict[Edge, Set[str]] = {}
    n = len(ordered)

    if toggles.emg1:
        for i in range(n):
            for j in range(i + 1, n):
                if sentences[i] == sentences[j]:
                    _add_edge(edges, i, j, "emg1")
    if toggles.emg2:
        last_seen: Dict[str, int] = {}
        for j, m in enumerate(ordered):
            if emg2_wiring == "chain":
                if m.entity_key in last_seen:
                    _add_edge(edges, last_seen[m.entity_key], j, "emg2")
                last_seen[m.entity_key] = j
            else:
                for i in range(j):
                    if ordered[i].entity_key == m.entity_key:
                        _add_edge(edges, i, j, "emg2")
    if toggles.emg3:
        for i in range(n - 1):
            _add_edge(edges, i, i + 1, "emg3")

    return MentionGraph(doc_id=doc.id, mentions=ordered, edges=_freeze(edges))


def build_entity_graph(
    doc: Document,
    mentions: Sequence[Mention],
    toggles: EdgeToggles = EdgeToggles(),
) -> EntityGraph:
    ordered = _sorted_mentions(doc, mentions)
    nodes: List[str] = []
    node_mentions: Dict[str, List[int]] = {}
    by_sentence: Dict[int, Set[int]] = {}
    for idx, m in enumerate(ordered):
        if m.entity_key not in node_mentions:
            nodes.append(m.entity_key)
            node_mentions[m.entity_key] = []
        node_mentions[m.entity_key].append(idx)
        by_sentence.setdefault(doc.sentence_of(m.start), set()).add(nodes.index(m.entity_key))

    edges: Dict[Edge, Set[str]] = {}
    if toggles.eg1:
        for sentence in sorted(by_sentence):
            members = sorted(by_sentence[sentence])
            for a_pos, a in enumerate(members):
                for b in members[a_pos + 1 :]:
                    _add_edge(edges, a, b, "eg1")
    if toggles.eg2:
        for i in range(len(nodes) - 1):
            _add_edge(edges, i, i + 1, "eg2")

    return EntityGraph(
        doc_id=doc.id,
        nodes=tuple(nodes),
        edges=_freeze(edges),
        node_mentions=tuple(tuple(node_mentions[key]) for key in nodes),
    )


def unify_entity_graphs(g_s: EntityGraph, g_o: EntityGraph) -> UnifiedEntityGraph:
    nodes = list(g_s.nodes) + [key for key in g_o.nodes if key not in set(g_s.nodes)]
    position = {key: idx for idx, key in enumerate(nodes)}
    node_mentions: List[List[Tuple[int, int]]] = [[] for _ in nodes]
    edges: Dict[Edge, Set[str]] = {}
    for doc_index, graph in enumerate((g_s, g_o)):
        for local, key in enumerate(graph.nodes):
            node_mentions[position[key]].extend((doc_index, m) for m in graph.node_mentions[local])
        for (i, j), kinds in graph.edges.items():
            for kind in kinds:
                _add_edge(edges, position[graph.nodes[i]], position[graph.nodes[j]], kind)
    return UnifiedEntityGraph(
        nodes=tuple(nodes),
        edges=_freeze(edges),
        node_mentions=tuple(tuple(items) for items in node_mentions),
    )


def build_chain_graphs(
    chain: InstanceChain,
    toggles: EdgeToggles = EdgeToggles(),
    emg2_wiring: str = "pairwise",
) -> ChainGraphs:
    mention_graphs = []
    entity_graphs = []
    for doc_index, doc in enumerate(chain.documents):
        mentions = chain.doc_mentions(doc_index)
        mention_graphs.append(build_mention_graph(doc, mentions, toggles, emg2_wiring))
        entity_graphs.append(build_entity_graph(doc, mentions, toggles))
    unified = unify_entity_graphs(entity_graphs[0], entity_graphs[1])
    return ChainGraphs(tuple(mention_graphs), tuple(entity_graphs), unified)


def normalize_adjacency(edges: Edges | Iterable[Edge], m: int) -> np.ndarray:
    """Â = D^-1/2 (A + I) D^-1/2; степень считается вместе с петлёй."""
    m = int(m)
    if m < 1:
        raise ContractError(f"Граф без узлов: m={m}")
    a = np.eye(m, dtype=np.float64)
    for i, j in edges:
        if not (0 <= i < m and 0 <= j < m):
            raise ContractError(f"Ребро ({i}, {j}) вне графа из {m} узлов")
        a[i, j] = a[j, i] = 1.0
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def is_connected(edges: Edges | Iterable[Edge], m: int) -> bool:
    if m <= 1:
        return True
    neighbours: Dict[int, Set[int]] = {i: set() for i in range(m)}
    for i, j in edges:
        neighbours[i].add(j)
        neighbours[j].add(i)
    seen = {0}
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nxt in neighbours[node] - seen:
            seen.add(nxt)
            queue.append(nxt)
    return len(seen) == m


def to_dot(name: str, labels: Sequence[str], edges: Edges) -> str:
    lines = [f'graph "{_dot_escape(name)}" {{']
    for idx, label in enumerate(labels):
        lines.append(f'  n{idx} [label="{_dot_escape(label)}"];')
    for (i, j), kinds in edges.items():
        lines.append(f'  n{i} -- n{j} [label="{"/".join(sorted(kinds))}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def chain_graphs_to_dot(graphs: ChainGraphs, name: str) -> str:
    parts = []
    for doc_index, mg in enumerate(graphs.mention_graphs):
        labels = [f"{m.surface}[{m.start}]" for m in mg.mentions]
        parts.append(to_dot(f"{name}_emg{doc_index}", labels, mg.edges))
    parts.append(to_dot(f"{name}_eg", list(graphs.unified.nodes), graphs.unified.edges))
    return "".join(parts)


def _dot_escape(text: str) -> str:
    return str(text).replace("\\", "\\\\").replace('"', '\\"')

"""Attention-based message passing over retrieved subgraphs.

One layer, for each directed edge ``i -> j`` carrying relation row ``rho``
and an edge time:

    m_ij = W_msg (e_i + r_rho + t_ij)
    u_ij = relu((W_query e_i) . (W_key m_ij))
    alpha_.j = softmax of u over the incoming edges of j
    e_j' = sum_i alpha_ij m_ij

Nodes without incoming edges keep their previous embedding; the masked node
starts from the zero vector and is only ever written by aggregation.  A
linear decoder over the masked node's final embedding gives the entity
distribution.  The relu sits on the attention scalar itself and there is no
``sqrt(d)`` scaling.

All gradients are derived by hand (reverse mode) and checked against central
finite differences in the test suite; no autodiff framework is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embeddings import EmbeddingTable
from .store import Quadruple, TkgStore

MASK = -1

TIME_MODES = ("start", "end", "mid")


class TgnnError(ValueError):
    pass


@dataclass
class TgnnParams:
    w_msg: np.ndarray     # (d, d)
    w_query: np.ndarray   # (d, d)
    w_key: np.ndarray     # (d, d)
    decoder_w: np.ndarray # (d, n_entities)
    decoder_b: np.ndarray # (n_entities,)
    layers: int = 1

    @property
    def dim(self) -> int:
        return self.w_msg.shape[0]

    def copy(self) -> "TgnnParams":
        return TgnnParams(
            self.w_msg.copy(),
            self.w_query.copy(),
            self.w_key.copy(),
            self.decoder_w.copy(),
            self.decoder_b.copy(),
            self.layers,
        )


def init_params(d: int, n_entities: int, seed: int, layers: int = 1) -> TgnnParams:
    if d < 1 or n_entities < 1 or layers < 1:
        raise TgnnError("bad parameter shape request")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d)
    return TgnnParams(
        w_msg=rng.uniform(-scale, scale, size=(d, d)),
        w_query=rng.uniform(-scale, scale, size=(d, d)),
        w_key=rng.uniform(-scale, scale, size=(d, d)),
        decoder_w=rng.uniform(-scale, scale, size=(d, n_entities)),
        decoder_b=np.zeros(n_entities),
        layers=layers,
    )


@dataclass
class SubgraphBatch:
    """Node and edge arrays for one subgraph.

    ``nodes[i]`` is an entity id or :data:`MASK`; edges are rows
    ``(src_node, dst_node, relation_row, t_start, t_end)`` indexing into
    ``nodes`` and into the embedding table.
    """

    nodes: np.ndarray
    edges: np.ndarray
    in_edges: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 5)
        n = len(self.nodes)
        if self.edges.size:
            endpoints = self.edges[:, :2]
            if endpoints.min() < 0 or endpoints.max() >= n:
                raise TgnnError("edge endpoint outside node list")
        grouped: list[list[int]] = [[] for _ in range(n)]
        for edge_id, dst in enumerate(self.edges[:, 1]):
            grouped[dst].append(edge_id)
        self.in_edges = [np.asarray(g, dtype=np.int64) for g in grouped]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def mask_index(self) -> int:
        positions = np.flatnonzero(self.nodes == MASK)
        if len(positions) != 1:
            raise TgnnError(f"expected exactly one masked node, found {len(positions)}")
        return int(positions[0])


def message(
    source: np.ndarray, relation: np.ndarray, time: np.ndarray, params: TgnnParams
) -> np.ndarray:
    """Single edge message ``W_msg (e + r + t)``."""
    return params.w_msg @ (source + relation + time)


def attention_weights(
    query: np.ndarray, messages: Sequence[np.ndarray], params: TgnnParams
) -> np.ndarray:
    """Attention of one query vector over candidate messages.

    Returns the softmax of ``relu((W_query q) . (W_key m_i))``; when every
    score is clipped to zero this degrades to the uniform distribution.
    """
    if not len(messages):
        raise TgnnError("attention needs at least one message")
    transformed_query = params.w_query @ query
    u = np.array([max(0.0, transformed_query @ (params.w_key @ m)) for m in messages])
    shifted = np.exp(u - u.max())
    return shifted / shifted.sum()


def _edge_times(batch: SubgraphBatch, table: EmbeddingTable, time_mode: str) -> np.ndarray:
    if time_mode not in TIME_MODES:
        raise TgnnError(f"unknown time mode {time_mode!r}")
    starts, ends = batch.edges[:, 3], batch.edges[:, 4]
    if time_mode == "start":
        return table.time[starts]
    if time_mode == "end":
        return table.time[ends]
    return 0.5 * (table.time[starts] + table.time[ends])


def _layer_inputs(batch: SubgraphBatch, table: EmbeddingTable) -> np.ndarray:
    base = np.zeros((batch.n_nodes, table.dim))
    real = batch.nodes != MASK
    base[real] = table.entity[batch.nodes[real]]
    return base


@dataclass
class _LayerCache:
    x: np.ndarray        # layer input, (N, d)
    summed: np.ndarray   # e + r + t per edge, (E, d)
    messages: np.ndarray # (E, d)
    queries: np.ndarray  # (E, d)
    keys: np.ndarray     # (E, d)
    z: np.ndarray        # raw attention scalars, (E,)
    alpha: np.ndarray    # normalised weights aligned with edges, (E,)


def _forward_layer(
    batch: SubgraphBatch, x: np.ndarray, table: EmbeddingTable,
    params: TgnnParams, time_mode: str,
) -> tuple[np.ndarray, _LayerCache]:
    n_edges = len(batch.edges)
    d = table.dim
    if n_edges == 0:
        empty = np.zeros((0, d))
        cache = _LayerCache(x, empty, empty, empty, empty, np.zeros(0), np.zeros(0))
        return x.copy(), cache
    src = batch.edges[:, 0]
    rel = batch.edges[:, 2]
    summed = x[src] + table.relation[rel] + _edge_times(batch, table, time_mode)
    messages_ = summed @ params.w_msg.T
    queries = x[src] @ params.w_query.T
    keys = messages_ @ params.w_key.T
    z = np.einsum("ed,ed->e", queries, keys)
    u = np.maximum(z, 0.0)

    y = x.copy()
    alpha = np.zeros(n_edges)
    for node, incoming in enumerate(batch.in_edges):
        if len(incoming) == 0:
            continue
        shifted = np.exp(u[incoming] - u[incoming].max())
        weights = shifted / shifted.sum()
        alpha[incoming] = weights
        y[node] = weights @ messages_[incoming]
    return y, _LayerCache(x, summed, messages_, queries, keys, z, alpha)


def forward(
    batch: SubgraphBatch,
    table: EmbeddingTable,
    params: TgnnParams,
    time_mode: str = "start",
) -> np.ndarray:
    """Final node embeddings after ``params.layers`` rounds of aggregation."""
    y, _ = _forward_with_caches(batch, table, params, time_mode)
    return y


def _forward_with_caches(
    batch: SubgraphBatch, table: EmbeddingTable, params: TgnnParams, time_mode: str
) -> tuple[np.ndarray, list[_LayerCache]]:
    x = _layer_inputs(batch, table)
    caches: list[_LayerCache] = []
    for _ in range(params.layers):
        x, cache = _forward_layer(batch, x, table, params, time_mode)
        caches.append(cache)
    return x, caches


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def mask_predict(
    batch: SubgraphBatch,
    table: EmbeddingTable,
    params: TgnnParams,
    time_mode: str = "start",
) -> np.ndarray:
    """Entity distribution decoded from the masked node's final embedding."""
    final = forward(batch, table, params, time_mode)
    logits = final[batch.mask_index()] @ params.decoder_w + params.decoder_b
    return _softmax(logits)


def masked_loss(
    batch: SubgraphBatch,
    table: EmbeddingTable,
    params: TgnnParams,
    target: int,
    time_mode: str = "start",
) -> float:
    final, _ = _forward_with_caches(batch, table, params, time_mode)
    logits = final[batch.mask_index()] @ params.decoder_w + params.decoder_b
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[target])


@dataclass
class TgnnGradients:
    w_msg: np.ndarray
    w_query: np.ndarray
    w_key: np.ndarray
    decoder_w: np.ndarray
    decoder_b: np.ndarray
    entity: np.ndarray
    relation: np.ndarray
    time: np.ndarray

    def scaled(self, factor: float) -> "TgnnGradients":
        return TgnnGradients(*(getattr(self, f) * factor for f in _GRADIENT_FIELDS))

    def add_(self, other: "TgnnGradients") -> None:
        for name in _GRADIENT_FIELDS:
            getattr(self, name).__iadd__(getattr(other, name))


_GRADIENT_FIELDS = (
    "w_msg", "w_query", "w_key", "decoder_w", "decoder_b", "entity", "relation", "time"
)


def _zero_gradients(table: EmbeddingTable, params: TgnnParams) -> TgnnGradients:
    return TgnnGradients(
        np.zeros_like(params.w_msg),
        np.zeros_like(params.w_query),
        np.zeros_like(params.w_key),
        np.zeros_like(params.decoder_w),
        np.zeros_like(params.decoder_b),
        np.zeros_like(table.entity),
        np.zeros_like(table.relation),
        np.zeros_like(table.time),
    )


def _backward_layer(
    batch: SubgraphBatch,
    cache: _LayerCache,
    d_out: np.ndarray,
    table: EmbeddingTable,
    params: TgnnParams,
    grads: TgnnGradients,
    time_mode: str,
) -> np.ndarray:
    """Backpropagate one layer; returns the gradient wrt the layer input."""
    d_x = np.zeros_like(cache.x)
    n_edges = len(batch.edges)
    if n_edges == 0:
        return d_out.copy()
    src = batch.edges[:, 0]
    rel = batch.edges[:, 2]
    starts, ends = batch.edges[:, 3], batch.edges[:, 4]

    d_messages = np.zeros_like(cache.messages)
    d_u = np.zeros(n_edges)
    for node, incoming in enumerate(batch.in_edges):
        d_node = d_out[node]
        if len(incoming) == 0:
            d_x[node] += d_node
            continue
        weights = cache.alpha[incoming]
        d_alpha = cache.messages[incoming] @ d_node
        d_messages[incoming] += weights[:, None] * d_node[None, :]
        d_u[incoming] = weights * (d_alpha - weights @ d_alpha)

    d_z = d_u * (cache.z > 0.0)
    d_queries = d_z[:, None] * cache.keys
    d_keys = d_z[:, None] * cache.queries

    grads.w_query += d_queries.T @ cache.x[src]
    np.add.at(d_x, src, d_queries @ params.w_query)

    grads.w_key += d_keys.T @ cache.messages
    d_messages += d_keys @ params.w_key

    grads.w_msg += d_messages.T @ cache.summed
    d_summed = d_messages @ params.w_msg

    np.add.at(d_x, src, d_summed)
    np.add.at(grads.relation, rel, d_summed)
    if time_mode == "start":
        np.add.at(grads.time, starts, d_summed)
    elif time_mode == "end":
        np.add.at(grads.time, ends, d_summed)
    else:
        np.add.at(grads.time, starts, 0.5 * d_summed)
        np.add.at(grads.time, ends, 0.5 * d_summed)
    return d_x


def gradients(
    batch: SubgraphBatch,
    table: EmbeddingTable,
    params: TgnnParams,
    target: int,
    time_mode: str = "start",
) -> tuple[float, TgnnGradients]:
    """Cross-entropy loss of the masked prediction and its full gradient,
    covering the three projection matrices, the decoder, and every embedding
    row the subgraph touches."""
    final, caches = _forward_with_caches(batch, table, params, time_mode)
    mask_idx = batch.mask_index()
    logits = final[mask_idx] @ params.decoder_w + params.decoder_b
    shifted = logits - logits.max()
    log_norm = np.log(np.exp(shifted).sum())
    loss = float(log_norm - shifted[target])
    probs = np.exp(shifted - log_norm)

    grads = _zero_gradients(table, params)
    d_logits = probs.copy()
    d_logits[target] -= 1.0
    grads.decoder_w += np.outer(final[mask_idx], d_logits)
    grads.decoder_b += d_logits

    d_nodes = np.zeros_like(final)
    d_nodes[mask_idx] = params.decoder_w @ d_logits
    for cache in reversed(caches):
        d_nodes = _backward_layer(batch, cache, d_nodes, table, params, grads, time_mode)

    real = batch.nodes != MASK
    np.add.at(grads.entity, batch.nodes[real], d_nodes[real])
    return loss, grads


# ---------------------------------------------------------------------------
# subgraph construction
# ---------------------------------------------------------------------------

def batch_from_facts(
    facts: Sequence[Quadruple], n_relations: int
) -> tuple[SubgraphBatch, dict[int, int]]:
    """Mask-free batch over the entities of ``facts``; each fact contributes
    its forward and inverse edge.  Also returns entity id -> node index."""
    if not facts:
        raise TgnnError("cannot build a batch from zero facts")
    node_of: dict[int, int] = {}
    nodes: list[int] = []
    for fact in facts:
        for entity in (fact.subject, fact.object):
            if entity not in node_of:
                node_of[entity] = len(nodes)
                nodes.append(entity)
    edges = _fact_edges(facts, node_of, n_relations)
    return SubgraphBatch(np.array(nodes), np.array(edges)), node_of


def _fact_edges(
    facts: Iterable[Quadruple], node_of: Mapping[int, int], n_relations: int
) -> list[list[int]]:
    edges = []
    for fact in facts:
        s, o = node_of[fact.subject], node_of[fact.object]
        edges.append([s, o, fact.relation, fact.t_start, fact.t_end])
        edges.append([o, s, n_relations + fact.relation, fact.t_start, fact.t_end])
    return edges


def build_query_subgraph(
    store: TkgStore,
    table: EmbeddingTable,
    fact: Quadruple,
    mask_object: bool,
    rng: np.random.Generator,
    cap_edges: int = 64,
) -> tuple[SubgraphBatch, int]:
    """Neighbourhood subgraph for one masked query.

    The unmasked entity's 1-hop facts are included (uniformly subsampled when
    they would exceed ``cap_edges`` directed edges) plus the two query edges
    joining the anchor to the masked node.  Returns the batch and the target
    entity id.
    """
    anchor = fact.subject if mask_object else fact.object
    target = fact.object if mask_object else fact.subject
    neighbour_ids = list(store.fact_ids_by_entity(anchor))
    max_facts = max(0, cap_edges // 2)
    if len(neighbour_ids) > max_facts:
        chosen = rng.choice(len(neighbour_ids), size=max_facts, replace=False)
        neighbour_ids = [neighbour_ids[i] for i in sorted(chosen)]

    node_of: dict[int, int] = {anchor: 0}
    nodes: list[int] = [anchor, MASK]
    mask_idx = 1
    for fact_id in neighbour_ids:
        neighbour = store.facts[fact_id]
        for entity in (neighbour.subject, neighbour.object):
            if entity not in node_of:
                node_of[entity] = len(nodes)
                nodes.append(entity)

    n_rel = table.n_relations
    edges = _fact_edges((store.facts[i] for i in neighbour_ids), node_of, n_rel)
    anchor_idx = node_of[anchor]
    if mask_object:
        edges.append([anchor_idx, mask_idx, fact.relation, fact.t_start, fact.t_end])
        edges.append([mask_idx, anchor_idx, n_rel + fact.relation, fact.t_start, fact.t_end])
    else:
        edges.append([mask_idx, anchor_idx, fact.relation, fact.t_start, fact.t_end])
        edges.append([anchor_idx, mask_idx, n_rel + fact.relation, fact.t_start, fact.t_end])
    return SubgraphBatch(np.array(nodes), np.array(edges)), target


# ---------------------------------------------------------------------------
# pre-training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TgnnPretrainConfig:
    learning_rate: float = 3e-4
    epochs: int = 4
    batch_size: int = 8
    seed: int = 0
    cap_edges: int = 64
    freeze_table: bool = False
    time_mode: str = "start"
    max_steps: int | None = None


def pretrain(
    store: TkgStore,
    table: EmbeddingTable,
    params: TgnnParams,
    config: TgnnPretrainConfig,
    fact_indices: Sequence[int] | None = None,
) -> tuple[EmbeddingTable, TgnnParams, list[float]]:
    """Masked-entity pre-training over both directions of every fact.

    Each epoch visits every (fact, direction) query once in a seeded random
    order; the reported per-epoch loss is the sum of per-query cross
    entropies accumulated before the corresponding update.
    """
    if config.batch_size < 1 or config.epochs < 0:
        raise TgnnError("bad pretraining config")
    table = table.copy()
    params = params.copy()
    fact_ids = list(fact_indices) if fact_indices is not None else list(range(len(store.facts)))
    if not fact_ids:
        raise TgnnError("no facts to train on")
    queries = [(fid, mask_object) for fid in fact_ids for mask_object in (True, False)]
    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    steps = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(queries))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            if config.max_steps is not None and steps >= config.max_steps:
                break
            chunk = order[lo : lo + config.batch_size]
            accum = _zero_gradients(table, params)
            for query_idx in chunk:
                fact_id, mask_object = queries[query_idx]
                batch, target = build_query_subgraph(
                    store, table, store.facts[fact_id], mask_object, rng, config.cap_edges
                )
                loss, grads = gradients(batch, table, params, target, config.time_mode)
                total += loss
                accum.add_(grads)
            step = config.learning_rate / len(chunk)
            params.w_msg -= step * accum.w_msg
            params.w_query -= step * accum.w_query
            params.w_key -= step * accum.w_key
            params.decoder_w -= step * accum.decoder_w
            params.decoder_b -= step * accum.decoder_b
            if not config.freeze_table:
                table.entity -= step * accum.entity
                table.relation -= step * accum.relation
                table.time -= step * accum.time
            steps += 1
        losses.append(total)
    return table, params, losses


def evaluate_masked(
    store: TkgStore,
    table: EmbeddingTable,
    params: TgnnParams,
    facts: Sequence[Quadruple],
    config: TgnnPretrainConfig,
) -> list[int]:
    """Pessimistic 1-based rank of the answer entity for both directions of
    each held-out fact, with subgraphs drawn from ``store`` only."""
    rng = np.random.default_rng(config.seed)
    ranks: list[int] = []
    for fact in facts:
        for mask_object in (True, False):
            batch, target = build_query_subgraph(
                store, table, fact, mask_object, rng, config.cap_edges
            )
            probs = mask_predict(batch, table, params, config.time_mode)
            others = np.arange(len(probs)) != target
            ranks.append(1 + int(np.sum(probs[others] >= probs[target])))
    return ranks


def encode_entities(
    facts: Sequence[Quadruple],
    table: EmbeddingTable,
    params: TgnnParams,
    time_mode: str = "start",
) -> dict[int, np.ndarray]:
    """Entity id -> final-layer embedding for the subgraph over ``facts``."""
    batch, node_of = batch_from_facts(facts, table.n_relations)
    final = forward(batch, table, params, time_mode)
    return {entity: final[idx] for entity, idx in node_of.items()}

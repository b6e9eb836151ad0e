import numpy as np
import pytest

from tempkgqa import tgnn
from tempkgqa.embeddings import init_random
from tempkgqa.tgnn import (
    MASK,
    SubgraphBatch,
    TgnnError,
    TgnnParams,
    TgnnPretrainConfig,
    attention_weights,
    batch_from_facts,
    build_query_subgraph,
    encode_entities,
    evaluate_masked,
    forward,
    gradients,
    init_params,
    mask_predict,
    masked_loss,
    message,
    pretrain,
)

from conftest import build_store
from gradcheck import fd_gradient, relative_error

N_ENTITIES, N_RELATIONS, N_TIMES, D = 6, 3, 4, 6


def random_world(seed):
    rng = np.random.default_rng(seed)
    table = init_random(N_ENTITIES, N_RELATIONS, N_TIMES, D, seed)
    params = init_params(D, N_ENTITIES, seed + 1)
    return rng, table, params


def random_batch(rng, n_nodes=8, n_edges=12):
    """Random subgraph with one masked node that has at least one in-edge."""
    nodes = rng.integers(0, N_ENTITIES, size=n_nodes)
    mask_idx = int(rng.integers(0, n_nodes))
    nodes[mask_idx] = MASK
    edges = []
    for _ in range(n_edges - 1):
        src, dst = rng.integers(0, n_nodes, size=2)
        start, end = sorted(rng.integers(0, N_TIMES, size=2))
        edges.append([src, dst, rng.integers(0, 2 * N_RELATIONS), start, end])
    src = int(rng.integers(0, n_nodes))
    edges.append([src, mask_idx, rng.integers(0, 2 * N_RELATIONS), 0, N_TIMES - 1])
    return SubgraphBatch(np.array(nodes), np.array(edges))


class TestMessage:
    def test_matches_manual_product(self):
        _, table, params = random_world(0)
        out = message(table.entity[0], table.relation[1], table.time[2], params)
        expected = params.w_msg @ (table.entity[0] + table.relation[1] + table.time[2])
        assert np.allclose(out, expected)


class TestAttention:
    def test_distribution_properties(self):
        rng, table, params = random_world(1)
        msgs = [rng.normal(size=D) for _ in range(5)]
        weights = attention_weights(rng.normal(size=D), msgs, params)
        assert weights.shape == (5,)
        assert np.all(weights > 0)
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_all_clipped_scores_become_uniform(self):
        _, table, params = random_world(2)
        params.w_query[:] = 0.0  # every raw score relu-clips to zero
        weights = attention_weights(np.ones(D), [np.ones(D)] * 4, params)
        assert np.allclose(weights, 0.25)

    def test_single_message_gets_full_weight(self):
        _, _, params = random_world(3)
        assert attention_weights(np.ones(D), [np.ones(D)], params) == pytest.approx([1.0])

    def test_empty_messages_rejected(self):
        _, _, params = random_world(4)
        with pytest.raises(TgnnError):
            attention_weights(np.ones(D), [], params)


class TestBatch:
    def test_endpoint_validation(self):
        with pytest.raises(TgnnError, match="endpoint"):
            SubgraphBatch(np.array([0, 1]), np.array([[0, 2, 0, 0, 0]]))

    def test_in_edges_grouped_by_destination(self):
        batch = SubgraphBatch(
            np.array([0, 1, 2]),
            np.array([[0, 1, 0, 0, 0], [2, 1, 1, 0, 0], [1, 0, 0, 0, 0]]),
        )
        assert batch.in_edges[1].tolist() == [0, 1]
        assert batch.in_edges[0].tolist() == [2]
        assert batch.in_edges[2].tolist() == []

    def test_mask_index_requires_exactly_one(self):
        no_mask = SubgraphBatch(np.array([0, 1]), np.zeros((0, 5)))
        with pytest.raises(TgnnError, match="masked node"):
            no_mask.mask_index()
        two = SubgraphBatch(np.array([MASK, MASK]), np.zeros((0, 5)))
        with pytest.raises(TgnnError, match="masked node"):
            two.mask_index()
        one = SubgraphBatch(np.array([0, MASK]), np.zeros((0, 5)))
        assert one.mask_index() == 1


class TestForward:
    def test_isolated_nodes_keep_their_embedding(self):
        _, table, params = random_world(5)
        batch = SubgraphBatch(np.array([0, 1, 2]), np.array([[0, 1, 0, 0, 0]]))
        final = forward(batch, table, params)
        assert np.allclose(final[0], table.entity[0])
        assert np.allclose(final[2], table.entity[2])
        assert not np.allclose(final[1], table.entity[1])

    def test_masked_node_starts_from_zero(self):
        _, table, params = random_world(6)
        # mask has no in-edges, so its embedding stays the zero vector
        batch = SubgraphBatch(np.array([0, MASK]), np.array([[1, 0, 0, 0, 0]]))
        final = forward(batch, table, params)
        assert np.allclose(final[1], 0.0)

    def test_aggregation_replaces_rather_than_adds(self):
        _, table, params = random_world(7)
        batch = SubgraphBatch(np.array([0, 1]), np.array([[0, 1, 2, 1, 3]]))
        final = forward(batch, table, params)
        manual = message(table.entity[0], table.relation[2], table.time[1], params)
        assert np.allclose(final[1], manual)  # single in-edge: alpha = 1

    def test_time_modes_select_endpoint(self):
        _, table, params = random_world(8)
        batch = SubgraphBatch(np.array([0, 1]), np.array([[0, 1, 0, 1, 3]]))
        by_mode = {
            mode: forward(batch, table, params, time_mode=mode)[1]
            for mode in ("start", "end", "mid")
        }
        start_msg = message(table.entity[0], table.relation[0], table.time[1], params)
        end_msg = message(table.entity[0], table.relation[0], table.time[3], params)
        assert np.allclose(by_mode["start"], start_msg)
        assert np.allclose(by_mode["end"], end_msg)
        assert np.allclose(by_mode["mid"], 0.5 * (start_msg + end_msg))

    def test_unknown_time_mode_rejected(self):
        _, table, params = random_world(9)
        batch = SubgraphBatch(np.array([0, 1]), np.array([[0, 1, 0, 0, 0]]))
        with pytest.raises(TgnnError, match="time mode"):
            forward(batch, table, params, time_mode="middle")

    def test_two_layers_differ_from_one(self):
        _, table, params = random_world(10)
        batch = SubgraphBatch(
            np.array([0, 1, 2]), np.array([[0, 1, 0, 0, 0], [1, 2, 1, 1, 1]])
        )
        one = forward(batch, table, params)
        params.layers = 2
        two = forward(batch, table, params)
        assert not np.allclose(one[2], two[2])


class TestMaskPredict:
    def test_distribution(self):
        rng, table, params = random_world(11)
        batch = random_batch(rng)
        probs = mask_predict(batch, table, params)
        assert probs.shape == (N_ENTITIES,)
        assert np.all(probs > 0)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_loss_is_nll_of_prediction(self):
        rng, table, params = random_world(12)
        batch = random_batch(rng)
        probs = mask_predict(batch, table, params)
        for target in range(N_ENTITIES):
            loss = masked_loss(batch, table, params, target)
            assert loss == pytest.approx(-np.log(probs[target]), rel=1e-9)


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences_all_tensors(self, seed):
        rng, table, params = random_world(seed)
        batch = random_batch(rng)
        target = int(rng.integers(0, N_ENTITIES))
        loss, grads = gradients(batch, table, params, target)
        assert loss == pytest.approx(masked_loss(batch, table, params, target), rel=1e-12)
        loss_fn = lambda: masked_loss(batch, table, params, target)
        for name in ("w_msg", "w_query", "w_key", "decoder_w", "decoder_b"):
            numeric = fd_gradient(loss_fn, getattr(params, name))
            assert relative_error(getattr(grads, name), numeric) < 1e-4, name
        for name in ("entity", "relation", "time"):
            numeric = fd_gradient(loss_fn, getattr(table, name))
            assert relative_error(getattr(grads, name), numeric) < 1e-4, name

    @pytest.mark.parametrize("time_mode", ["end", "mid"])
    def test_finite_differences_other_time_modes(self, time_mode):
        rng, table, params = random_world(23)
        batch = random_batch(rng)
        target = int(rng.integers(0, N_ENTITIES))
        _, grads = gradients(batch, table, params, target, time_mode)
        loss_fn = lambda: masked_loss(batch, table, params, target, time_mode)
        numeric = fd_gradient(loss_fn, table.time)
        assert relative_error(grads.time, numeric) < 1e-4

    def test_two_layer_gradients(self):
        rng, table, params = random_world(31)
        params.layers = 2
        batch = random_batch(rng)
        target = int(rng.integers(0, N_ENTITIES))
        _, grads = gradients(batch, table, params, target)
        loss_fn = lambda: masked_loss(batch, table, params, target)
        for name in ("w_msg", "w_query", "w_key"):
            numeric = fd_gradient(loss_fn, getattr(params, name))
            assert relative_error(getattr(grads, name), numeric) < 1e-4, name
        numeric = fd_gradient(loss_fn, table.entity)
        assert relative_error(grads.entity, numeric) < 1e-4


class TestSubgraphConstruction:
    def test_batch_from_facts_layout(self, tiny_store):
        facts = tiny_store.facts[:2]
        batch, node_of = batch_from_facts(facts, len(tiny_store.relations))
        assert batch.n_nodes == len({f.subject for f in facts} | {f.object for f in facts})
        assert len(batch.edges) == 2 * len(facts)
        forward_edge, inverse_edge = batch.edges[0], batch.edges[1]
        assert forward_edge[0] == node_of[facts[0].subject]
        assert forward_edge[1] == node_of[facts[0].object]
        assert inverse_edge[2] == forward_edge[2] + len(tiny_store.relations)

    def test_batch_from_facts_rejects_empty(self):
        with pytest.raises(TgnnError):
            batch_from_facts([], 3)

    def test_query_subgraph_has_mask_and_target(self, tiny_store):
        _, table, _ = random_world(0)
        table = init_random(len(tiny_store.entities), len(tiny_store.relations),
                            len(tiny_store.times), D, 0)
        rng = np.random.default_rng(0)
        fact = tiny_store.facts[0]
        batch, target = build_query_subgraph(tiny_store, table, fact, True, rng)
        assert target == fact.object
        assert batch.nodes[1] == MASK
        assert batch.mask_index() == 1
        # the mask is reachable: its in-edges carry the query relation row
        incoming = batch.edges[batch.in_edges[1]]
        assert fact.relation in incoming[:, 2]

    def test_query_subgraph_subject_masking(self, tiny_store):
        table = init_random(len(tiny_store.entities), len(tiny_store.relations),
                            len(tiny_store.times), D, 0)
        rng = np.random.default_rng(0)
        fact = tiny_store.facts[0]
        batch, target = build_query_subgraph(tiny_store, table, fact, False, rng)
        assert target == fact.subject
        incoming = batch.edges[batch.in_edges[1]]
        assert table.n_relations + fact.relation in incoming[:, 2]

    def test_query_subgraph_respects_edge_cap(self, tiny_store):
        table = init_random(len(tiny_store.entities), len(tiny_store.relations),
                            len(tiny_store.times), D, 0)
        rng = np.random.default_rng(0)
        ada_fact = tiny_store.facts[0]
        batch, _ = build_query_subgraph(tiny_store, table, ada_fact, True, rng, cap_edges=2)
        # one neighbour fact (2 directed edges) plus the two query edges
        assert len(batch.edges) == 4


class TestPretrain:
    def make_world(self):
        store = build_store([
            ("a", "r1", "b", 1990, 1991),
            ("b", "r1", "c", 1991, 1992),
            ("c", "r2", "a", 1990, 1992),
            ("a", "r2", "c", 1992, 1992),
        ])
        table = init_random(len(store.entities), len(store.relations),
                            len(store.times), D, 0)
        params = init_params(D, len(store.entities), 1)
        return store, table, params

    def test_loss_decreases(self):
        store, table, params = self.make_world()
        config = TgnnPretrainConfig(learning_rate=0.5, epochs=15, batch_size=4, seed=0)
        _, _, losses = pretrain(store, table, params, config)
        assert losses[-1] < losses[0]

    def test_freeze_table_keeps_embeddings(self):
        store, table, params = self.make_world()
        config = TgnnPretrainConfig(learning_rate=0.5, epochs=2, freeze_table=True)
        trained_table, trained_params, _ = pretrain(store, table, params, config)
        assert np.array_equal(trained_table.entity, table.entity)
        assert not np.array_equal(trained_params.w_msg, params.w_msg)

    def test_max_steps_caps_updates(self):
        store, table, params = self.make_world()
        capped = TgnnPretrainConfig(learning_rate=0.5, epochs=3, batch_size=100, max_steps=1)
        one_epoch = TgnnPretrainConfig(learning_rate=0.5, epochs=1, batch_size=100)
        a = pretrain(store, table, params, capped)[1]
        b = pretrain(store, table, params, one_epoch)[1]
        assert np.array_equal(a.w_msg, b.w_msg)

    def test_deterministic(self):
        store, table, params = self.make_world()
        config = TgnnPretrainConfig(learning_rate=0.3, epochs=2, batch_size=3, seed=9)
        first = pretrain(store, table, params, config)
        second = pretrain(store, table, params, config)
        assert np.array_equal(first[0].entity, second[0].entity)
        assert np.array_equal(first[1].decoder_w, second[1].decoder_w)
        assert first[2] == second[2]

    def test_inputs_not_mutated(self):
        store, table, params = self.make_world()
        entity_before = table.entity.copy()
        msg_before = params.w_msg.copy()
        pretrain(store, table, params, TgnnPretrainConfig(learning_rate=0.5, epochs=1))
        assert np.array_equal(table.entity, entity_before)
        assert np.array_equal(params.w_msg, msg_before)

    def test_evaluate_masked_rank_range(self):
        store, table, params = self.make_world()
        ranks = evaluate_masked(store, table, params, store.facts[:2],
                                TgnnPretrainConfig())
        assert len(ranks) == 4
        assert all(1 <= r <= len(store.entities) for r in ranks)


class TestEncodeEntities:
    def test_covers_all_entities_of_facts(self, tiny_store):
        table = init_random(len(tiny_store.entities), len(tiny_store.relations),
                            len(tiny_store.times), D, 0)
        params = init_params(D, len(tiny_store.entities), 0)
        facts = tiny_store.facts[:3]
        encoded = encode_entities(facts, table, params)
        expected = {f.subject for f in facts} | {f.object for f in facts}
        assert set(encoded) == expected
        for vector in encoded.values():
            assert vector.shape == (D,)

    def test_deterministic(self, tiny_store):
        table = init_random(len(tiny_store.entities), len(tiny_store.relations),
                            len(tiny_store.times), D, 0)
        params = init_params(D, len(tiny_store.entities), 0)
        a = encode_entities(tiny_store.facts, table, params)
        b = encode_entities(tiny_store.facts, table, params)
        for key in a:
            assert np.array_equal(a[key], b[key])

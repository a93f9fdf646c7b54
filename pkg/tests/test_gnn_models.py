import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covertnet import dataset as D
from covertnet.errors import InvalidInputError
from covertnet.geometry import Topology
from covertnet.gnn_models import (
    PLAIN_ENCODING,
    GraphEncoding,
    LayerSpec,
    ModelSpec,
    TrainConfig,
    attention_weights,
    collate,
    gat_forward,
    gcn_forward,
    get_model,
    init_params,
    load_checkpoint,
    model_forward,
    model_zoo,
    predict,
    save_checkpoint,
    train_standalone,
)
from covertnet.tensor_core import ParamSet, grad_check
from helpers import generic_params, projected_output_loss

ZOO = ["mlp", "gcn1", "gcn2", "gcn3", "hybrid"]


def random_adjacency(rng, n, p=0.5):
    a = rng.random((n, n)) < p
    a = a | a.T
    np.fill_diagonal(a, True)
    return a


# ---------------------------------------------------------------- specs


def test_zoo_contents():
    zoo = model_zoo()
    assert {"mlp", "gcn2", "gcn3", "hybrid"} <= set(zoo)
    assert [l.kind.value for l in zoo["gcn2"].layers] == ["gcn", "gcn", "dense"]
    assert [l.kind.value for l in zoo["hybrid"].layers] == ["gcn", "gat", "dense"]
    assert not zoo["mlp"].uses_message_passing
    for spec in zoo.values():
        assert spec.in_dim == 2 and spec.layers[-1].out_dim == 1
        assert spec.layers[-1].activation == "identity"
        for a, b in zip(spec.layers, spec.layers[1:]):
            assert a.out_dim == b.in_dim


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        ModelSpec("x", (LayerSpec("gcn", 2, 4), LayerSpec("dense", 5, 1)))
    with pytest.raises(InvalidInputError):
        ModelSpec("x", (LayerSpec("dense", 2, 3),))
    with pytest.raises(InvalidInputError):
        LayerSpec("dense", 0, 1)
    with pytest.raises(InvalidInputError):
        get_model("cnn")


def test_spec_json_round_trip():
    for spec in model_zoo().values():
        assert ModelSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec


def test_init_params_glorot_and_seeded():
    spec = get_model("gcn2")
    p = init_params(spec, 3)
    assert p == init_params(spec, 3) and p != init_params(spec, 4)
    for i, layer in enumerate(spec.layers):
        bound = np.sqrt(6 / (layer.in_dim + layer.out_dim))
        assert np.abs(p[f"layer{i}.weight"]).max() <= bound
        assert not p[f"layer{i}.bias"].any()


# ---------------------------------------------------------------- gcn


def test_gcn_isolated_node_identity():
    out = gcn_forward(np.array([[2.0, 3.0]]), np.eye(2), np.array([[True]]))
    assert out.data.tolist() == [[2.0, 3.0]]


def test_gcn_two_identical_nodes():
    h = np.array([[1.0, -2.0], [1.0, -2.0]])
    out = gcn_forward(h, np.eye(2), np.ones((2, 2), bool)).data
    assert np.allclose(out, np.maximum(h, 0), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_gcn_matches_matrix_form(seed):
    rng = np.random.default_rng(seed)
    n = 3 if seed == 0 else 6
    adj = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], bool) if seed == 0 else random_adjacency(rng, n)
    H, W = rng.normal(size=(n, 4)), rng.normal(size=(4, 3))
    deg = adj.sum(1)
    ref = np.maximum(np.diag(deg**-0.5) @ adj.astype(float) @ np.diag(deg**-0.5) @ H @ W, 0)
    assert np.allclose(gcn_forward(H, W, adj).data, ref, atol=1e-12, rtol=0)

    # neighbour-sum form
    loop = np.zeros((n, 3))
    for i in range(n):
        for j in range(n):
            if adj[i, j]:
                loop[i] += (H[j] @ W) / np.sqrt(deg[i] * deg[j])
    assert np.allclose(gcn_forward(H, W, adj).data, np.maximum(loop, 0), atol=1e-12, rtol=0)


def test_gcn_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        gcn_forward(np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 2), bool))
    with pytest.raises(InvalidInputError):
        gcn_forward(np.ones((2, 2)), np.eye(2), np.array([[1, 1], [0, 1]], bool))


# ---------------------------------------------------------------- gat


def test_gat_uniform_attention_for_identical_features():
    h = np.tile([[0.3, -1.2, 2.0]], (4, 1))
    adj = np.array([[1, 1, 0, 1], [1, 1, 1, 0], [0, 1, 1, 0], [1, 0, 0, 1]], bool)
    a = attention_weights(h, adj).data
    assert np.allclose(a, adj / adj.sum(1, keepdims=True), atol=1e-15)


def test_gat_single_node():
    h = np.array([[0.5, 2.0]])
    assert gat_forward(h, np.eye(2), np.array([[True]])).data.tolist() == [[0.5, 2.0]]


def test_gat_node_without_neighbours_rejected():
    with pytest.raises(InvalidInputError):
        gat_forward(np.ones((2, 2)), np.eye(2), np.array([[1, 0], [0, 0]], bool))


@pytest.mark.parametrize("seed", range(5))
def test_gat_matches_loop_form(seed):
    rng = np.random.default_rng(seed)
    n = 5
    adj = np.ones((n, n), bool) if seed == 0 else random_adjacency(rng, n)
    H, W = rng.normal(size=(n, 3)), rng.normal(size=(3, 4))
    alpha = attention_weights(H, adj).data
    assert np.all(alpha >= 0) and np.all(alpha[~adj] == 0)
    assert np.allclose(alpha.sum(1), 1, atol=1e-12, rtol=0)
    ref = np.zeros((n, 4))
    for i in range(n):
        nbrs = np.flatnonzero(adj[i])
        s = np.array([H[i] @ H[j] for j in nbrs])
        e = np.exp(s - s.max())
        for a, j in zip(e / e.sum(), nbrs):
            ref[i] += a * (H[j] @ W)
    assert np.allclose(gat_forward(H, W, adj).data, np.maximum(ref, 0), atol=1e-12, rtol=0)


# ---------------------------------------------------------------- model forward


def test_zero_params_predict_zero(small_labeled):
    for name in ZOO:
        spec = get_model(name)
        zero = init_params(spec, 0).zeros_like()
        for enc in (PLAIN_ENCODING, GraphEncoding().resolve((100, 100))):
            r = model_forward(spec, zero, small_labeled[0], enc)
            assert r.array.tolist() == [0.0] * 5


def test_forward_rejects_mismatched_params(small_labeled):
    spec = get_model("gcn2")
    p = init_params(get_model("gcn3"), 0)
    p["layer1.weight"] = np.ones((3, 3))
    with pytest.raises(InvalidInputError):
        model_forward(spec, p, small_labeled[0])


def permuted(sample, perm, policy):
    t = Topology(sample.topology.positions[perm])
    return D.GraphSample(0, t, D.message_passing_adjacency(t, policy), sample.features[perm])


@pytest.mark.parametrize("name", ["gcn2", "gcn3", "hybrid", "mlp"])
@pytest.mark.parametrize("encoding", [PLAIN_ENCODING, GraphEncoding(adjacency_policy="complete", scale=100.0), GraphEncoding(scale=100.0)])
def test_permutation_equivariance(name, encoding, small_labeled):
    spec = get_model(name)
    params = init_params(spec, 7)
    rng = np.random.default_rng(0)
    for s in small_labeled.samples[:5]:
        perm = rng.permutation(s.n)
        base = model_forward(spec, params, s, encoding).array
        moved = model_forward(spec, params, permuted(s, perm, "complete"), encoding).array
        assert np.allclose(moved, base[perm], atol=1e-10, rtol=0)


def test_batched_prediction_matches_per_sample(small_labeled):
    spec = get_model("hybrid")
    params = init_params(spec, 1)
    enc = GraphEncoding().resolve(small_labeled.area_bounds)
    preds = predict(spec, params, collate(small_labeled.samples, enc))
    for s in small_labeled.samples[:10]:
        assert np.allclose(preds[s.id], model_forward(spec, params, s, enc).array, atol=1e-12)


def test_collate_groups_by_node_count():
    a = D.generate(3, 4, seed=0).samples
    b = D.label(D.generate(2, 6, seed=1)).samples
    mixed = [D.GraphSample(i, s.topology, s.mp_adjacency, s.features) for i, s in enumerate(a + b)]
    batches = collate(mixed, GraphEncoding(scale=100.0))
    assert [len(x.ids) for x in batches] == [3, 2]
    assert sum(x.loss_weights.sum() for x in batches) == pytest.approx(1.0)


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("name", ZOO)
@pytest.mark.parametrize("encoding", ["plain", "weighted"])
def test_grad_check_zoo(name, encoding, small_labeled):
    spec = get_model(name)
    enc = PLAIN_ENCODING if encoding == "plain" else GraphEncoding().resolve((100, 100))
    batches = collate(small_labeled.samples[:3], enc)
    for seed in range(3):
        rep = grad_check(projected_output_loss(spec, batches, seed), generic_params(spec, seed))
        assert rep.passed, (seed, rep.worst)
        assert rep.kinks <= 0.02 * rep.checked


# ---------------------------------------------------------------- training


def test_learning_rate_zero_keeps_params(small_labeled):
    spec = get_model("gcn2")
    sp = D.split(small_labeled, 0.8, 0)
    res = train_standalone(spec, small_labeled, sp, TrainConfig(epochs=5, learning_rate=0.0))
    assert res.params == init_params(spec, 0)
    assert len({row["train_mae"] for row in res.curve}) == 1


def test_training_is_deterministic(small_labeled):
    sp = D.split(small_labeled, 0.8, 0)
    cfg = TrainConfig(epochs=20, seed=5)
    a = train_standalone(get_model("hybrid"), small_labeled, sp, cfg)
    b = train_standalone(get_model("hybrid"), small_labeled, sp, cfg)
    assert a.curve == b.curve and a.params == b.params


def test_training_needs_labels():
    ds = D.generate(10, 4, seed=0)
    with pytest.raises(InvalidInputError):
        train_standalone(get_model("gcn2"), ds, D.split(ds, 0.8), TrainConfig(epochs=1))


def test_overfits_a_single_sample(small_labeled):
    one = D.Dataset([small_labeled[0]], small_labeled.area_bounds, 0)
    res = train_standalone(get_model("gcn2"), one, D.SplitSpec((0,), ()), TrainConfig(epochs=3000), record_every=100)
    mean_label = one[0].label_array.mean()
    maes = [row["train_mae"] for row in res.curve]
    assert maes[-1] < 1e-2 * mean_label
    assert maes[9] < 0.1 * mean_label


def test_training_reduces_error(small_labeled):
    sp = D.split(small_labeled, 0.8, 0)
    res = train_standalone(get_model("gcn2"), small_labeled, sp, TrainConfig(epochs=300), record_every=10)
    assert res.curve[-1]["train_mae"] < 0.7 * res.curve[0]["train_mae"]
    assert res.curve[-1]["test_mae"] < res.curve[0]["test_mae"]


def test_checkpoint_round_trip(tmp_path, small_labeled):
    spec = get_model("hybrid")
    sp = D.split(small_labeled, 0.8, 0)
    res = train_standalone(spec, small_labeled, sp, TrainConfig(epochs=3))
    path = tmp_path / "m.json"
    save_checkpoint(path, spec, res.params, res.encoding, res.optimizer_state, {"note": 1})
    ck = load_checkpoint(path)
    assert ck.spec == spec and ck.params == res.params and list(ck.params) == list(res.params)
    assert ck.encoding == res.encoding and ck.config == {"note": 1}
    assert ck.optimizer_state["t"] == 3 and ck.optimizer_state["m"] == res.optimizer_state["m"]


def test_checkpoint_rejects_foreign_params(tmp_path):
    spec = get_model("gcn2")
    save_checkpoint(tmp_path / "m.json", spec, ParamSet(w=np.ones(2)), PLAIN_ENCODING)
    with pytest.raises(InvalidInputError):
        load_checkpoint(tmp_path / "m.json")


@given(st.floats(0.05, 5.0))
def test_encoding_validation(w):
    GraphEncoding(self_loop_weight=w)
    with pytest.raises(InvalidInputError):
        GraphEncoding(self_loop_weight=-w)
    with pytest.raises(ValueError):
        GraphEncoding(edge_weighting="inverse")

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_aux, tiny_model
from mmrec.errors import ColdStartError, ConfigError, DegenerateMaskError, DimensionError
from mmrec.model import (
    ModelConfig,
    SeqRecModel,
    attention,
    feed_forward,
    forward,
    multi_head_attention,
    predict_next,
    train,
)

DIMS = {"text": 3, "image": 2}


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(variant="gru4rec")
    with pytest.raises(ConfigError):
        ModelConfig(n_heads=2)
    with pytest.raises(ConfigError):
        ModelConfig(variant="bert4rec_plus", n_heads=3, d=8)
    with pytest.raises(ConfigError):
        ModelConfig(n_layers=0)


def test_embed_all_padding_zero_positions():
    m = tiny_model(use_aux=False)
    m.params["pos_emb"].value[...] = 0.0
    x, _ = m.embed(np.zeros((1, 6), dtype=np.int64), None)
    assert not x.any()


def test_embed_single_item_is_sum_of_rows(rng):
    m = tiny_model()
    aux = random_aux(12, DIMS, rng)
    seq = np.array([[0, 0, 0, 0, 0, 5]])
    x, (fused, _) = m.embed(seq, aux)
    want = m.params["item_emb"].value[5] + m.params["pos_emb"].value[5] + fused[5]
    assert np.array_equal(x[0, 5], want)


def test_embed_rejects_out_of_range_ids():
    m = tiny_model(use_aux=False)
    with pytest.raises(DimensionError):
        m.embed(np.array([[0, 0, 0, 0, 0, 14]]), None)


def test_attention_examples():
    k = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    v = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    w, _ = attention(np.zeros((2, 2)), k, v)
    assert np.allclose(w, 1 / 3)
    only = np.array([[True, False, True], [False, True, True]])
    _, out = attention(np.ones((2, 2)), k, v, only)
    assert np.array_equal(out, v[[1, 0]])
    w, _ = attention(np.eye(2), np.eye(2), np.eye(2), scale=1.0)
    assert np.allclose(w[0], [0.7310585786, 0.2689414214], atol=1e-9)
    with pytest.raises(DegenerateMaskError):
        attention(np.eye(2), np.eye(2), np.eye(2), np.ones((2, 2), dtype=bool))


def test_single_head_with_identity_output_reduces_to_attention(rng):
    h = rng.normal(size=(5, 4))
    wq, wk, wv = (rng.normal(size=(4, 4)) for _ in range(3))
    _, out = multi_head_attention(h, wq, wk, wv, np.eye(4), 1)
    _, ref = attention(h @ wq, h @ wk, h @ wv, scale=2.0)
    assert np.allclose(out, ref, atol=1e-14)


def test_feed_forward_examples(rng):
    x = np.abs(rng.normal(size=(3, 4)))
    z = np.zeros((4, 4))
    assert not feed_forward(x, z, np.zeros(4), z, np.zeros(4)).any()
    assert np.array_equal(feed_forward(x, np.eye(4), np.zeros(4), np.eye(4), np.zeros(4)), x)
    w1, w2, b1, b2 = rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), rng.normal(size=4), rng.normal(size=4)
    hand = np.maximum(x @ w1 + b1, 0.0) @ w2 + b2
    assert np.allclose(feed_forward(x, w1, b1, w2, b2), hand, atol=1e-14)


def test_block_matches_standalone_layers(rng):
    m = tiny_model("bert4rec_plus", dropout=0.0)
    aux = random_aux(12, DIMS, rng)
    seq = np.array([[3, 1, 4, 1, 5, 9]])
    _, cache = m.forward(seq, aux)
    c = cache["blocks"][0]
    p = lambda k: m.params[f"block0.{k}"].value  # noqa: E731
    w, out = multi_head_attention(c["h"][0], p("Wq"), p("Wk"), p("Wv"), p("Wo"), 2)
    assert np.allclose(w, c["att"][0], atol=1e-14)
    assert np.allclose(out, c["o"][0] @ p("Wo"), atol=1e-13)
    f = feed_forward(c["h1"][0], p("ffn.W1"), p("ffn.b1"), p("ffn.W2"), p("ffn.b2"), "gelu")
    assert np.allclose(f, c["act"][0] @ p("ffn.W2") + p("ffn.b2"), atol=1e-13)


@pytest.mark.parametrize("variant", ["sasrec_plus", "bert4rec_plus"])
def test_attention_rows_normalized(variant, rng):
    m = tiny_model(variant, dropout=0.0)
    aux = random_aux(12, DIMS, rng)
    seqs = np.array([[0, 0, 2, 3, 4, 5], [1, 2, 3, 4, 5, 6], [0, 0, 0, 0, 0, 7]])
    _, trace = forward(m, seqs, aux)
    for att in trace.attention:
        valid = seqs != 0
        sums = att.sum(-1)
        assert np.all(np.abs(sums[np.broadcast_to(valid[:, None, :], sums.shape)] - 1.0) <= 1e-9)
        assert not att[np.broadcast_to(~valid[:, None, :, None], att.shape)].any()
        if variant == "sasrec_plus":
            assert not np.triu(np.ones((6, 6), dtype=bool), 1)[None, None].repeat(3, 0).__and__(att > 0).any()


@given(st.integers(0, 10_000))
def test_sasrec_causality(seed):
    r = np.random.default_rng(seed)
    m = tiny_model(dropout=0.0, seed=seed % 7)
    aux = random_aux(12, DIMS, r)
    seq = r.integers(1, 13, size=(1, 6))
    t = int(r.integers(0, 5))
    other = seq.copy()
    other[0, t + 1 :] = r.integers(1, 13, size=5 - t)
    a, _ = m.forward(seq, aux)
    b, _ = m.forward(other, aux)
    assert np.array_equal(a[0, : t + 1], b[0, : t + 1])


def test_bert_sees_future(rng):
    m = tiny_model("bert4rec_plus", dropout=0.0)
    aux = random_aux(12, DIMS, rng)
    seq = np.array([[1, 2, 3, 4, 5, 6]])
    other = seq.copy()
    other[0, 5] = 9
    assert not np.array_equal(m.forward(seq, aux)[0][0, 0], m.forward(other, aux)[0][0, 0])


@pytest.mark.parametrize("variant", ["sasrec_plus", "bert4rec_plus"])
def test_zeroed_aux_equals_plain_model(variant, rng):
    plus = tiny_model(variant, dropout=0.0, seed=4)
    plain = tiny_model(variant, dropout=0.0, seed=4, use_aux=False)
    zero = {m: np.zeros((14, k)) for m, k in DIMS.items()}
    seqs = rng.integers(0, 13, size=(4, 6))
    a, _ = plus.forward(seqs, zero)
    b, _ = plain.forward(seqs, None)
    assert a.tobytes() == b.tobytes()


def test_tied_weights_give_symmetric_scores(rng):
    m = tiny_model()
    m.params["item_emb"].value[7] = m.params["item_emb"].value[3]
    aux = random_aux(12, DIMS, rng)
    s = m.predict([[1, 2], [5, 6, 8]], np.array([[3, 7, 1], [7, 3, 2]]), aux)
    assert s[0, 0] == s[0, 1] and s[1, 0] == s[1, 1]


def test_predict_edge_cases(rng):
    m = tiny_model()
    aux = random_aux(12, DIMS, rng)
    assert predict_next(m, [1, 2, 3], aux, np.array([4])).shape == (1,)
    s = predict_next(m, [1, 2, 3], aux, np.array([4, 9, 4]))
    assert s[0] == s[2]
    with pytest.raises(ColdStartError):
        m.predict([[]], np.array([[1, 2]]), aux)


def test_next_item_loss_at_zero_scores_is_two_ln2():
    m = tiny_model(use_aux=False, dropout=0.0)
    m.params["item_emb"].value[...] = 0.0
    loss = m.loss([[1, 2, 3, 4]], None, np.random.default_rng(0), train=False)
    assert loss == pytest.approx(2 * math.log(2), abs=1e-12)


def test_next_item_loss_saturates():
    m = tiny_model(use_aux=False, dropout=0.0, n_items=3)
    emb = m.params["item_emb"].value
    emb[...] = 0.0
    m.params["block0.ln2.b"].value[...] = 0.0
    m.params["block0.ln2.g"].value[...] = 0.0
    m.params["block0.ln2.b"].value[0, 0] = 1.0
    emb[2, 0], emb[3, 0] = 60.0, -60.0  # history [1,2] then 2: pos = 2, neg must be 3
    assert m.loss([[1, 2, 2]], None, np.random.default_rng(0), train=False) < 1e-20


def test_all_padding_batch_zero_loss_and_grads():
    m = tiny_model(use_aux=False)
    m.zero_grad()
    assert m.loss([[5], [7]], None, np.random.default_rng(0), backward=True) == 0.0
    assert all(not p.grad.any() for p in m.parameters())


def test_cloze_uniform_vocabulary_gives_ln2():
    cfg = ModelConfig(variant="bert4rec_plus", n_layers=1, n_heads=1, d=4, max_len=3, dropout=0.0, mask_prob=0.01, use_aux=False, last_item_mask=False)
    m = SeqRecModel(cfg, 2)
    m.params["item_emb"].value[1] = m.params["item_emb"].value[2]
    inputs, targets = m.cloze_batch([[1, 2]], np.random.default_rng(0))
    assert (targets != 0).sum() == 1
    assert m.loss([[1, 2]], None, np.random.default_rng(0), train=False) == pytest.approx(math.log(2), abs=1e-12)


def test_cloze_masks_at_least_one_and_appends_last_item_query():
    m = tiny_model("bert4rec_plus")
    inputs, targets = m.cloze_batch([[1, 2, 3], [4]], np.random.default_rng(2))
    assert inputs.shape == (4, 6)
    assert np.all((targets != 0).sum(1) >= 1)
    assert np.all(inputs[targets != 0] == m.mask_id)
    assert inputs[1, -1] == m.mask_id and targets[1, -1] == 3


def test_training_zero_epochs_and_determinism(small_split):
    cfg = ModelConfig(n_layers=1, d=8, max_len=8, epochs=0, use_aux=False, seed=3)
    m = SeqRecModel(cfg, small_split.catalog.n_items)
    before = m.state()
    res = train(m, small_split, n_negatives=20)
    assert res.best_epoch == 0 and all(np.array_equal(before[k], v) for k, v in m.state().items())
    runs = []
    for _ in range(2):
        mm = SeqRecModel(ModelConfig(n_layers=1, d=8, max_len=8, epochs=2, use_aux=False, seed=3), small_split.catalog.n_items)
        r = train(mm, small_split, n_negatives=20)
        runs.append((mm.state(), r.losses))
    assert runs[0][1] == runs[1][1]
    assert all(runs[0][0][k].tobytes() == runs[1][0][k].tobytes() for k in runs[0][0])
    assert len(runs[0][1]) == 2


def test_padding_row_stays_zero_after_training(small_split):
    m = SeqRecModel(ModelConfig(n_layers=1, d=8, max_len=8, epochs=1, use_aux=False), small_split.catalog.n_items)
    train(m, small_split, n_negatives=20)
    assert not m.params["item_emb"].value[0].any()

import math

import numpy as np
import pytest

from amrgen import tensor as T
from amrgen.model import ModelConfig, Seq2SeqModel, attend, copy_mixture, EncoderOutput
from amrgen.tensor import Tape, Tensor
from amrgen.tree import ActionAutomaton
from amrgen.vocab import BOS, EOS

from conftest import tiny_model


# ---------------------------------------------------------------- copy mixture
def _copy_inputs():
    rng = np.random.default_rng(2)
    p_lex = Tensor(rng.dirichlet(np.ones(6), size=2))
    attn = Tensor(rng.dirichlet(np.ones(4), size=2))
    src_ext = np.array([[4, 6, 4, 1], [7, 2, 3, 6]])
    return p_lex, attn, src_ext


def test_copy_gate_zero_is_pure_generation():
    p_lex, attn, src_ext = _copy_inputs()
    p = copy_mixture(p_lex, attn, src_ext, Tensor(np.zeros((2, 1))), n_ext=2).data
    assert np.array_equal(p[:, :6], p_lex.data)
    assert np.array_equal(p[:, 6:], np.zeros((2, 2)))


def test_copy_gate_one_is_pure_copy():
    p_lex, attn, src_ext = _copy_inputs()
    p = copy_mixture(p_lex, attn, src_ext, Tensor(np.ones((2, 1))), n_ext=2).data
    expected = np.zeros((2, 8))
    for b in range(2):
        for j, slot in enumerate(src_ext[b]):
            expected[b, slot] += attn.data[b, j]
    assert np.array_equal(p, expected)


def test_copy_duplicate_source_tokens_accumulate():
    p_lex = Tensor(np.full((1, 5), 0.2))
    attn = Tensor(np.array([[0.3, 0.7]]))
    p = copy_mixture(p_lex, attn, np.array([[4, 4]]), Tensor(np.ones((1, 1)))).data
    assert p[0, 4] == pytest.approx(1.0, abs=1e-15)
    assert p[0, :4].sum() == 0.0


def test_copy_mixture_is_distribution():
    p_lex, attn, src_ext = _copy_inputs()
    p = copy_mixture(p_lex, attn, src_ext, Tensor(np.array([[0.3], [0.9]])), n_ext=2).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-14)


# ------------------------------------------------------------------- attention
def test_attention_zero_weights_is_uniform_mean():
    states = Tensor(np.random.default_rng(0).normal(size=(1, 3, 4)))
    mask = np.array([[True, True, False]])
    w, ctx = attend(Tensor(np.ones((1, 2))), EncoderOutput(states, None, mask),
                    Tensor(np.zeros((2, 4))))
    np.testing.assert_allclose(w.data, [[0.5, 0.5, 0.0]])
    np.testing.assert_allclose(ctx.data, states.data[:, :2].mean(axis=1))


def test_attention_bilinear_scores():
    rng = np.random.default_rng(1)
    h, W, C = rng.normal(size=(1, 2)), rng.normal(size=(2, 3)), rng.normal(size=(1, 4, 3))
    w, _ = attend(Tensor(h), EncoderOutput(Tensor(C), None, np.ones((1, 4), bool)), Tensor(W))
    scores = np.array([h[0] @ W @ C[0, i] for i in range(4)])
    np.testing.assert_allclose(w.data[0], np.exp(scores) / np.exp(scores).sum(), rtol=1e-12)


# ---------------------------------------------------------------- vocabulary
def test_extended_vocabulary(vocab):
    model = tiny_model(vocab)
    ids, oov = model.extend_ids(["dog", "zebra", "quux", "zebra"])
    V = len(vocab.words)
    assert ids == [vocab.words.stoi["dog"], V, V + 1, V]
    assert oov == ["zebra", "quux"]
    assert model.target_id("zebra", oov) == V
    assert model.target_id("unseen", oov) == vocab.words.stoi["<unk>"]


# --------------------------------------------------------- uniform-init oracle
def _flatten(model):
    for name, p in model.params.items():
        p.data = np.zeros_like(p.data)
    # copy gate closed: theta = sigmoid(-50) ~ 2e-22
    model.params["lex.gate2.b"].data[:] = -50.0


def test_zero_weight_nll_equals_uniform(train_records, vocab):
    model = tiny_model(vocab)
    _flatten(model)
    recs = train_records[:5]
    batch = model.make_batch(recs)
    parse_nll, text_nll = model.joint_log_likelihood(batch)
    V = len(vocab.words)
    for i, r in enumerate(recs):
        assert text_nll.data[i] == pytest.approx((len(r["words"]) + 1) * math.log(V), rel=1e-12)
        # zero logits: uniform over the permissible actions at each step
        auto, expected = ActionAutomaton(), 0.0
        for a in r["parse_actions"]:
            expected += math.log(vocab.actions.mask_for(auto).sum())
            auto = auto.step(a)
        assert parse_nll.data[i] == pytest.approx(expected, rel=1e-12)


# ------------------------------------------------- step vs teacher forcing
def _stepwise_nll(model, rec):
    batch = model.make_batch([rec])
    enc_amr, enc_parse = model.encode_batch(batch)
    acts = model.vocab.actions
    state = model.init_state("syn", enc_amr.final, 1)
    prev, auto, parse_nll = acts.stoi[BOS], ActionAutomaton(), 0.0
    for a in rec["parse_actions"]:
        probs, _, state = model.syntax_decoder_step(state, [prev], enc_amr,
                                                    acts.mask_for(auto)[None])
        parse_nll -= math.log(probs[0, acts.stoi[a]])
        prev, auto = acts.stoi[a], auto.step(a)
    words = model.vocab.words
    finals = T.concat([enc_amr.final, enc_parse.final])
    state = model.init_state("lex", finals, 1)
    prev, text_nll = words.stoi[BOS], 0.0
    for w in rec["words"] + [EOS]:
        tgt = model.target_id(w, batch.oov[0]) if w != EOS else words.stoi[EOS]
        probs, state, _ = model.lex_decoder_step(state, [prev], enc_amr, enc_parse,
                                                 batch.src_ext, batch.n_ext)
        text_nll -= math.log(probs[0, tgt])
        prev = tgt
    return parse_nll, text_nll


def test_stepwise_matches_teacher_forced(train_records, vocab):
    model = tiny_model(vocab, seed=3)
    for rec in train_records[:3]:
        parse_nll, text_nll = model.joint_log_likelihood(model.make_batch([rec]))
        sp, st = _stepwise_nll(model, rec)
        assert parse_nll.data[0] == pytest.approx(sp, rel=1e-10)
        assert text_nll.data[0] == pytest.approx(st, rel=1e-10)


def test_batching_does_not_change_nll(train_records, vocab):
    model = tiny_model(vocab, seed=4)
    recs = train_records[:6]
    bp, bt = model.joint_log_likelihood(model.make_batch(recs))
    for i, r in enumerate(recs):
        p, t = model.joint_log_likelihood(model.make_batch([r]))
        assert bp.data[i] == pytest.approx(p.data[0], rel=1e-10)
        assert bt.data[i] == pytest.approx(t.data[0], rel=1e-10)


def test_oov_target_is_copyable(train_records, vocab):
    model = tiny_model(vocab)
    rec = dict(train_records[0])
    noun = next(t for t in rec["amr_tokens"] if t in rec["words"] and t in vocab.words)
    rec["amr_tokens"] = ["zebra" if t == noun else t for t in rec["amr_tokens"]]
    rec["words"] = ["zebra" if w == noun else w for w in rec["words"]]
    batch = model.make_batch([rec])
    V = len(vocab.words)
    # every source token outside the word vocabulary (roles, brackets too) gets a slot
    assert "zebra" in batch.oov[0]
    assert V + batch.oov[0].index("zebra") in batch.word_tgt[0]
    _, text_nll = model.joint_log_likelihood(batch)
    assert np.isfinite(text_nll.data).all()


# --------------------------------------------------------------- gradients
@pytest.mark.parametrize("task", ["joint", "baseline_s2s_copy", "amr2parse", "text2parse",
                                  "unconditional_lm"])
def test_every_parameter_receives_gradient(train_records, vocab, task):
    model = tiny_model(vocab, task)
    batch = model.make_batch(train_records[:4])
    with Tape() as tape:
        loss = model.loss(batch)
    tape.backward(loss)
    missing = [k for k, p in model.params.items() if p.grad is None or not np.any(p.grad)]
    # embeddings of tokens absent from the batch legitimately get no gradient,
    # but every matrix must
    assert [k for k in missing if not k.startswith("emb.")] == []


def test_shared_encoder_gradient_is_sum_of_paths(train_records, vocab):
    model = tiny_model(vocab, seed=5)
    batch = model.make_batch(train_records[:3])
    shared = [k for k in model.params if k.startswith("enc.src") or k == "emb.src"]

    def grads(which):
        for p in model.params.values():
            p.zero_grad()
        with Tape() as tape:
            parse_nll, text_nll = model.joint_log_likelihood(batch)
            parts = {"parse": [parse_nll], "text": [text_nll], "both": [parse_nll, text_nll]}
            tot = T.total(T.concat(parts[which]))
        tape.backward(tot)
        return {k: model.params[k].grad.copy() for k in shared}

    both, parse, text = grads("both"), grads("parse"), grads("text")
    for k in shared:
        np.testing.assert_allclose(both[k], parse[k] + text[k], rtol=1e-10, atol=1e-14)
        assert np.any(parse[k]) and np.any(text[k])


def test_training_mode_is_stochastic_eval_is_not(train_records, vocab):
    cfg = ModelConfig(task="joint", emb_size=6, hidden_size=8, gate_hidden=8)
    model = Seq2SeqModel(vocab, cfg, seed=0)
    batch = model.make_batch(train_records[:3])
    a = model.loss(batch).data
    assert model.loss(batch).data == a
    rng = np.random.default_rng(0)
    assert model.loss(batch, train=True, rng=rng).data != model.loss(batch, train=True, rng=rng).data


def test_unknown_task_rejected(vocab):
    with pytest.raises(ValueError):
        Seq2SeqModel(vocab, ModelConfig(task="nope"))

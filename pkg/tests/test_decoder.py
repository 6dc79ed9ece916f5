import itertools

import numpy as np
import pytest

from amrgen.decoder import (DecodeConfig, TaskMismatch, beam_search, first_action_distribution,
                            generate, generate_with_oracle_parse, predict_parse,
                            sample_baseline, sample_diverse, sample_parses)
from amrgen.tensor import NEG_INF, ConfigError
from amrgen.tree import TreeError, delinearize

from conftest import tiny_model

EOS_TOK = 0


def toy_table(V=3, seed=0):
    """Prefix-dependent log-probabilities, deterministic per prefix."""
    cache = {}

    def logp(prefix):
        if prefix not in cache:
            r = np.random.default_rng(abs(hash((seed,) + prefix)) % 2**32)
            z = r.normal(size=V) * 2
            cache[prefix] = z - np.log(np.exp(z).sum())
        return cache[prefix]
    return logp


def toy_step(table, forbid=()):
    def step(hyps):
        rows = []
        for h in hyps:
            row = table(tuple(h.tokens)).copy()
            for f in forbid:
                row[f] = NEG_INF
            rows.append(row)

        def advance(i, tok):
            return None, tok == EOS_TOK
        return np.array(rows), advance
    return step


def brute_force(table, V, max_len):
    """All EOS-terminated sequences up to ``max_len`` with their scores."""
    out = []
    for n in range(1, max_len + 1):
        for body in itertools.product(range(1, V), repeat=n - 1):
            seq = body + (EOS_TOK,)
            score = sum(table(seq[:k])[seq[k]] for k in range(n))
            out.append((score, list(seq)))
    return sorted(out, key=lambda x: -x[0])


@pytest.mark.parametrize("seed", range(5))
def test_exhaustive_beam_equals_brute_force(seed):
    V, L = 3, 5
    table = toy_table(V, seed)
    oracle = brute_force(table, V, L)
    hyps = beam_search(toy_step(table), None, width=10 ** 4, n_best=5, max_steps=L)
    assert [h.tokens for h in hyps] == [s for _, s in oracle[:5]]
    np.testing.assert_allclose([h.score for h in hyps], [s for s, _ in oracle[:5]], rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_width_one_is_greedy(seed):
    V, L = 4, 8
    table = toy_table(V, seed)
    h = beam_search(toy_step(table), None, width=1, n_best=1, max_steps=L)[0]
    prefix, score = (), 0.0
    for _ in range(L):
        row = table(prefix)
        tok = int(np.argmax(row))
        prefix, score = prefix + (tok,), score + row[tok]
        if tok == EOS_TOK:
            break
    assert h.tokens == list(prefix) and h.score == pytest.approx(score, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_narrow_beam_never_beats_optimum(seed):
    V, L = 3, 6
    table = toy_table(V, seed)
    best = brute_force(table, V, L)[0][0]
    for w in (1, 2, 3):
        h = beam_search(toy_step(table), None, width=w, n_best=1, max_steps=L)[0]
        if h.finished:
            assert h.score <= best + 1e-12


def test_forbidden_tokens_never_emitted():
    table = toy_table(4, 1)
    hyps = beam_search(toy_step(table, forbid=(2,)), None, width=3, n_best=3, max_steps=6)
    assert all(2 not in h.tokens for h in hyps)


def test_unfinished_fill_n_best():
    # EOS forbidden: nothing finishes, the best active hypotheses are returned
    table = toy_table(3, 2)
    hyps = beam_search(toy_step(table, forbid=(EOS_TOK,)), None, width=2, n_best=2, max_steps=3)
    assert len(hyps) == 2 and not any(h.finished for h in hyps)
    assert hyps[0].score >= hyps[1].score


def test_beam_validation():
    with pytest.raises(ConfigError):
        beam_search(toy_step(toy_table()), None, width=0, n_best=1, max_steps=3)
    with pytest.raises(ConfigError):
        beam_search(toy_step(toy_table()), None, width=1, n_best=1, max_steps=0)
    with pytest.raises(ConfigError):
        DecodeConfig(temperature=0)


# ------------------------------------------------------------ model decoding
@pytest.fixture(scope="module")
def joint(vocab):
    return tiny_model(vocab, "joint", seed=1)


def test_generate_structure(joint, train_records):
    cfg = DecodeConfig(max_syntax_steps=60, max_word_steps=30)
    out = generate(train_records[0], joint, cfg)
    assert set(out) >= {"text", "tokens", "parse", "score", "candidates"}
    assert len(out["candidates"]) == 2
    scores = [c["score"] for c in out["candidates"]]
    assert scores == sorted(scores, reverse=True)
    assert out["score"] == scores[0]
    for c in out["candidates"]:
        delinearize(c["parse"])
        assert c["score"] == pytest.approx(c["syn_score"] + c["lex_score"])


def test_predict_parse_is_tree(joint, train_records):
    acts, score = predict_parse(train_records[1], joint, DecodeConfig(max_syntax_steps=60))
    delinearize(acts)
    assert score <= 0


def test_oracle_parse_checks(vocab, joint, train_records):
    rec = train_records[0]
    out = generate_with_oracle_parse(rec, rec["parse_actions"], joint,
                                     DecodeConfig(max_word_steps=30))
    assert isinstance(out["text"], str)
    with pytest.raises(TreeError):
        generate_with_oracle_parse(rec, ["(S", ")"], joint)
    with pytest.raises(TaskMismatch):
        generate_with_oracle_parse(rec, rec["parse_actions"], tiny_model(vocab, "baseline_s2s_copy"))


def test_baseline_cannot_predict_parse(vocab, train_records):
    with pytest.raises(TaskMismatch):
        predict_parse(train_records[0], tiny_model(vocab, "baseline_s2s_copy"))


def test_sample_diverse(joint, train_records):
    cfg = DecodeConfig(num_samples=3, temperature=0.3, max_syntax_steps=60, max_word_steps=30)
    res = sample_diverse(train_records[0], joint, cfg, np.random.default_rng(0))
    assert len(res["samples"]) == 3
    for s in res["samples"]:
        delinearize(s["parse"])
    seen = [tuple(s["parse"]) for s in res["samples"]]
    assert res["duplicates"] == len(seen) - len(set(seen))
    again = sample_diverse(train_records[0], joint, cfg, np.random.default_rng(0))
    assert [s["parse"] for s in again["samples"]] == [s["parse"] for s in res["samples"]]


def test_baseline_sampling(vocab, train_records):
    model = tiny_model(vocab, "baseline_s2s_copy", seed=2)
    cfg = DecodeConfig(num_samples=2, max_word_steps=20)
    out = sample_baseline(train_records[0], model, cfg, np.random.default_rng(1))
    assert len(out) == 2 and all(s["steps"] <= 20 for s in out)


def test_sampled_parses_well_formed_under_small_cap(vocab, train_records):
    model = tiny_model(vocab, "unconditional_lm", seed=3)
    rng = np.random.default_rng(0)
    for acts in sample_parses(train_records[0], model, 30, 1.0, rng, max_steps=16):
        assert len(acts) <= 16
        delinearize(acts)


def _entropy(p):
    p = np.asarray([v for v in p if v > 0])
    return float(-(p * np.log(p)).sum())


def test_first_action_distribution_matches_sampler(vocab, train_records):
    model = tiny_model(vocab, "amr2parse", seed=5)
    model.params["syn.proj.W"].data *= 5
    dist = first_action_distribution(train_records[0], model, 1.0)
    assert sum(dist.values()) == pytest.approx(1.0, rel=1e-12)
    # sampled first actions (short rollouts) follow the same distribution
    rng = np.random.default_rng(0)
    n = 600
    firsts = [a[0] for a in sample_parses(train_records[0], model, n, 1.0, rng, max_steps=3)]
    for act, p in dist.items():
        freq = firsts.count(act) / n
        assert abs(freq - p) < 4 * np.sqrt(p * (1 - p) / n) + 1e-9


def test_temperature_sharpens(vocab, train_records):
    model = tiny_model(vocab, "amr2parse", seed=5)
    model.params["syn.proj.W"].data *= 5
    ents = [_entropy(first_action_distribution(train_records[0], model, t).values())
            for t in (0.3, 1.0, 3.0)]
    assert ents[0] < ents[1] < ents[2]


def test_small_step_budget_rejected(joint, train_records):
    with pytest.raises(ConfigError):
        sample_parses(train_records[0], joint, 1, 1.0, np.random.default_rng(0), max_steps=2)
    with pytest.raises(ConfigError):
        DecodeConfig(max_syntax_steps=2)

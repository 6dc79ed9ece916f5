"""Inference: constrained beam search, two-stage generation and sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .amr import deanonymize
from .model import DecoderState, Seq2SeqModel, TaskMismatch
from .tensor import NEG_INF, ConfigError, Tensor
from .tree import MAX_ACTIONS, ActionAutomaton, TreeError, delinearize
from .vocab import BOS, EOS

# shortest complete tree: "(X", "TAG", ")"
MIN_ACTIONS = 3


@dataclass
class Hypothesis:
    tokens: list
    state: object
    score: float
    finished: bool = False


@dataclass
class DecodeConfig:
    beam_width: int = 2
    n_parses: int = 2
    max_syntax_steps: int = 512
    max_word_steps: int = 256
    temperature: float = 0.3
    num_samples: int = 3
    length_norm: bool = False

    def __post_init__(self):
        if self.beam_width < 1 or self.n_parses < 1:
            raise ConfigError("beam width and n_parses must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.max_syntax_steps < MIN_ACTIONS:
            raise ConfigError(f"max_syntax_steps must be >= {MIN_ACTIONS}")


def _rank_key(h, length_norm):
    return h.score / max(len(h.tokens), 1) if length_norm else h.score


def beam_search(step_fn, init_state, width, n_best, max_steps, length_norm=False):
    """Beam search with a shrinking active beam.

    ``step_fn(hyps)`` returns ``(logp, advance)``: a ``[len(hyps), V]`` array of
    next-token log-probabilities (``<= NEG_INF / 2`` marks forbidden tokens)
    and a callable ``advance(i, token) -> (state, finished)``.  Finished
    hypotheses leave the beam for the k-best list, which shrinks the beam;
    search stops when ``width`` hypotheses have finished, the beam is empty,
    or ``max_steps`` is reached.  If fewer than ``n_best`` finished, the best
    unfinished beam items fill the remainder.
    """
    if max_steps < 1:
        raise ConfigError("max_steps must be >= 1")
    if width < 1:
        raise ConfigError("beam width must be >= 1")
    active = [Hypothesis([], init_state, 0.0)]
    done: list[Hypothesis] = []
    for _ in range(max_steps):
        if not active or len(done) >= width:
            break
        logp, advance = step_fn(active)
        V = logp.shape[1]
        totals = np.array([h.score for h in active])[:, None] + logp
        totals = np.where(logp > NEG_INF / 2, totals, -np.inf).ravel()
        order = np.argsort(-totals, kind="stable")
        cap = width - len(done)
        new_active = []
        for flat in order[:cap]:
            if not np.isfinite(totals[flat]):
                break
            i, tok = divmod(int(flat), V)
            state, fin = advance(i, tok)
            hyp = Hypothesis(active[i].tokens + [tok], state, float(totals[flat]), fin)
            (done if fin else new_active).append(hyp)
        active = new_active
    ranked = sorted(done, key=lambda h: -_rank_key(h, length_norm))
    if len(ranked) < n_best:
        ranked += sorted(active, key=lambda h: -_rank_key(h, length_norm))[: n_best - len(ranked)]
    return ranked[:n_best]


def _stack_states(states):
    return DecoderState([Tensor(np.concatenate([s.h[l].data for s in states]))
                         for l in range(len(states[0].h))],
                        [Tensor(np.concatenate([s.c[l].data for s in states]))
                         for l in range(len(states[0].c))])


def _safe_log(p):
    return np.log(np.maximum(p, 1e-300))


class _Decoding:
    """Encodings of one input, shared by all decoding routines."""

    def __init__(self, model: Seq2SeqModel, record):
        self.model = model
        self.record = record
        self.enc_amr = None
        if model.config.has_source:
            toks = record[model.config.source_field]
            ids = np.asarray([model.src_vocab.encode(toks)])
            self.enc_amr = model.encode(ids, np.ones(ids.shape, bool), "src")
        self.src_ext = self.oov = None
        if model.config.has_lex:
            ids, self.oov = model.extend_ids(record["amr_tokens"])
            self.src_ext = np.asarray([ids])

    # ------------------------------------------------------------- syntax
    def syntax_init(self, max_steps):
        # the automaton budget equals the step budget, so every search ends closed
        if max_steps < MIN_ACTIONS:
            raise ConfigError(f"syntax step budget must be >= {MIN_ACTIONS}")
        final = None if self.enc_amr is None else self.enc_amr.final
        return (self.model.init_state("syn", final, 1), ActionAutomaton(max_actions=max_steps))

    def syntax_step(self, hyps, temperature=None):
        m = self.model
        acts = m.vocab.actions
        bos = acts.stoi[BOS]
        states = _stack_states([h.state[0] for h in hyps])
        prev = [h.tokens[-1] if h.tokens else bos for h in hyps]
        allowed = np.stack([acts.mask_for(h.state[1]) for h in hyps])
        enc = None if self.enc_amr is None else self.enc_amr.take([0] * len(hyps))
        probs, logits, new = m.syntax_decoder_step(states, prev, enc, allowed)
        logp = np.where(allowed, _safe_log(probs), NEG_INF)

        def advance(i, tok):
            auto = hyps[i].state[1].step(acts.itos[tok])
            return (new.take([i]), auto), auto.finished

        return logp, advance, logits, allowed

    def parses(self, width, n_best, max_steps, length_norm=False):
        def step(hyps):
            logp, advance, _, _ = self.syntax_step(hyps)
            return logp, advance

        return beam_search(step, self.syntax_init(max_steps), width, n_best, max_steps, length_norm)

    def sample_parse(self, temperature, max_steps, rng):
        hyp = Hypothesis([], self.syntax_init(max_steps), 0.0)
        for _ in range(max_steps):
            logp, advance, logits, allowed = self.syntax_step([hyp])
            z = np.where(allowed[0], logits[0] / temperature, -np.inf)
            z = z - z.max()
            p = np.exp(z)
            p /= p.sum()
            tok = int(rng.choice(len(p), p=p))
            state, fin = advance(0, tok)
            hyp = Hypothesis(hyp.tokens + [tok], state, hyp.score + float(logp[0, tok]), fin)
            if fin:
                break
        return hyp

    def sample_parse_batch(self, n, temperature, max_steps, rng):
        """``n`` independent samples advanced in lockstep (one batched step per position)."""
        hyps = [Hypothesis([], self.syntax_init(max_steps), 0.0) for _ in range(n)]
        active = list(range(n))
        for _ in range(max_steps):
            if not active:
                break
            logp, advance, logits, allowed = self.syntax_step([hyps[i] for i in active])
            z = np.where(allowed, logits / temperature, -np.inf)
            p = np.exp(z - z.max(axis=1, keepdims=True))
            cdf = np.cumsum(p, axis=1)
            # u in (0, total] so a zero-probability action is never picked
            u = (1.0 - rng.random(len(active))) * cdf[:, -1]
            toks = np.minimum((cdf < u[:, None]).sum(axis=1), p.shape[1] - 1)
            still = []
            for row, i in enumerate(active):
                tok = int(toks[row])
                state, fin = advance(row, tok)
                hyps[i] = Hypothesis(hyps[i].tokens + [tok], state,
                                     hyps[i].score + float(logp[row, tok]), fin)
                if not fin:
                    still.append(i)
            active = still
        return hyps

    def actions(self, ids):
        return self.model.vocab.actions.decode(ids)

    # ------------------------------------------------------------ words
    def encode_parse(self, action_ids):
        if self.model.config.task != "joint":
            return None
        ids = np.asarray([action_ids])
        return self.model.encode(ids, np.ones(ids.shape, bool), "parse")

    def lex_init(self, enc_parse):
        finals = self.enc_amr.final
        if enc_parse is not None:
            finals = T.concat([finals, enc_parse.final])
        return self.model.init_state("lex", finals, 1)

    def lex_step(self, hyps, enc_parse):
        m = self.model
        words = m.vocab.words
        bos, eos = words.stoi[BOS], words.stoi[EOS]
        states = _stack_states([h.state for h in hyps])
        prev = [h.tokens[-1] if h.tokens else bos for h in hyps]
        k = len(hyps)
        enc_p = None if enc_parse is None else enc_parse.take([0] * k)
        probs, new, _ = m.lex_decoder_step(states, prev, self.enc_amr.take([0] * k), enc_p,
                                           np.repeat(self.src_ext, k, axis=0), len(self.oov))

        def advance(i, tok):
            return new.take([i]), tok == eos

        return probs, advance

    def realise(self, action_ids, width, max_steps, length_norm=False):
        enc_parse = self.encode_parse(action_ids)

        def step(hyps):
            probs, advance = self.lex_step(hyps, enc_parse)
            return _safe_log(probs), advance

        return beam_search(step, self.lex_init(enc_parse), width, 1, max_steps, length_norm)[0]

    def sample_words(self, temperature, max_steps, rng):
        enc_parse = None
        hyp = Hypothesis([], self.lex_init(enc_parse), 0.0)
        for _ in range(max_steps):
            probs, advance = self.lex_step([hyp], enc_parse)
            logp = _safe_log(probs[0])
            z = logp / temperature
            z = z - z.max()
            p = np.exp(z)
            p /= p.sum()
            tok = int(rng.choice(len(p), p=p))
            state, fin = advance(0, tok)
            hyp = Hypothesis(hyp.tokens + [tok], state, hyp.score + float(logp[tok]), fin)
            if fin:
                break
        return hyp

    def words(self, ids):
        """Surface tokens for word ids (EOS dropped, extended ids resolved)."""
        vocab = self.model.vocab.words
        out = []
        for i in ids:
            if i == vocab.stoi[EOS]:
                break
            out.append(vocab.itos[i] if i < len(vocab) else self.oov[i - len(vocab)])
        return out

    def surface(self, tokens):
        text, _ = deanonymize(tokens, self.record.get("anon_table", {}))
        return " ".join(text)


def _require(model, *tasks):
    if model.config.task not in tasks:
        raise TaskMismatch(f"model was trained for task {model.config.task!r}; "
                           f"this operation needs one of {tasks}")


def generate(record, model: Seq2SeqModel, config: DecodeConfig | None = None):
    """Two-stage generation: n-best parses, one realisation each, best pair wins.

    Returns ``{"text", "tokens", "parse", "score", "candidates"}``; for the
    syntax-agnostic baseline ``parse`` is ``None``.
    """
    config = config or DecodeConfig()
    _require(model, "joint", "baseline_s2s_copy")
    dec = _Decoding(model, record)
    candidates = []
    if model.config.task == "baseline_s2s_copy":
        real = dec.realise(None, config.beam_width, config.max_word_steps, config.length_norm)
        toks = dec.words(real.tokens)
        candidates.append({"parse": None, "tokens": toks, "text": dec.surface(toks),
                           "syn_score": 0.0, "lex_score": real.score, "score": real.score,
                           "parse_rank": 0})
    else:
        parses = dec.parses(config.beam_width, config.n_parses, config.max_syntax_steps,
                            config.length_norm)
        for rank, ph in enumerate(parses):
            real = dec.realise(ph.tokens, config.beam_width, config.max_word_steps,
                               config.length_norm)
            toks = dec.words(real.tokens)
            candidates.append({"parse": dec.actions(ph.tokens), "tokens": toks,
                               "text": dec.surface(toks), "syn_score": ph.score,
                               "lex_score": real.score, "score": ph.score + real.score,
                               "parse_rank": rank})
    candidates.sort(key=lambda c: (-c["score"], c["parse_rank"]))
    best = candidates[0]
    scores = np.array([c["score"] for c in candidates])
    return {"text": best["text"], "tokens": best["tokens"], "parse": best["parse"],
            "score": best["score"], "candidates": candidates,
            # diagnostic only: log-sum over the candidate pairs
            "sum_score": float(np.logaddexp.reduce(scores))}


def predict_parse(record, model: Seq2SeqModel, config: DecodeConfig | None = None):
    """Best action sequence from a parse-producing model (any syntax task)."""
    config = config or DecodeConfig()
    _require(model, "joint", "amr2parse", "text2parse", "unconditional_lm")
    dec = _Decoding(model, record)
    best = dec.parses(config.beam_width, 1, config.max_syntax_steps, config.length_norm)[0]
    return dec.actions(best.tokens), best.score


def generate_with_oracle_parse(record, gold_actions, model: Seq2SeqModel,
                               config: DecodeConfig | None = None):
    """Realise ``record`` conditioned on a given (gold) action sequence."""
    config = config or DecodeConfig()
    _require(model, "joint")
    delinearize(gold_actions)
    acts = model.vocab.actions
    dec = _Decoding(model, record)
    real = dec.realise(acts.encode(gold_actions), config.beam_width, config.max_word_steps,
                       config.length_norm)
    toks = dec.words(real.tokens)
    return {"text": dec.surface(toks), "tokens": toks, "lex_score": real.score}


def sample_diverse(record, model: Seq2SeqModel, config: DecodeConfig | None = None, rng=None):
    """Sample parses at ``config.temperature`` and realise each deterministically."""
    config = config or DecodeConfig()
    _require(model, "joint")
    rng = rng if rng is not None else np.random.default_rng(0)
    dec = _Decoding(model, record)
    samples, seen = [], set()
    duplicates = 0
    for _ in range(config.num_samples):
        ph = dec.sample_parse(config.temperature, config.max_syntax_steps, rng)
        actions = dec.actions(ph.tokens)
        try:
            delinearize(actions)
        except TreeError as e:  # pragma: no cover - automaton guarantees well-formedness
            raise RuntimeError(f"sampled malformed parse: {actions}") from e
        real = dec.realise(ph.tokens, config.beam_width, config.max_word_steps,
                           config.length_norm)
        toks = dec.words(real.tokens)
        key = tuple(actions)
        dup = key in seen
        duplicates += dup
        seen.add(key)
        samples.append({"parse": actions, "tokens": toks, "text": dec.surface(toks),
                        "syn_score": ph.score, "lex_score": real.score, "duplicate": dup})
    return {"samples": samples, "duplicates": duplicates}


def sample_parses(record, model: Seq2SeqModel, n, temperature, rng, max_steps=512):
    """Raw temperature-sampled action sequences (no realisation), drawn in a batch."""
    _require(model, "joint", "amr2parse", "text2parse", "unconditional_lm")
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    dec = _Decoding(model, record)
    return [dec.actions(h.tokens) for h in dec.sample_parse_batch(n, temperature, max_steps, rng)]


def first_action_distribution(record, model: Seq2SeqModel, temperature):
    """Distribution the sampler draws the first parse action from, as {action: p}."""
    _require(model, "joint", "amr2parse", "text2parse", "unconditional_lm")
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    dec = _Decoding(model, record)
    hyp = Hypothesis([], dec.syntax_init(MAX_ACTIONS), 0.0)
    _, _, logits, allowed = dec.syntax_step([hyp])
    z = np.where(allowed[0], logits[0] / temperature, -np.inf)
    p = np.exp(z - z.max())
    p /= p.sum()
    return {dec.model.vocab.actions.itos[i]: float(p[i]) for i in np.flatnonzero(allowed[0])}


def sample_baseline(record, model: Seq2SeqModel, config: DecodeConfig | None = None, rng=None):
    """Temperature-sample surface strings directly from the baseline model."""
    config = config or DecodeConfig()
    _require(model, "baseline_s2s_copy")
    rng = rng if rng is not None else np.random.default_rng(0)
    dec = _Decoding(model, record)
    out = []
    for _ in range(config.num_samples):
        hyp = dec.sample_words(config.temperature, config.max_word_steps, rng)
        toks = dec.words(hyp.tokens)
        out.append({"tokens": toks, "text": dec.surface(toks), "score": hyp.score,
                    "finished": hyp.finished, "steps": len(hyp.tokens)})
    return out

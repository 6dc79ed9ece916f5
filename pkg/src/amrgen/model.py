"""Syntax and lexicalisation sequence-to-sequence models.

Both models share the source embeddings, the stacked bidirectional source
encoder and the action embeddings.  The syntax decoder emits parse actions
restricted by an :class:`~amrgen.tree.ActionAutomaton`; the lexicalisation
decoder attends separately over the AMR and parse encodings and mixes
vocabulary generation with copying AMR tokens.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tree import ActionAutomaton
from .vocab import BOS, EOS, UNK, Vocab

TASKS = ("joint", "amr2parse", "text2parse", "unconditional_lm", "baseline_s2s_copy")
PARSE_TASKS = ("amr2parse", "text2parse", "unconditional_lm")


class TaskMismatch(ValueError):
    """A model or checkpoint trained for one task was used for another."""


@dataclass
class ModelConfig:
    task: str = "joint"
    emb_size: int = 300
    hidden_size: int = 500
    enc_layers: int = 2
    dec_layers: int = 1
    gate_hidden: int = 500
    dropout: float = 0.5
    rec_dropout: float = 0.3
    init_scale: float = 0.1

    @property
    def has_syntax(self):
        return self.task in ("joint",) + PARSE_TASKS

    @property
    def has_lex(self):
        return self.task in ("joint", "baseline_s2s_copy")

    @property
    def has_source(self):
        return self.task != "unconditional_lm"

    @property
    def source_field(self):
        return "words" if self.task == "text2parse" else "amr_tokens"


@dataclass
class EncoderOutput:
    states: Tensor            # [B, n, 2H] contextualised representations
    final: Tensor             # [B, 2H] final forward/backward states
    mask: np.ndarray          # [B, n] valid positions

    def take(self, rows):
        """Select batch rows (inference only; drops gradient tracking)."""
        return EncoderOutput(Tensor(self.states.data[rows]), Tensor(self.final.data[rows]),
                             self.mask[rows])


@dataclass
class DecoderState:
    h: list
    c: list
    context: Tensor | None = None
    rec_masks: list | None = None

    def take(self, rows):
        return DecoderState([Tensor(x.data[rows]) for x in self.h],
                            [Tensor(x.data[rows]) for x in self.c],
                            None if self.context is None else Tensor(self.context.data[rows]))


@dataclass
class Batch:
    size: int
    src: np.ndarray | None = None
    src_mask: np.ndarray | None = None
    src_ext: np.ndarray | None = None
    src_tokens: list = field(default_factory=list)
    oov: list = field(default_factory=list)
    act_in: np.ndarray | None = None
    act_tgt: np.ndarray | None = None
    act_mask: np.ndarray | None = None
    act_allowed: np.ndarray | None = None
    parse_in: np.ndarray | None = None
    parse_mask: np.ndarray | None = None
    word_in: np.ndarray | None = None
    word_tgt: np.ndarray | None = None
    word_mask: np.ndarray | None = None

    @property
    def n_ext(self):
        return max((len(o) for o in self.oov), default=0)


def _pad(seqs, value=0):
    n = max(len(s) for s in seqs)
    out = np.full((len(seqs), n), value, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = True
    return out, mask


def attend(h_prev, enc: EncoderOutput, w_att):
    """Bilinear dot-product attention ``a_i = h^T W c_i``; returns ``(weights, context)``."""
    query = T.matmul(h_prev, w_att)
    scores = T.bmv(enc.states, query)
    weights = T.softmax(scores, enc.mask)
    return weights, T.weighted_sum(weights, enc.states)


def copy_mixture(p_lex, attention, src_ext, theta, n_ext=0):
    """``(1 - theta) * p_lex + theta * copy`` over the extended vocabulary.

    ``p_lex`` is ``[B, V]``, ``attention`` ``[B, n]`` over source positions
    whose extended word ids are ``src_ext``; ``theta`` is ``[B, 1]``.  Copy mass
    for repeated source tokens accumulates in one slot.
    """
    V = p_lex.shape[-1]
    copy = T.scatter_add(attention, src_ext, V + n_ext)
    if n_ext:
        p_lex = T.concat([p_lex, Tensor(np.zeros((p_lex.shape[0], n_ext)))])
    return T.add(T.mul(T.sub(1.0, theta), p_lex), T.mul(theta, copy))


class Seq2SeqModel:
    """Parameters plus forward computations for one training task."""

    def __init__(self, vocab: Vocab, config: ModelConfig, seed=0, params=None):
        if config.task not in TASKS:
            raise ValueError(f"unknown task {config.task!r}; expected one of {TASKS}")
        self.vocab = vocab
        self.config = config
        self.params: dict[str, Tensor] = params if params is not None else self._init(seed)

    # -------------------------------------------------------------- params
    @property
    def src_vocab(self):
        return self.vocab.words if self.config.task == "text2parse" else self.vocab.amr

    def _init(self, seed):
        cfg = self.config
        rng = np.random.default_rng(seed)
        E, H, G = cfg.emb_size, cfg.hidden_size, cfg.gate_hidden
        D = 2 * H
        shapes: dict[str, tuple] = {}

        def lstm(prefix, d_in):
            shapes[prefix + ".W"] = (d_in + H, 4 * H)
            shapes[prefix + ".gain"] = ("ones", 4, H)
            shapes[prefix + ".bias"] = ("lstm_bias", 4, H)

        def encoder(prefix):
            for layer in range(cfg.enc_layers):
                for d in ("fwd", "bwd"):
                    lstm(f"{prefix}.l{layer}.{d}", E if layer == 0 else D)

        def norm_linear(prefix, d_in, d_out):
            shapes[prefix + ".W"] = (d_in, d_out)
            shapes[prefix + ".gain"] = ("ones", d_out)
            shapes[prefix + ".bias"] = ("zeros", d_out)

        def decoder(prefix, d_ctx, d_init, n_out):
            if d_init:
                norm_linear(prefix + ".init", d_init, H)
            norm_linear(prefix + ".in", E + d_ctx, H)
            for layer in range(cfg.dec_layers):
                lstm(f"{prefix}.lstm.l{layer}", H)
            norm_linear(prefix + ".out", H + d_ctx, H)
            shapes[prefix + ".proj.W"] = (H, n_out)
            shapes[prefix + ".proj.b"] = ("zeros", n_out)

        if cfg.has_source:
            shapes["emb.src"] = (len(self.src_vocab), E)
            encoder("enc.src")
        shapes["emb.action"] = (len(self.vocab.actions), E)
        if cfg.has_syntax:
            if cfg.has_source:
                shapes["syn.att"] = (H, D)
            decoder("syn", D, D if cfg.has_source else 0, len(self.vocab.actions))
        if cfg.has_lex:
            d_ctx = D
            if cfg.task == "joint":
                encoder("enc.parse")
                shapes["lex.att_parse"] = (H, D)
                d_ctx = 2 * D
            shapes["lex.att_amr"] = (H, D)
            shapes["emb.word"] = (len(self.vocab.words), E)
            decoder("lex", d_ctx, d_ctx, len(self.vocab.words))
            norm_linear("lex.gate1", E + H + d_ctx, G)
            shapes["lex.gate2.W"] = (G, 1)
            shapes["lex.gate2.b"] = ("zeros", 1)

        params = {}
        for name in sorted(shapes):
            spec = shapes[name]
            if isinstance(spec[0], str):
                kind, dims = spec[0], spec[1:]
                if kind == "ones":
                    data = np.ones(dims)
                elif kind == "lstm_bias":
                    data = np.zeros(dims)
                    data[1] = 1.0  # forget gate
                else:
                    data = np.zeros(dims)
            else:
                data = rng.uniform(-cfg.init_scale, cfg.init_scale, size=spec)
            params[name] = Tensor(data, requires_grad=True, name=name)
        return params

    def load_embeddings(self, path, which="emb.src", vocab=None):
        """Initialise rows of an embedding matrix from ``token v1 v2 ...`` lines."""
        vocab = vocab or self.src_vocab
        W = self.params[which].data.copy()
        found = 0
        with open(path, encoding="utf-8") as f:
            for line in f:
                parts = line.rstrip().split(" ")
                if len(parts) != W.shape[1] + 1 or parts[0] not in vocab:
                    continue
                W[vocab.stoi[parts[0]]] = np.asarray(parts[1:], dtype=float)
                found += 1
        self.params[which].data = W
        return found

    # ------------------------------------------------------------- batching
    def make_batch(self, records, noised=False) -> Batch:
        """Index a list of preprocessed records.

        With ``noised=True`` the ``*_in`` fields written by
        :func:`amrgen.trainer.apply_unk_noise` feed the model inputs.
        """
        cfg, v = self.config, self.vocab
        b = Batch(size=len(records))
        get = (lambda r, k: r.get(k + "_in", r[k])) if noised else (lambda r, k: r[k])
        if cfg.has_source:
            key = cfg.source_field
            b.src, b.src_mask = _pad([self.src_vocab.encode(get(r, key)) for r in records])
            b.src_tokens = [list(r[key]) for r in records]
        if cfg.has_lex:
            ext_rows = []
            for toks in b.src_tokens:
                ids, oov = self.extend_ids(toks)
                ext_rows.append(ids)
                b.oov.append(oov)
            b.src_ext, _ = _pad(ext_rows)
        if cfg.has_syntax and records and "parse_actions" in records[0]:
            acts = [v.actions.encode(r["parse_actions"]) for r in records]
            bos = v.actions.stoi[BOS]
            b.act_in, b.act_mask = _pad([[bos] + a[:-1] for a in acts])
            b.act_tgt, _ = _pad(acts)
            b.act_allowed = np.ones(b.act_in.shape + (len(v.actions),), dtype=bool)
            for i, r in enumerate(records):
                auto = ActionAutomaton()
                for t, a in enumerate(r["parse_actions"]):
                    b.act_allowed[i, t] = v.actions.mask_for(auto)
                    auto = auto.step(a)
        if cfg.task == "joint":
            b.parse_in, b.parse_mask = _pad([v.actions.encode(get(r, "parse_actions"))
                                             for r in records])
        if cfg.has_lex and records and "words" in records[0]:
            bos, eos = v.words.stoi[BOS], v.words.stoi[EOS]
            b.word_in, b.word_mask = _pad([[bos] + v.words.encode(get(r, "words"))
                                           for r in records])
            tgts = []
            for r, oov in zip(records, b.oov):
                tgts.append([self.target_id(w, oov) for w in r["words"]] + [eos])
            b.word_tgt, _ = _pad(tgts)
        return b

    def extend_ids(self, src_tokens):
        """Word-space ids for copy sources; tokens outside the word vocabulary
        get extended slots ``V, V+1, ...`` in order of first appearance."""
        words = self.vocab.words
        oov: list[str] = []
        ids = []
        for tok in src_tokens:
            if tok in words:
                ids.append(words.stoi[tok])
            else:
                if tok not in oov:
                    oov.append(tok)
                ids.append(len(words) + oov.index(tok))
        return ids, oov

    def target_id(self, word, oov):
        words = self.vocab.words
        if word in words:
            return words.stoi[word]
        if word in oov:
            return len(words) + oov.index(word)
        return words.stoi[UNK]

    # -------------------------------------------------------------- encoder
    def _lstm_layer(self, prefix, x, mask, reverse, train, rng):
        cfg, p = self.config, self.params
        rec = None
        if train and cfg.rec_dropout > 0:
            rec = T.dropout_mask((x.shape[0], cfg.hidden_size), cfg.rec_dropout, rng)
        return T.lstm_layer(x, mask, p[prefix + ".W"], p[prefix + ".gain"], p[prefix + ".bias"],
                            reverse, rec)

    def encode(self, ids, mask, which="src", train=False, rng=None) -> EncoderOutput:
        """Stacked bidirectional encoding of padded ``ids`` [B, n]."""
        cfg, p = self.config, self.params
        if ids.shape[1] == 0:
            raise ValueError("cannot encode an empty sequence")
        emb = p["emb.src"] if which == "src" else p["emb.action"]
        x = T.embedding(emb, ids)
        if train and cfg.dropout > 0:
            x = T.dropout(x, cfg.dropout, rng)
        for layer in range(cfg.enc_layers):
            fwd, hf = self._lstm_layer(f"enc.{which}.l{layer}.fwd", x, mask, False, train, rng)
            bwd, hb = self._lstm_layer(f"enc.{which}.l{layer}.bwd", x, mask, True, train, rng)
            x = T.concat([fwd, bwd], axis=-1)
            if train and cfg.dropout > 0:
                x = T.dropout(x, cfg.dropout, rng)
        return EncoderOutput(x, T.concat([hf, hb]), mask)

    # -------------------------------------------------------------- decoder
    def _norm_linear(self, prefix, x):
        p = self.params
        return T.layer_norm(T.matmul(x, p[prefix + ".W"]), p[prefix + ".gain"], p[prefix + ".bias"])

    def init_state(self, prefix, finals, batch_size, train=False, rng=None):
        cfg = self.config
        H = cfg.hidden_size
        if finals is None:
            # nothing to condition on (unconditional parse LM)
            h0 = Tensor(np.zeros((batch_size, H)))
        else:
            h0 = T.tanh(self._norm_linear(prefix + ".init", finals))
        hs = [h0] + [Tensor(np.zeros((batch_size, H))) for _ in range(cfg.dec_layers - 1)]
        cs = [Tensor(np.zeros((batch_size, H))) for _ in range(cfg.dec_layers)]
        rec = None
        if train and cfg.rec_dropout > 0:
            rec = [T.dropout_mask((batch_size, H), cfg.rec_dropout, rng)
                   for _ in range(cfg.dec_layers)]
        return DecoderState(hs, cs, None, rec)

    def _recur(self, prefix, state: DecoderState, y, ctx):
        """Input feeding and LSTM update: ``h, c = LSTM(h, c, W_in tanh([y; s]))``."""
        p = self.params
        x = self._norm_linear(prefix + ".in", T.tanh(T.concat([y, ctx])))
        hs, cs = [], []
        for layer in range(self.config.dec_layers):
            h_prev = state.h[layer]
            if state.rec_masks is not None:
                h_prev = T.mul(h_prev, state.rec_masks[layer])
            pre = f"{prefix}.lstm.l{layer}"
            h, c = T.lstm_cell(x, h_prev, state.c[layer], p[pre + ".W"], p[pre + ".gain"],
                               p[pre + ".bias"])
            hs.append(h)
            cs.append(c)
            x = h
        return DecoderState(hs, cs, ctx, state.rec_masks)

    def _output_logits(self, prefix, h, ctx, train=False, rng=None):
        """``W tanh(W_out [h; s])`` over arbitrary leading dims."""
        p = self.params
        ht = T.tanh(self._norm_linear(prefix + ".out", T.concat([h, ctx])))
        if train and self.config.dropout > 0:
            ht = T.dropout(ht, self.config.dropout, rng)
        return T.add(T.matmul(ht, p[prefix + ".proj.W"]), p[prefix + ".proj.b"])

    def _syntax_context(self, h_top, enc):
        if enc is None:
            return None, Tensor(np.zeros((h_top.shape[0], 2 * self.config.hidden_size)))
        return attend(h_top, enc, self.params["syn.att"])

    def _lex_context(self, h_top, enc_amr, enc_parse):
        p = self.params
        w_amr, s_amr = attend(h_top, enc_amr, p["lex.att_amr"])
        if enc_parse is None:
            return w_amr, s_amr
        _, s_parse = attend(h_top, enc_parse, p["lex.att_parse"])
        return w_amr, T.concat([s_amr, s_parse])

    def _gate(self, y, h, ctx):
        p = self.params
        hid = T.tanh(self._norm_linear("lex.gate1", T.concat([y, h, ctx])))
        return T.sigmoid(T.add(T.matmul(hid, p["lex.gate2.W"]), p["lex.gate2.b"]))

    def syntax_decoder_step(self, state: DecoderState, prev_actions, enc_amr, allowed):
        """One constrained syntax step for a batch of hypotheses.

        ``allowed`` is the ``[B, A]`` permissible-action mask.  Returns
        ``(probs, logits, new_state)``; probs are exactly 0 off the mask and
        logits are unmasked (for temperature sampling).
        """
        if not np.asarray(allowed).any(axis=-1).all():
            raise T.MaskError("syntax step with no permissible action")
        y = T.embedding(self.params["emb.action"], np.asarray(prev_actions))
        _, ctx = self._syntax_context(state.h[-1], enc_amr)
        new = self._recur("syn", state, y, ctx)
        logits = self._output_logits("syn", new.h[-1], ctx)
        probs = T.softmax(logits, allowed)
        return probs.data, logits.data, new

    def lex_decoder_step(self, state: DecoderState, prev_words, enc_amr, enc_parse, src_ext, n_ext):
        """One lexicalisation step; returns ``(probs over V + n_ext, new_state, theta)``."""
        V = len(self.vocab.words)
        prev = np.where(np.asarray(prev_words) >= V, self.vocab.words.stoi[UNK], prev_words)
        y = T.embedding(self.params["emb.word"], prev)
        w_amr, ctx = self._lex_context(state.h[-1], enc_amr, enc_parse)
        new = self._recur("lex", state, y, ctx)
        p_lex = T.softmax(self._output_logits("lex", new.h[-1], ctx))
        theta = self._gate(y, new.h[-1], ctx)
        p = copy_mixture(p_lex, w_amr, src_ext, theta, n_ext)
        return p.data, new, theta.data[:, 0]

    # ------------------------------------------------------ teacher forcing
    def syntax_nll(self, batch: Batch, enc, train=False, rng=None):
        """Summed parse NLL of ``batch`` (per-example vector)."""
        B, m = batch.act_in.shape
        Y = T.embedding(self.params["emb.action"], batch.act_in)
        if train and self.config.dropout > 0:
            Y = T.dropout(Y, self.config.dropout, rng)
        state = self.init_state("syn", None if enc is None else enc.final, B, train, rng)
        hs, ctxs = [], []
        for t in range(m):
            _, ctx = self._syntax_context(state.h[-1], enc)
            state = self._recur("syn", state, T.getitem(Y, (slice(None), t)), ctx)
            hs.append(state.h[-1])
            ctxs.append(ctx)
        logits = self._output_logits("syn", T.stack(hs, 1), T.stack(ctxs, 1), train, rng)
        logp = T.log_softmax(logits, batch.act_allowed)
        gold = T.pick(logp, batch.act_tgt)
        return T.mul(T.total(T.mul(gold, batch.act_mask.astype(float)), axis=1), -1.0)

    def text_nll(self, batch: Batch, enc_amr, enc_parse, train=False, rng=None):
        """Summed text NLL under the copy-augmented distribution (per example)."""
        cfg = self.config
        B, n_steps = batch.word_in.shape
        V = len(self.vocab.words)
        Y = T.embedding(self.params["emb.word"], batch.word_in)
        if train and cfg.dropout > 0:
            Y = T.dropout(Y, cfg.dropout, rng)
        finals = enc_amr.final if enc_parse is None else T.concat([enc_amr.final, enc_parse.final])
        state = self.init_state("lex", finals, B, train, rng)
        hs, ctxs, ws = [], [], []
        for t in range(n_steps):
            w_amr, ctx = self._lex_context(state.h[-1], enc_amr, enc_parse)
            state = self._recur("lex", state, T.getitem(Y, (slice(None), t)), ctx)
            hs.append(state.h[-1])
            ctxs.append(ctx)
            ws.append(w_amr)
        Hs, Cs, Ws = T.stack(hs, 1), T.stack(ctxs, 1), T.stack(ws, 1)
        p_lex = T.softmax(self._output_logits("lex", Hs, Cs, train, rng))
        theta = T.getitem(self._gate(Y, Hs, Cs), (Ellipsis, 0))
        tgt = batch.word_tgt
        in_vocab = (tgt < V).astype(float)
        gen = T.mul(T.pick(p_lex, np.minimum(tgt, V - 1)), in_vocab)
        # copy probability of the target: attention mass on matching source slots
        match = (batch.src_ext[:, None, :] == tgt[:, :, None]) & batch.src_mask[:, None, :]
        cop = T.total(T.mul(Ws, match.astype(float)), axis=-1)
        p = T.add(T.mul(T.sub(1.0, theta), gen), T.mul(theta, cop))
        p = T.where(batch.word_mask, p, 1.0)
        return T.mul(T.total(T.log(p), axis=1), -1.0)

    def encode_batch(self, batch: Batch, train=False, rng=None):
        enc_amr = enc_parse = None
        if self.config.has_source:
            enc_amr = self.encode(batch.src, batch.src_mask, "src", train, rng)
        if self.config.task == "joint" and batch.parse_in is not None:
            enc_parse = self.encode(batch.parse_in, batch.parse_mask, "parse", train, rng)
        return enc_amr, enc_parse

    def joint_log_likelihood(self, batch: Batch, train=False, rng=None):
        """Per-example ``(parse NLL, text NLL)`` tensors; missing parts are ``None``."""
        enc_amr, enc_parse = self.encode_batch(batch, train, rng)
        parse_nll = text_nll = None
        if self.config.has_syntax and batch.act_in is not None:
            parse_nll = self.syntax_nll(batch, enc_amr, train, rng)
        if self.config.has_lex and batch.word_in is not None:
            text_nll = self.text_nll(batch, enc_amr, enc_parse, train, rng)
        return parse_nll, text_nll

    def loss(self, batch: Batch, train=False, rng=None):
        """Mean over the batch of summed parse + text NLL."""
        parse_nll, text_nll = self.joint_log_likelihood(batch, train, rng)
        parts = [x for x in (parse_nll, text_nll) if x is not None]
        tot = parts[0] if len(parts) == 1 else T.add(parts[0], parts[1])
        return T.mul(T.total(tot), 1.0 / batch.size)

    def n_target_tokens(self, batch: Batch):
        out = {}
        if batch.act_mask is not None:
            out["parse"] = int(batch.act_mask.sum())
        if batch.word_mask is not None:
            out["text"] = int(batch.word_mask.sum())
        return out

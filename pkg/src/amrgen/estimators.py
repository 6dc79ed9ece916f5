"""scikit-learn style wrappers around preprocessing, training and decoding.

>>> gen = SyntaxAwareGenerator(preset="desk", epochs=50).fit(train_records)
>>> gen.predict(test_records)          # surface strings
>>> gen.score(test_records)            # corpus BLEU
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .amr import anonymize, linearize
from .decoder import (DecodeConfig, generate, generate_with_oracle_parse, predict_parse,
                      sample_baseline, sample_diverse)
from .evaluation import corpus_bleu, corpus_span_f1
from .trainer import Checkpoint, load_checkpoint, make_config, save_checkpoint, train
from .tree import delexicalise, delinearize, linearize_tree, parse_ptb
from .validation import check_graphs, check_records


class AmrLinearizer(TransformerMixin, BaseEstimator):
    """AMR graphs (or PENMAN text) -> ``{"amr_tokens", "anon_table"}`` records."""

    def fit(self, X, y=None):
        check_graphs(X)
        return self

    def transform(self, X):
        out = []
        for g in check_graphs(X):
            anon, table = anonymize(g)
            lin = linearize(anon, table)
            out.append({"amr_tokens": lin.tokens, "anon_table": lin.anonymization_table})
        return out


class TreeLinearizer(TransformerMixin, BaseEstimator):
    """Bracketed parses -> delexicalised action sequences, and back to tree strings."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return [linearize_tree(delexicalise(parse_ptb(s))[0]) for s in X]

    def inverse_transform(self, X):
        return [str(delinearize(a)) for a in X]


class _Seq2SeqEstimator(BaseEstimator):
    _task = None

    def __init__(self, preset="desk", epochs=None, batch_size=None, lr=None, hidden_size=None,
                 emb_size=None, dropout=None, rec_dropout=None, seed=1, beam_width=2,
                 n_parses=2, eval_every=5, config_file=None):
        self.preset = preset
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.hidden_size = hidden_size
        self.emb_size = emb_size
        self.dropout = dropout
        self.rec_dropout = rec_dropout
        self.seed = seed
        self.beam_width = beam_width
        self.n_parses = n_parses
        self.eval_every = eval_every
        self.config_file = config_file

    @property
    def task(self):
        return self._task

    def _train_config(self):
        return make_config(self.preset, self.config_file, task=self.task, epochs=self.epochs,
                           batch_size=self.batch_size, lr=self.lr, hidden_size=self.hidden_size,
                           emb_size=self.emb_size, gate_hidden=self.hidden_size,
                           dropout=self.dropout, rec_dropout=self.rec_dropout, seed=self.seed,
                           eval_every=self.eval_every)

    def _decode_config(self):
        return DecodeConfig(beam_width=self.beam_width, n_parses=self.n_parses)

    def fit(self, X, y=None, dev=None, log_fn=None):
        """Train on ``X`` (records, or AMRs with parses ``y``); ``dev`` selects the best epoch."""
        records = check_records(X, y, self.task)
        dev_records = None
        if dev is not None:
            dev_X, dev_y = dev if isinstance(dev, tuple) else (dev, None)
            dev_records = check_records(dev_X, dev_y, self.task)
        self._set_checkpoint(train(self._train_config(), records, dev_records, log_fn))
        return self

    def _set_checkpoint(self, ckpt: Checkpoint):
        self.checkpoint_ = ckpt
        self.model_ = ckpt.model()
        self.history_ = ckpt.history
        self.best_epoch_ = ckpt.epoch
        return self

    def _inputs(self, X):
        check_is_fitted(self, "model_")
        return check_records(X, None, self.task, need_targets=False)

    def save(self, path):
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(self.checkpoint_, path)

    @classmethod
    def load(cls, path, **params):
        ckpt = load_checkpoint(path, expected_task=cls._task)
        return cls(**params)._set_checkpoint(ckpt)


class _GeneratorMixin:
    def predict(self, X):
        """Surface strings (placeholders restored from each input's anonymisation table)."""
        cfg = self._decode_config()
        return [generate(r, self.model_, cfg)["text"] for r in self._inputs(X)]

    def predict_tokens(self, X):
        cfg = self._decode_config()
        return [generate(r, self.model_, cfg)["tokens"] for r in self._inputs(X)]

    def score(self, X, y=None):
        """Corpus BLEU of :meth:`predict_tokens` against the records' ``words``."""
        records = check_records(X, y, self.task)
        return corpus_bleu(self.predict_tokens(records), [r["words"] for r in records])


class SyntaxAwareGenerator(_GeneratorMixin, _Seq2SeqEstimator):
    """Joint model: predict a delexicalised parse, then realise words conditioned on it."""
    _task = "joint"

    def predict_parse(self, X):
        cfg = self._decode_config()
        return [generate(r, self.model_, cfg)["parse"] for r in self._inputs(X)]

    def predict_with_parse(self, X, parses):
        """Realise each input conditioned on a given action sequence."""
        records = self._inputs(X)
        if len(parses) != len(records):
            raise ValueError(f"{len(records)} inputs but {len(parses)} parses")
        cfg = self._decode_config()
        return [generate_with_oracle_parse(r, p, self.model_, cfg)["text"]
                for r, p in zip(records, parses)]

    def sample(self, X, num_samples=3, temperature=0.3, random_state=None):
        cfg = DecodeConfig(beam_width=self.beam_width, temperature=temperature,
                           num_samples=num_samples)
        rng = np.random.default_rng(random_state)
        return [sample_diverse(r, self.model_, cfg, rng)["samples"] for r in self._inputs(X)]


class BaselineGenerator(_GeneratorMixin, _Seq2SeqEstimator):
    """Attention sequence-to-sequence generator with copying and no syntax."""
    _task = "baseline_s2s_copy"

    def sample(self, X, num_samples=3, temperature=0.3, random_state=None):
        cfg = DecodeConfig(beam_width=self.beam_width, temperature=temperature,
                           num_samples=num_samples)
        rng = np.random.default_rng(random_state)
        return [sample_baseline(r, self.model_, cfg, rng) for r in self._inputs(X)]


class ParsePredictor(_Seq2SeqEstimator):
    """Predict delexicalised parses from AMR (``source="amr"``), text, or nothing."""
    _TASKS = {"amr": "amr2parse", "text": "text2parse", "none": "unconditional_lm"}

    def __init__(self, source="amr", preset="desk", epochs=None, batch_size=None, lr=None,
                 hidden_size=None, emb_size=None, dropout=None, rec_dropout=None, seed=1,
                 beam_width=2, n_parses=2, eval_every=5, config_file=None):
        super().__init__(preset, epochs, batch_size, lr, hidden_size, emb_size, dropout,
                         rec_dropout, seed, beam_width, n_parses, eval_every, config_file)
        self.source = source

    @property
    def task(self):
        if self.source not in self._TASKS:
            raise ValueError(f"source must be one of {sorted(self._TASKS)}, got {self.source!r}")
        return self._TASKS[self.source]

    @classmethod
    def load(cls, path, **params):
        ckpt = load_checkpoint(path, expected_task=tuple(cls._TASKS.values()))
        source = {v: k for k, v in cls._TASKS.items()}[ckpt.task]
        return cls(source=source, **params)._set_checkpoint(ckpt)

    def predict(self, X):
        cfg = DecodeConfig(beam_width=self.beam_width, n_parses=1)
        return [predict_parse(r, self.model_, cfg)[0] for r in self._inputs(X)]

    def score(self, X, y=None, labelled=True):
        """Span F1 (fraction) of predicted parses against ``parse_actions``."""
        records = check_records(X, y, self.task)
        res = corpus_span_f1(self.predict(records), [r["parse_actions"] for r in records],
                             labelled=labelled)
        return res["f1"]

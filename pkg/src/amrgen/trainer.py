"""Training loop, regularisation schedule and checkpoint files."""
from __future__ import annotations

import copy
import json
import logging
import math
import struct
import time
import zlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .model import TASKS, ModelConfig, Seq2SeqModel, TaskMismatch
from .tensor import ConfigError, Tensor
from .tree import is_open
from .vocab import UNK, Vocab, build_vocabs

log = logging.getLogger(__name__)

MAGIC = b"AMRF"
FORMAT_VERSION = 1


class DivergenceError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    task: str = "joint"
    batch_size: int = 40
    epochs: int = 200
    lr: float = 0.001
    lr_decay: float = 0.8
    patience: int = 5
    dropout: float = 0.5
    rec_dropout: float = 0.3
    unk_word_prob: float = 0.5
    unk_pos_prob: float = 0.1
    unk_concept_prob: float = 0.1
    seed: int = 1
    hidden_size: int = 500
    emb_size: int = 300
    gate_hidden: int = 500
    enc_layers: int = 2
    dec_layers: int = 1
    clip_norm: float = 5.0
    eval_every: int = 1
    embeddings: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        for name in ("dropout", "rec_dropout", "unk_word_prob", "unk_pos_prob", "unk_concept_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {v}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    def model_config(self) -> ModelConfig:
        return ModelConfig(task=self.task, emb_size=self.emb_size, hidden_size=self.hidden_size,
                           enc_layers=self.enc_layers, dec_layers=self.dec_layers,
                           gate_hidden=self.gate_hidden, dropout=self.dropout,
                           rec_dropout=self.rec_dropout)

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


PRESETS = {
    "full": {},
    # small enough to train on a laptop CPU in minutes
    "desk": {"hidden_size": 64, "emb_size": 32, "gate_hidden": 64, "batch_size": 10,
             "lr": 0.003, "dropout": 0.3, "rec_dropout": 0.2, "epochs": 100, "eval_every": 5},
}


def _coerce(field_type, raw):
    if raw in ("None", "none", ""):
        return None
    t = str(field_type)
    if "int" in t:
        return int(raw)
    if "float" in t:
        return float(raw)
    return raw


def load_config_file(path) -> dict:
    """Read flat ``key = value`` (or ``key value``) lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.replace("=", " ", 1).partition(" ")
            key, value = key.strip(), value.strip()
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(types[key], value)
    return out


def make_config(preset=None, config_file=None, **overrides) -> TrainConfig:
    """Preset values, then file values, then explicit overrides."""
    values = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if config_file:
        values.update(load_config_file(config_file))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


# --------------------------------------------------------------------- noise

def _is_concept(tok):
    return not (tok.startswith(":") or tok in ("(", ")"))


def apply_unk_noise(example, config: TrainConfig, rng, vocab: Vocab):
    """Copy of ``example`` with stochastically UNK-ed model inputs.

    Training-count-1 words become UNK with ``unk_word_prob``; AMR concepts
    and POS-tag terminals with ``unk_concept_prob`` / ``unk_pos_prob``
    regardless of count.  Role tokens, brackets and OPEN/CLOSE actions are
    never replaced.  Noised sequences go to ``*_in`` keys; targets are left
    untouched.
    """
    out = dict(example)
    if "amr_tokens" in example:
        p = config.unk_concept_prob
        out["amr_tokens_in"] = [UNK if _is_concept(t) and p > 0 and rng.random() < p else t
                                for t in example["amr_tokens"]]
    if "parse_actions" in example:
        p = config.unk_pos_prob
        out["parse_actions_in"] = [
            UNK if not is_open(a) and a != ")" and p > 0 and rng.random() < p else a
            for a in example["parse_actions"]]
    if "words" in example:
        p = config.unk_word_prob
        out["words_in"] = [UNK if p > 0 and vocab.words.count(w) == 1 and rng.random() < p else w
                           for w in example["words"]]
    return out


# ---------------------------------------------------------------- checkpoint

@dataclass
class Checkpoint:
    params: dict
    vocab: Vocab
    config: TrainConfig
    epoch: int = 0
    history: list | None = None

    @property
    def task(self):
        return self.config.task

    def model(self) -> Seq2SeqModel:
        params = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return Seq2SeqModel(self.vocab, self.config.model_config(), params=params)

    @classmethod
    def from_model(cls, model, config, epoch=0, history=None):
        return cls({k: p.data.copy() for k, p in model.params.items()}, model.vocab, config,
                   epoch, list(history or []))


def save_checkpoint(ckpt: Checkpoint, path):
    """Write ``AMRF`` + u32 version + JSON block + named float64 tensors + CRC32."""
    meta = json.dumps({"config": asdict(ckpt.config), "vocab": ckpt.vocab.to_dict(),
                       "epoch": ckpt.epoch, "history": ckpt.history or [],
                       "task": ckpt.config.task}).encode("utf-8")
    body = bytearray()
    body += struct.pack("<I", len(meta)) + meta
    body += struct.pack("<I", len(ckpt.params))
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        enc = name.encode("utf-8")
        body += struct.pack("<I", len(enc)) + enc
        body += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", FORMAT_VERSION) + bytes(body)
                + struct.pack("<I", zlib.crc32(bytes(body))))


def load_checkpoint(path, expected_task=None) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an AMRF checkpoint")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    body, (crc,) = raw[8:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt file)")
    try:
        pos = 0
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        meta = json.loads(body[pos:pos + n].decode("utf-8"))
        pos += n
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            name = body[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (ndim,) = struct.unpack_from("<I", body, pos)
            shape = struct.unpack_from(f"<{ndim}I", body, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(shape)) * 8
            if pos + size > len(body):
                raise CheckpointError(f"{path}: tensor {name!r} truncated")
            params[name] = np.frombuffer(body[pos:pos + size], dtype="<f8").reshape(shape).copy()
            pos += size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint ({e})") from e
    config = TrainConfig(**meta["config"])
    if expected_task is not None and config.task not in (
            (expected_task,) if isinstance(expected_task, str) else tuple(expected_task)):
        raise TaskMismatch(f"{path}: checkpoint is for task {config.task!r}, "
                              f"expected {expected_task!r}")
    return Checkpoint(params, Vocab.from_dict(meta["vocab"]), config, meta["epoch"],
                      meta["history"])


# ------------------------------------------------------------------ training

def _batches(records, batch_size, rng, key):
    """Shuffled batches, bucketed by source length within windows."""
    order = rng.permutation(len(records))
    window = batch_size * 20
    batches = []
    for lo in range(0, len(order), window):
        chunk = sorted(order[lo:lo + window], key=lambda i: (key(records[i]), i))
        batches += [chunk[k:k + batch_size] for k in range(0, len(chunk), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def dev_metric(model: Seq2SeqModel, dev_records):
    """Model-selection metric (higher is better) and its name."""
    from .decoder import DecodeConfig, generate, predict_parse
    from .evaluation import corpus_bleu, corpus_span_f1

    task = model.config.task
    greedy = DecodeConfig(beam_width=1, n_parses=1)
    if task in ("joint", "baseline_s2s_copy"):
        hyps = [generate(r, model, greedy)["tokens"] for r in dev_records]
        return corpus_bleu(hyps, [r["words"] for r in dev_records]), "bleu"
    if task == "unconditional_lm":
        nll, n = corpus_nll(model, dev_records)
        return -math.exp(nll["parse"] / max(n["parse"], 1)), "neg_perplexity"
    preds = [predict_parse(r, model, greedy)[0] for r in dev_records]
    f = corpus_span_f1(preds, [r["parse_actions"] for r in dev_records], labelled=True)
    return 100 * f["f1"], "labelled_f1"


def corpus_nll(model: Seq2SeqModel, records, batch_size=40):
    """Summed teacher-forced NLLs and token counts (no dropout, no noise)."""
    tot = {"parse": 0.0, "text": 0.0}
    cnt = {"parse": 0, "text": 0}
    for lo in range(0, len(records), batch_size):
        batch = model.make_batch(records[lo:lo + batch_size])
        parse_nll, text_nll = model.joint_log_likelihood(batch)
        for key, val in (("parse", parse_nll), ("text", text_nll)):
            if val is not None:
                tot[key] += float(val.data.sum())
        for key, n in model.n_target_tokens(batch).items():
            cnt[key] += n
    return tot, cnt


def compute_gradients(model: Seq2SeqModel, batch, train=True, rng=None):
    for p in model.params.values():
        p.zero_grad()
    with T.Tape() as tape:
        loss = model.loss(batch, train=train, rng=rng)
    tape.backward(loss)
    grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
    return float(loss.data), grads


def train(config: TrainConfig, train_records, dev_records=None, log_fn=None,
          vocab: Vocab | None = None) -> Checkpoint:
    """Train ``config.task`` and return the checkpoint with the best dev metric.

    ``log_fn`` receives one dict per epoch ``{epoch, train_nll, dev_metric, lr}``.
    """
    train_records = list(train_records)
    dev_records = list(dev_records if dev_records is not None else [])
    vocab = vocab or build_vocabs(train_records)
    model = Seq2SeqModel(vocab, config.model_config(), seed=config.seed)
    if config.embeddings:
        found = model.load_embeddings(config.embeddings)
        log.info("initialised %d source embeddings from %s", found, config.embeddings)
    rng = np.random.default_rng(config.seed)
    adam = T.AdamState()
    lr = config.lr
    key = (lambda r: len(r[model.config.source_field])) if model.config.has_source else \
        (lambda r: len(r["parse_actions"]))
    best_metric, best_params, best_epoch = -math.inf, None, 0
    since_best = 0
    history = []
    for epoch in range(1, config.epochs + 1):
        start = time.time()
        total, n_ex = 0.0, 0
        for idx in _batches(train_records, config.batch_size, rng, key):
            noisy = [apply_unk_noise(train_records[i], config, rng, vocab) for i in idx]
            batch = model.make_batch(noisy, noised=True)
            loss, grads = compute_gradients(model, batch, True, rng)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss {loss} at epoch {epoch}")
            grads, _ = T.clip_grad_norm(grads, config.clip_norm)
            T.adam_step(model.params, grads, adam, lr)
            total += loss * len(idx)
            n_ex += len(idx)
        entry = {"epoch": epoch, "train_nll": total / max(n_ex, 1), "dev_metric": None,
                 "lr": lr, "seconds": round(time.time() - start, 3)}
        evaluate_now = dev_records and (epoch % config.eval_every == 0 or epoch == config.epochs)
        if evaluate_now:
            metric, name = dev_metric(model, dev_records)
            entry["dev_metric"], entry["metric"] = metric, name
            if metric > best_metric:
                best_metric, best_epoch, since_best = metric, epoch, 0
                best_params = {k: p.data.copy() for k, p in model.params.items()}
            else:
                since_best += 1
                if since_best >= config.patience:
                    lr *= config.lr_decay
                    since_best = 0
        history.append(entry)
        if log_fn:
            log_fn(entry)
    if best_params is None:
        best_params = {k: p.data.copy() for k, p in model.params.items()}
        best_epoch = config.epochs
    return Checkpoint(best_params, vocab, copy.deepcopy(config), best_epoch, history)

"""Token <-> index maps for AMR tokens, parse actions, surface words and POS tags."""
from __future__ import annotations

from collections import Counter

import numpy as np

from .tree import CLOSE, is_open

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)


class Vocabulary:
    """Dense index map with reserved PAD/UNK/BOS/EOS at indices 0..3."""

    def __init__(self, tokens=(), counts=None):
        self.itos = list(SPECIALS)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.counts = dict(counts or {})
        for t in tokens:
            self.add(t)

    @classmethod
    def from_counter(cls, counter: Counter):
        ordered = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([t for t, _ in ordered if t not in SPECIALS], counts=counter)

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def index(self, token):
        return self.stoi.get(token, self.stoi[UNK])

    def encode(self, tokens):
        return [self.index(t) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def count(self, token):
        return self.counts.get(token, 0)

    def singletons(self):
        return {t for t, c in self.counts.items() if c == 1}

    def to_dict(self):
        return {"itos": self.itos, "counts": self.counts}

    @classmethod
    def from_dict(cls, d):
        v = cls()
        for t in d["itos"][len(SPECIALS):]:
            v.add(t)
        v.counts = dict(d.get("counts", {}))
        return v

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos


class ActionVocabulary(Vocabulary):
    """Vocabulary over parse actions, always containing CLOSE, with kind masks."""

    def __init__(self, tokens=(), counts=None):
        super().__init__((), counts)
        self.add(CLOSE)
        for t in tokens:
            self.add(t)
        self._masks = None

    def add(self, token):
        self._masks = None
        return super().add(token)

    def kind_masks(self):
        """Boolean masks over indices for OPEN, TERMINAL and CLOSE actions."""
        if self._masks is None:
            n = len(self.itos)
            opens, terms = np.zeros(n, bool), np.zeros(n, bool)
            close = np.zeros(n, bool)
            for i, t in enumerate(self.itos):
                if t in SPECIALS:
                    continue
                if t == CLOSE:
                    close[i] = True
                elif is_open(t):
                    opens[i] = True
                else:
                    terms[i] = True
            self._masks = {"open": opens, "terminal": terms, "close": close}
        return self._masks

    def mask_for(self, automaton):
        masks = self.kind_masks()
        out = np.zeros(len(self.itos), bool)
        for kind in automaton.allowed_kinds():
            out |= masks[kind]
        return out

    @classmethod
    def from_dict(cls, d):
        v = cls()
        for t in d["itos"][len(SPECIALS):]:
            v.add(t)
        v.counts = dict(d.get("counts", {}))
        return v


class Vocab:
    """The four vocabularies used by the models."""

    def __init__(self, amr, actions, words, pos):
        self.amr = amr
        self.actions = actions
        self.words = words
        self.pos = pos

    def to_dict(self):
        return {k: getattr(self, k).to_dict() for k in ("amr", "actions", "words", "pos")}

    @classmethod
    def from_dict(cls, d):
        return cls(Vocabulary.from_dict(d["amr"]), ActionVocabulary.from_dict(d["actions"]),
                   Vocabulary.from_dict(d["words"]), Vocabulary.from_dict(d["pos"]))

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.to_dict() == other.to_dict()


def build_vocabs(records) -> Vocab:
    """Count-ordered vocabularies over a preprocessed corpus (all tokens kept)."""
    from .tensor import ConfigError

    records = list(records)
    if not records:
        raise ConfigError("cannot build vocabularies from an empty corpus")
    amr, actions, words, pos = Counter(), Counter(), Counter(), Counter()
    for r in records:
        amr.update(r["amr_tokens"])
        actions.update(r.get("parse_actions", []))
        words.update(r.get("words") or r.get("sentence_tokens", []))
        pos.update(r.get("pos_tags", []))
    ordered = sorted(actions.items(), key=lambda kv: (-kv[1], kv[0]))
    act_vocab = ActionVocabulary([t for t, _ in ordered], counts=actions)
    return Vocab(Vocabulary.from_counter(amr), act_vocab,
                 Vocabulary.from_counter(words), Vocabulary.from_counter(pos))


def singleton_fraction(vocab: Vocabulary) -> float:
    n = sum(1 for c in vocab.counts.values() if c > 0)
    return len(vocab.singletons()) / n if n else 0.0

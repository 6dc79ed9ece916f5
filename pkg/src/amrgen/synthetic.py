"""Template generator for the small English AMR/parse/sentence corpus shipped in ``data/``.

Each example pairs an AMR with one of several syntactic realisations
(active/passive, dative alternation, fronted locatives), so the AMR leaves
the syntax underdetermined in the same way real data does.

    python -m amrgen.synthetic OUTDIR
"""
from __future__ import annotations

import random
import sys
from pathlib import Path

from .amr import AmrGraph, Const, Edge, Literal, Var, print_penman
from .preprocess import make_record
from .tree import Tree

AGENTS = ["boy", "girl", "dog", "cat", "teacher", "doctor", "farmer", "student", "baby",
          "bird", "horse", "king", "nurse", "pilot"]
OBJECTS = {"ball": "balls", "book": "books", "apple": "apples", "letter": "letters",
           "toy": "toys", "cake": "cakes", "gift": "gifts", "key": "keys", "map": "maps",
           "hat": "hats"}
PLACES = ["park", "garden", "house", "school", "kitchen", "market", "forest"]
ADJECTIVES = ["big", "small", "old", "young", "happy", "red"]
NAMES = [["Alice"], ["Bob"], ["Mary", "Smith"], ["John"], ["Anna", "Lee"], ["Peter"],
         ["Tom", "Hardy"], ["Lucy"]]
NUMBERS = ["2", "3", "4", "5", "6", "7"]
# concept: (past, base)
INTRANSITIVE = {"sleep-01": ("slept", "sleep"), "run-02": ("ran", "run"),
                "laugh-01": ("laughed", "laugh"), "arrive-01": ("arrived", "arrive"),
                "cry-01": ("cried", "cry"), "dance-01": ("danced", "dance")}
# concept: (past, base, participle)
TRANSITIVE = {"chase-01": ("chased", "chase", "chased"), "see-01": ("saw", "see", "seen"),
              "find-01": ("found", "find", "found"), "like-01": ("liked", "like", "liked"),
              "help-01": ("helped", "help", "helped"), "eat-01": ("ate", "eat", "eaten"),
              "watch-01": ("watched", "watch", "watched"), "call-01": ("called", "call", "called")}
DITRANSITIVE = {"give-01": ("gave", "give"), "send-01": ("sent", "send"),
                "show-01": ("showed", "show"), "throw-01": ("threw", "throw"),
                "bring-01": ("brought", "bring")}


def P(tag, word):
    return Tree(tag, [word])


class _Builder:
    def __init__(self, rng):
        self.rng = rng
        self.nodes, self.edges, self.used = {}, [], set()
        self.names = set()

    def var(self, concept):
        base = concept[0].lower()
        name, k = base, 2
        while name in self.used:
            name, k = f"{base}{k}", k + 1
        self.used.add(name)
        self.nodes[name] = concept
        return name

    def edge(self, src, role, target, defining=True):
        self.edges.append(Edge(src, role, target, defining))

    # ------------------------------------------------------------- NPs
    def det(self, next_word):
        d = self.rng.choice(["the", "a"])
        if d == "a" and next_word[0] in "aeiou":
            d = "an"
        return P("DT", d)

    def entity(self, parent, role, pool, allow_name=True, allow_adj=True, allow_quant=False):
        """Add an entity node under ``parent``; returns ``(var, NP tree)``."""
        r = self.rng.random()
        if allow_name and r < 0.2:
            # distinct people get distinct names so placeholders stay unambiguous
            name = self.rng.choice([n for n in NAMES if n[0] not in self.names])
            self.names.add(name[0])
            v = self.var("person")
            if parent:
                self.edge(parent, role, Var(v))
            n = self.var("name")
            self.edge(v, ":name", Var(n))
            for i, w in enumerate(name, 1):
                self.edge(n, f":op{i}", Literal(w))
            return v, Tree("NP", [P("NNP", w) for w in name])
        if allow_quant and r < 0.35:
            noun = self.rng.choice(sorted(OBJECTS))
            num = self.rng.choice(NUMBERS)
            v = self.var(noun)
            if parent:
                self.edge(parent, role, Var(v))
            self.edge(v, ":quant", Const(num))
            return v, Tree("NP", [P("CD", num), P("NNS", OBJECTS[noun])])
        noun = self.rng.choice(pool)
        v = self.var(noun)
        if parent:
            self.edge(parent, role, Var(v))
        if allow_adj and self.rng.random() < 0.25:
            adj = self.rng.choice(ADJECTIVES)
            a = self.var(adj)
            self.edge(v, ":mod", Var(a))
            return v, Tree("NP", [self.det(adj), P("JJ", adj), P("NN", noun)])
        return v, Tree("NP", [self.det(noun), P("NN", noun)])

    def location(self, parent):
        place = self.rng.choice(PLACES)
        v = self.var(place)
        self.edge(parent, ":location", Var(v))
        return Tree("PP", [P("IN", "in"), Tree("NP", [self.det(place), P("NN", place)])])


def _clause(b: _Builder, rng):
    """Build one AMR and a lexicalised S tree."""
    kind = rng.choice(["intrans", "trans", "trans", "ditrans", "want"])
    negate = rng.random() < 0.15
    has_loc = kind != "want" and rng.random() < 0.3
    if kind == "intrans":
        concept = rng.choice(sorted(INTRANSITIVE))
        past, base = INTRANSITIVE[concept]
        root = b.var(concept)
        _, subj = b.entity(root, ":ARG0", AGENTS)
        vp = [P("VBD", "did"), P("RB", "not"), Tree("VP", [P("VB", base)])] if negate \
            else [P("VBD", past)]
        subj_np, vp_children = subj, vp
    elif kind == "trans":
        concept = rng.choice(sorted(TRANSITIVE))
        past, base, part = TRANSITIVE[concept]
        root = b.var(concept)
        _, subj = b.entity(root, ":ARG0", AGENTS)
        _, obj = b.entity(root, ":ARG1", AGENTS + sorted(OBJECTS), allow_quant=True)
        if negate:
            subj_np = subj
            vp_children = [P("VBD", "did"), P("RB", "not"), Tree("VP", [P("VB", base), obj])]
        elif rng.random() < 0.35:
            subj_np = obj
            vp_children = [P("VBD", "was"),
                           Tree("VP", [P("VBN", part), Tree("PP", [P("IN", "by"), subj])])]
        else:
            subj_np, vp_children = subj, [P("VBD", past), obj]
    elif kind == "ditrans":
        concept = rng.choice(sorted(DITRANSITIVE))
        past, base = DITRANSITIVE[concept]
        root = b.var(concept)
        _, subj = b.entity(root, ":ARG0", AGENTS)
        _, obj = b.entity(root, ":ARG1", sorted(OBJECTS), allow_name=False, allow_quant=True)
        _, recip = b.entity(root, ":ARG2", AGENTS)
        verb = P("VB", base) if negate else P("VBD", past)
        if rng.random() < 0.5:
            inner = [verb, recip, obj]
        else:
            inner = [verb, obj, Tree("PP", [P("TO", "to"), recip])]
        vp_children = [P("VBD", "did"), P("RB", "not"), Tree("VP", inner)] if negate else inner
        subj_np = subj
    else:
        root = b.var("want-01")
        agent, subj = b.entity(root, ":ARG0", AGENTS)
        if rng.random() < 0.5:
            concept = rng.choice(sorted(INTRANSITIVE))
            base = INTRANSITIVE[concept][1]
            inner = b.var(concept)
            b.edge(root, ":ARG1", Var(inner))
            b.edge(inner, ":ARG0", Var(agent), defining=False)
            comp = Tree("VP", [P("VB", base)])
        else:
            concept = rng.choice(sorted(TRANSITIVE))
            base = TRANSITIVE[concept][1]
            inner = b.var(concept)
            b.edge(root, ":ARG1", Var(inner))
            b.edge(inner, ":ARG0", Var(agent), defining=False)
            _, obj = b.entity(inner, ":ARG1", AGENTS + sorted(OBJECTS), allow_quant=True)
            comp = Tree("VP", [P("VB", base), obj])
        inf = Tree("S", [Tree("VP", [P("TO", "to"), comp])])
        vp_children = ([P("VBD", "did"), P("RB", "not"), Tree("VP", [P("VB", "want"), inf])]
                       if negate else [P("VBD", "wanted"), inf])
        subj_np = subj
    if negate:
        b.edge(root, ":polarity", Const("-"))
    children = [subj_np, Tree("VP", vp_children)]
    if has_loc:
        pp = b.location(root)
        if rng.random() < 0.3:
            children = [pp, P(",", ",")] + children
        else:
            children[1].children.append(pp)
    tree = Tree("S", children + [P(".", ".")])
    return AmrGraph(root, b.nodes, b.edges), tree


def generate_corpus(n=200, seed=13):
    """``n`` examples with distinct preprocessed AMR token sequences."""
    rng = random.Random(seed)
    seen = set()
    out = []
    while len(out) < n:
        graph, tree = _clause(_Builder(rng), rng)
        rec = make_record("x", graph, "( " + str(tree) + ")")
        key = tuple(rec["amr_tokens"])
        if key in seen:
            continue
        seen.add(key)
        words = tree.leaves()
        sent = " ".join(_words(tree))
        out.append({"id": f"synth.{len(out) + 1:04d}", "amr": print_penman(graph),
                    "parse": "( " + str(tree) + ")", "snt": sent, "n_words": len(words)})
    return out


def _words(t):
    out = []
    for c in t.children:
        if isinstance(c, Tree):
            out.extend(_words(c))
        else:
            out.append(c)
    return out


# the test split is larger than dev so held-out BLEU comparisons are not
# dominated by a handful of sentences
SPLITS = {"train": (0, 150), "dev": (150, 175), "test": (175, 400), "train50": (0, 50)}


def write_corpus(outdir, n=400, seed=13):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(n, seed)
    for split, (lo, hi) in SPLITS.items():
        part = corpus[lo:hi]
        with open(outdir / f"{split}.amr", "w", encoding="utf-8") as f:
            for ex in part:
                f.write(f"# ::id {ex['id']}\n# ::snt {ex['snt']}\n{ex['amr']}\n\n")
        with open(outdir / f"{split}.parse", "w", encoding="utf-8") as f:
            for ex in part:
                f.write(ex["parse"] + "\n")
    return corpus


def data_dir():
    return Path(__file__).parent / "data" / "synthetic"


if __name__ == "__main__":
    write_corpus(sys.argv[1] if len(sys.argv) > 1 else data_dir())

"""Delexicalised constituency trees and their OPEN/TERMINAL/CLOSE linearization.

Actions are plain strings: ``"(NP"`` opens a constituent, ``")"`` closes the
current one, anything else is a POS-tag terminal.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

CLOSE = ")"
MAX_DEPTH = 40
MAX_ACTIONS = 512
ROOT_WRAP = "X"


class TreeError(ValueError):
    pass


@dataclass
class Tree:
    label: str
    children: list = field(default_factory=list)

    def leaves(self):
        out = []
        for c in self.children:
            out.extend(c.leaves() if isinstance(c, Tree) else [c])
        return out

    def depth(self):
        return 1 + max((c.depth() if isinstance(c, Tree) else 0) for c in self.children)

    def __str__(self):
        return "(" + " ".join([self.label] + [str(c) for c in self.children]) + ")"


def is_open(action):
    return action.startswith("(")


def open_label(action):
    return action[1:]


# --------------------------------------------------------------------- reading

def _strip_label(label):
    if label.startswith("-") or not label:
        return label
    return re.split(r"[-=]", label)[0] or label


def parse_ptb(text: str) -> Tree:
    """Read a lexicalised bracketed parse; ``( (S ...))`` wrappers are unwrapped."""
    tokens = [(m.group(), m.start()) for m in re.finditer(r"\(|\)|[^\s()]+", text)]
    if not tokens:
        raise TreeError("empty parse")
    pos = 0

    def node():
        nonlocal pos
        if tokens[pos][0] != "(":
            raise TreeError(f"expected '(' at position {tokens[pos][1]}")
        start = tokens[pos][1]
        pos += 1
        label = ""
        if pos < len(tokens) and tokens[pos][0] not in "()":
            label = tokens[pos][0]
            pos += 1
        children = []
        while True:
            if pos >= len(tokens):
                raise TreeError(f"unbalanced parse: constituent at position {start} never closed")
            tok, at = tokens[pos]
            if tok == ")":
                pos += 1
                break
            if tok == "(":
                children.append(node())
            else:
                children.append(tok)
                pos += 1
        if not children:
            raise TreeError(f"empty constituent at position {start}")
        return Tree(label, children)

    t = node()
    if pos != len(tokens):
        raise TreeError(f"unbalanced parse: trailing material at position {tokens[pos][1]}")
    while t.label == "" and len(t.children) == 1 and isinstance(t.children[0], Tree):
        t = t.children[0]
    cleaned = _clean(t)
    if cleaned is None:
        raise TreeError("parse contains only empty elements")
    return cleaned


def _clean(t):
    """Drop -NONE- traces and functional tags; prune constituents left empty."""
    if t.label == "-NONE-":
        return None
    children = []
    for c in t.children:
        if isinstance(c, Tree):
            c = _clean(c)
            if c is None:
                continue
        children.append(c)
    if not children:
        return None
    return Tree(_strip_label(t.label), children)


def is_preterminal(t):
    return isinstance(t, Tree) and all(not isinstance(c, Tree) for c in t.children)


def delexicalise(t: Tree):
    """Replace each preterminal by its bare POS tag.

    Returns ``(tree, words)``; ``tree`` is a plain string when the input is a
    single preterminal.
    """
    words: list[str] = []

    def walk(node):
        if is_preterminal(node):
            words.extend(node.children)
            return node.label
        return Tree(node.label, [walk(c) for c in node.children])

    return walk(t), words


# ------------------------------------------------------------- linearization

def linearize_tree(t) -> list[str]:
    if isinstance(t, str):
        t = Tree(ROOT_WRAP, [t])
    out = []

    def walk(node):
        if isinstance(node, Tree):
            out.append("(" + node.label)
            for c in node.children:
                walk(c)
            out.append(CLOSE)
        else:
            out.append(node)

    walk(t)
    return out


def delinearize(actions) -> Tree:
    if not actions:
        raise TreeError("empty action sequence")
    if not is_open(actions[0]):
        raise TreeError(f"action sequence must start with OPEN, got {actions[0]!r}")
    stack: list[Tree] = []
    root = None
    for i, a in enumerate(actions):
        if root is not None:
            raise TreeError(f"actions continue after the root closed (index {i})")
        if is_open(a):
            node = Tree(open_label(a))
            if stack:
                stack[-1].children.append(node)
            stack.append(node)
        elif a == CLOSE:
            node = stack.pop()
            if not node.children:
                raise TreeError(f"empty constituent {node.label!r} closed at index {i}")
            if not stack:
                root = node
        else:
            stack[-1].children.append(a)
    if root is None:
        raise TreeError(f"unbalanced action sequence: {len(stack)} constituent(s) left open")
    return root


# ---------------------------------------------------------------- automaton

@dataclass(frozen=True)
class ActionAutomaton:
    """Tracks which actions keep a partial action sequence well formed.

    ``has_child`` holds, per open constituent, whether it already has a
    child; instances are immutable so beam hypotheses can share them.
    """
    open_depth: int = 0
    n_actions: int = 0
    has_child: tuple = ()
    finished: bool = False
    max_depth: int = MAX_DEPTH
    max_actions: int = MAX_ACTIONS

    def allowed_kinds(self):
        """Subset of ``{"open", "terminal", "close"}`` permitted next."""
        if self.finished:
            raise TreeError("automaton already finished")
        if self.open_depth == 0:
            return {"open"}
        remaining = self.max_actions - self.n_actions
        kinds = set()
        # an action is allowed only if the sequence can still be closed within the cap
        if self.open_depth < self.max_depth and self.open_depth + 2 <= remaining - 1:
            kinds.add("open")
        if self.open_depth <= remaining - 1:
            kinds.add("terminal")
        if self.has_child[-1]:
            kinds.add("close")
        return kinds

    def step(self, action) -> "ActionAutomaton":
        kind = "open" if is_open(action) else "close" if action == CLOSE else "terminal"
        if kind not in self.allowed_kinds():
            raise TreeError(f"action {action!r} not permitted here")
        n = self.n_actions + 1
        if kind == "open":
            hc = self.has_child[:-1] + (True,) if self.has_child else ()
            return ActionAutomaton(self.open_depth + 1, n, hc + (False,), False,
                                   self.max_depth, self.max_actions)
        if kind == "terminal":
            return ActionAutomaton(self.open_depth, n, self.has_child[:-1] + (True,), False,
                                   self.max_depth, self.max_actions)
        depth = self.open_depth - 1
        return ActionAutomaton(depth, n, self.has_child[:-1], depth == 0,
                               self.max_depth, self.max_actions)


def permissible_actions(state: ActionAutomaton, actions) -> set[str]:
    """Members of the action inventory ``actions`` that may come next."""
    kinds = state.allowed_kinds()
    out = set()
    for a in actions:
        kind = "open" if is_open(a) else "close" if a == CLOSE else "terminal"
        if kind in kinds:
            out.add(a)
    return out

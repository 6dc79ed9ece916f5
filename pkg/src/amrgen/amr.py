"""PENMAN-notation AMR graphs: reading, printing, anonymization, linearization."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

ENTITY_TYPES = ("person", "organization", "location", "country", "city")
PLACEHOLDER_TYPES = ENTITY_TYPES + ("date", "quantity", "other")
PLACEHOLDER_RE = re.compile(r"^(%s)_\d+$" % "|".join(PLACEHOLDER_TYPES))
SENSE_RE = re.compile(r"-\d+$")


class PenmanError(ValueError):
    def __init__(self, msg, line=None, col=None):
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(msg + where)
        self.line, self.col = line, col


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: str


@dataclass(frozen=True)
class Literal:
    value: str


@dataclass
class Edge:
    source: str
    role: str
    target: Var | Const | Literal
    # True where the target variable's subtree is written out in-line
    defining: bool = False


@dataclass
class AmrGraph:
    root: str
    nodes: dict[str, str] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)

    def outgoing(self, var):
        return [e for e in self.edges if e.source == var]

    def in_degree(self, var):
        return sum(1 for e in self.edges if e.target == Var(var))

    def is_acyclic(self):
        state = {}

        def visit(v):
            state[v] = 1
            for e in self.outgoing(v):
                if isinstance(e.target, Var):
                    s = state.get(e.target.name, 0)
                    if s == 1 or (s == 0 and not visit(e.target.name)):
                        return False
            state[v] = 2
            return True

        return visit(self.root)


# ------------------------------------------------------------------- reading

_TOKEN_RE = re.compile(r'\s+|(?P<tok>\(|\)|/|"(?:[^"\\]|\\.)*"|:[^\s()"/]*|[^\s()"/:][^\s()"/]*)')


def _tokenize(text):
    tokens = []
    pos = 0
    line_starts = [0] + [m.end() for m in re.finditer("\n", text)]

    def loc(offset):
        line = max(i for i, s in enumerate(line_starts) if s <= offset)
        return line + 1, offset - line_starts[line] + 1

    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PenmanError(f"unexpected character {text[pos]!r}", *loc(pos))
        if m.group("tok") is not None:
            tokens.append((m.group("tok"), *loc(pos)))
        pos = m.end()
    return tokens


def parse_penman(text: str) -> AmrGraph:
    """Read a single PENMAN expression such as ``(g / give-01 :ARG0 (i / I))``."""
    text = "\n".join(ln for ln in text.splitlines() if not ln.lstrip().startswith("#"))
    tokens = _tokenize(text)
    if not tokens:
        raise PenmanError("empty AMR")
    nodes: dict[str, str] = {}
    edges: list[Edge] = []
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, None, None)

    def expect(what):
        nonlocal pos
        tok, line, col = peek()
        if tok is None:
            last = tokens[-1]
            raise PenmanError(f"unbalanced parentheses: expected {what!r} at end of input",
                              last[1], last[2])
        if tok != what:
            raise PenmanError(f"expected {what!r}, found {tok!r}", line, col)
        pos += 1

    def node():
        nonlocal pos
        expect("(")
        var, line, col = peek()
        if var is None or var in "()/" or var.startswith(":"):
            raise PenmanError("expected variable name", line, col)
        pos += 1
        if var in nodes:
            raise PenmanError(f"duplicate variable definition {var!r}", line, col)
        expect("/")
        concept, line, col = peek()
        if concept is None or concept in "()/" or concept.startswith(":"):
            raise PenmanError("missing concept after '/'", line, col)
        pos += 1
        nodes[var] = concept.strip('"')
        while True:
            tok, line, col = peek()
            if tok == ")":
                pos += 1
                return var
            if tok is None:
                raise PenmanError("unbalanced parentheses: missing ')'", tokens[-1][1], tokens[-1][2])
            if not tok.startswith(":") or len(tok) < 2:
                raise PenmanError(f"expected role, found {tok!r}", line, col)
            pos += 1
            role = tok
            tok, line, col = peek()
            if tok == "(":
                child = node()
                edges.append(Edge(var, role, Var(child), defining=True))
            elif tok is None or tok in ")/" or tok.startswith(":"):
                raise PenmanError(f"missing value for role {role}", line, col)
            else:
                pos += 1
                if tok.startswith('"'):
                    edges.append(Edge(var, role, Literal(tok[1:-1])))
                else:
                    edges.append(Edge(var, role, Const(tok)))

    root = node()
    if pos != len(tokens):
        tok, line, col = tokens[pos]
        raise PenmanError(f"unbalanced parentheses: trailing {tok!r}", line, col)
    # bare symbols naming a defined variable are re-entrant references
    for e in edges:
        if isinstance(e.target, Const) and e.target.value in nodes:
            e.target = Var(e.target.value)
    return AmrGraph(root=root, nodes=nodes, edges=edges)


def print_penman(g: AmrGraph, indent: int | None = 4) -> str:
    """Serialise back to PENMAN; ``indent=None`` gives a single line."""

    def render(var, depth):
        parts = [f"({var} / {g.nodes[var]}"]
        for e in g.outgoing(var):
            t = e.target
            if isinstance(t, Var):
                val = render(t.name, depth + 1) if e.defining else t.name
            elif isinstance(t, Literal):
                val = f'"{t.value}"'
            else:
                val = t.value
            sep = " " if indent is None else "\n" + " " * (indent * (depth + 1))
            parts.append(f"{sep}{e.role} {val}")
        return "".join(parts) + ")"

    return render(g.root, 0)


@dataclass
class AmrEntry:
    id: str
    graph: AmrGraph
    sentence: str | None
    text: str


def read_amr_file(path) -> list[AmrEntry]:
    """Read blank-line separated PENMAN blocks with ``# ::id`` / ``# ::snt`` metadata."""
    with open(path, encoding="utf-8") as f:
        content = f.read()
    entries = []
    for k, block in enumerate(re.split(r"\n\s*\n", content)):
        if not block.strip():
            continue
        meta = dict(re.findall(r"#\s*::(\w+)\s+([^\n]*?)(?=\s+::\w+|\s*$)", block, re.M))
        body = "\n".join(ln for ln in block.splitlines() if not ln.lstrip().startswith("#"))
        if not body.strip():
            continue
        entries.append(AmrEntry(meta.get("id", f"amr_{k}"), parse_penman(body),
                                meta.get("snt"), body.strip()))
    return entries


# ------------------------------------------------------------- preprocessing

def _placeholder_type(concept):
    return concept if concept in ENTITY_TYPES else "other"


def _dfs_order(g):
    """Variables in linearization order (defining occurrences only)."""
    order = []

    def visit(v):
        order.append(v)
        for e in g.outgoing(v):
            if isinstance(e.target, Var) and e.defining:
                visit(e.target.name)

    visit(g.root)
    return order


def anonymize(g: AmrGraph):
    """Collapse named entities, dates and quantities into typed placeholders.

    Returns a new graph and the table ``placeholder -> surface string``.
    """
    nodes = dict(g.nodes)
    edges = [Edge(e.source, e.role, e.target, e.defining) for e in g.edges]
    counters: dict[str, int] = {}
    table: dict[str, str] = {}
    removed: set[str] = set()

    def fresh(kind, surface):
        k = counters.get(kind, 0)
        counters[kind] = k + 1
        name = f"{kind}_{k}"
        table[name] = surface
        return name

    def subtree(v):
        out = [v]
        for e in edges:
            if e.source == v and isinstance(e.target, Var) and e.defining:
                out.extend(subtree(e.target.name))
        return out

    for var in _dfs_order(g):
        if var in removed:
            continue
        concept = nodes[var]
        name_edges = [e for e in edges if e.source == var and e.role.lower() == ":name"
                      and isinstance(e.target, Var) and nodes.get(e.target.name) == "name"]
        if name_edges:
            name_var = name_edges[0].target.name
            ops = [e for e in edges if e.source == name_var and re.fullmatch(r":op\d+", e.role)]
            ops.sort(key=lambda e: int(e.role[3:]))
            surface = " ".join(e.target.value for e in ops)
            nodes[var] = fresh(_placeholder_type(concept), surface)
            for v in subtree(name_var):
                removed.add(v)
            edges = [e for e in edges if e is not name_edges[0] and e.source not in removed]
        elif concept == "date-entity":
            parts = [e.target.value for e in edges if e.source == var
                     and not isinstance(e.target, Var)]
            nodes[var] = fresh("date", " ".join(parts))
            for v in subtree(var)[1:]:
                removed.add(v)
            edges = [e for e in edges if e.source != var and e.source not in removed]
        for e in edges:
            if (e.source == var and e.role.lower() == ":quant"
                    and isinstance(e.target, Const) and _is_number(e.target.value)):
                e.target = Const(fresh("quantity", e.target.value))
    for v in removed:
        nodes.pop(v, None)
    return AmrGraph(g.root, nodes, edges), table


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _concept_token(concept):
    if PLACEHOLDER_RE.match(concept):
        return concept
    return SENSE_RE.sub("", concept).lower()


@dataclass
class LinearizedAmr:
    tokens: list[str]
    anonymization_table: dict[str, str]


def linearize(g: AmrGraph, table: dict[str, str] | None = None) -> LinearizedAmr:
    """Depth-first token sequence, e.g. ``give :arg0 i :arg1 ball :arg2 dog``.

    Subtrees below the root that have outgoing edges are bracketed;
    re-entrant references repeat the target's concept token.
    """
    tokens: list[str] = []

    def visit(var, bracket):
        # wiki links are dropped (no wikification)
        out = [e for e in g.outgoing(var) if e.role.lower() != ":wiki"]
        if bracket and out:
            tokens.append("(")
        tokens.append(_concept_token(g.nodes[var]))
        for e in out:
            tokens.append(e.role.lower())
            t = e.target
            if isinstance(t, Var):
                if e.defining:
                    visit(t.name, True)
                else:
                    tokens.append(_concept_token(g.nodes[t.name]))
            else:
                tokens.append(t.value)
        if bracket and out:
            tokens.append(")")

    visit(g.root, False)
    return LinearizedAmr(tokens, dict(table or {}))


def anonymize_tokens(tokens, table):
    """Replace surface spans listed in ``table`` by their placeholders (longest first)."""
    spans = sorted(((v.split(), k) for k, v in table.items() if v.strip()),
                   key=lambda s: -len(s[0]))
    out = []
    i = 0
    while i < len(tokens):
        for words, ph in spans:
            if tokens[i:i + len(words)] == words:
                out.append(ph)
                i += len(words)
                break
        else:
            out.append(tokens[i])
            i += 1
    return out


def deanonymize(tokens, table):
    """Restore placeholders from ``table``; returns ``(tokens, n_unresolved)``."""
    out = []
    missing = 0
    for tok in tokens:
        if tok in table:
            out.extend(table[tok].split())
        else:
            if PLACEHOLDER_RE.match(tok):
                missing += 1
            out.append(tok)
    return out, missing


def preprocess_amr(g: AmrGraph) -> LinearizedAmr:
    anon, table = anonymize(g)
    return linearize(anon, table)

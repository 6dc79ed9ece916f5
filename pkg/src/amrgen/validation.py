"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

from .amr import AmrGraph, parse_penman
from .preprocess import make_record

_REQUIRED = {
    "joint": ("amr_tokens", "parse_actions", "words"),
    "baseline_s2s_copy": ("amr_tokens", "words"),
    "amr2parse": ("amr_tokens", "parse_actions"),
    "text2parse": ("words", "parse_actions"),
    "unconditional_lm": ("parse_actions",),
}


def _as_list(X, name="X"):
    if isinstance(X, (str, bytes, dict, AmrGraph)):
        raise TypeError(f"{name} must be a sequence of examples, got a single {type(X).__name__}")
    try:
        out = list(X)
    except TypeError:
        raise TypeError(f"{name} must be iterable, got {type(X).__name__}") from None
    if not out:
        raise ValueError(f"{name} is empty")
    return out


def check_graphs(X):
    """PENMAN strings or :class:`AmrGraph` objects -> list of graphs."""
    graphs = []
    for i, x in enumerate(_as_list(X)):
        if isinstance(x, AmrGraph):
            graphs.append(x)
        elif isinstance(x, str):
            graphs.append(parse_penman(x))
        else:
            raise TypeError(f"X[{i}]: expected PENMAN text or AmrGraph, got {type(x).__name__}")
    return graphs


def check_records(X, y=None, task=None, need_targets=True):
    """Normalise estimator input into preprocessed records.

    ``X`` is either preprocessed records (dicts) or AMRs (PENMAN text or
    graphs).  For AMR input, ``y`` may hold bracketed lexicalised parses,
    which provide both the target words and the target tree.
    """
    X = _as_list(X)
    if all(isinstance(x, dict) for x in X):
        if y is not None:
            raise ValueError("y must be None when X holds preprocessed records")
        records = X
    elif any(isinstance(x, dict) for x in X):
        raise TypeError("X mixes preprocessed records with other input types")
    else:
        graphs = check_graphs(X)
        if y is not None:
            y = _as_list(y, "y")
            if len(y) != len(graphs):
                raise ValueError(f"X has {len(graphs)} examples but y has {len(y)}")
        records = [make_record(f"ex{i}", g, None if y is None else y[i])
                   for i, g in enumerate(graphs)]
    if task is not None and need_targets:
        for i, r in enumerate(records):
            missing = [k for k in _REQUIRED[task] if k not in r]
            if missing:
                raise ValueError(f"example {i} ({r.get('id')!r}) lacks {missing} "
                                 f"needed for task {task!r}")
    elif task is not None:
        src = {"text2parse": "words", "unconditional_lm": None}.get(task, "amr_tokens")
        for i, r in enumerate(records):
            if src and src not in r:
                raise ValueError(f"example {i} ({r.get('id')!r}) lacks {src!r}")
    return records

"""Corpus BLEU and aligned span F1 for predicted constituency trees."""
from __future__ import annotations

import math
from collections import Counter

from .tree import Tree, delinearize


class EvaluationError(ValueError):
    pass


# ------------------------------------------------------------------------ BLEU

def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses, references, max_n=4):
    """Clipped n-gram matches/totals and lengths summed over the corpus."""
    if len(hypotheses) != len(references):
        raise EvaluationError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        refs = [ref] if not ref or isinstance(ref[0], str) else ref
        hyp_len += len(hyp)
        # closest reference length, shorter one on ties
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            h = _ngrams(hyp, n)
            best = Counter()
            for r in refs:
                best |= _ngrams(r, n)
            matches[n - 1] += sum(min(c, best[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def corpus_bleu(hypotheses, references, max_n=4):
    """Unsmoothed corpus BLEU-4 on whitespace-tokenised input, in [0, 100].

    Each reference may be a token list or a list of token lists.
    """
    matches, totals, c, r = bleu_stats(hypotheses, references, max_n)
    if c == 0 or any(m == 0 for m in matches) or any(t == 0 for t in totals):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)


# ------------------------------------------------------------------- alignment

def lcs_table(a, b):
    """``L[i][j]`` = LCS length of suffixes ``a[i:]`` and ``b[j:]``."""
    L = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) - 1, -1, -1):
        for j in range(len(b) - 1, -1, -1):
            L[i][j] = L[i + 1][j + 1] + 1 if a[i] == b[j] else max(L[i + 1][j], L[i][j + 1])
    return L


def align_terminals(pred, ref):
    """Minimum insert/delete alignment of two tag sequences.

    Returns a dict ``pred position -> ref position``.  Matching tags are
    aligned as early as possible; a tie between skipping ``pred[i]`` and
    skipping ``ref[j]`` skips the lexicographically larger tag, which keeps
    the alignment mirror-symmetric when the arguments are swapped.
    """
    L = lcs_table(pred, ref)
    i = j = 0
    out = {}
    while i < len(pred) and j < len(ref):
        if pred[i] == ref[j]:
            out[i] = j
            i += 1
            j += 1
        elif L[i + 1][j] > L[i][j + 1]:
            i += 1
        elif L[i + 1][j] < L[i][j + 1]:
            j += 1
        elif pred[i] > ref[j]:
            i += 1
        else:
            j += 1
    return out


def edit_count(pred, ref, alignment=None):
    alignment = align_terminals(pred, ref) if alignment is None else alignment
    return len(pred) + len(ref) - 2 * len(alignment)


# -------------------------------------------------------------------- spans

def as_tree(t):
    if isinstance(t, (Tree, str)):
        return t
    return delinearize(list(t))


def terminals(t):
    t = as_tree(t)
    return [t] if isinstance(t, str) else t.leaves()


def spans(t, include_unit=False):
    """Counter of ``(start, end, label)`` constituents over terminal positions."""
    t = as_tree(t)
    out = Counter()

    def walk(node, start):
        if isinstance(node, str):
            return start + 1
        end = start
        for c in node.children:
            end = walk(c, end)
        if include_unit or end - start > 1 or start == 0 and end == n_terms:
            out[(start, end, node.label)] += 1
        return end

    n_terms = len(terminals(t))
    walk(t, 0)
    return out


def _matched(pred_spans, ref_spans, alignment, n_ref, labelled):
    """Number of predicted spans that project onto an identical reference span."""
    aligned_ref = set(alignment.values())
    projected = Counter()
    for (s, e, lab), cnt in pred_spans.items():
        if all(k in alignment for k in range(s, e)):
            key = (alignment[s], alignment[e - 1] + 1) + ((lab,) if labelled else ())
            projected[key] += cnt
    reference = Counter()
    for (s, e, lab), cnt in ref_spans.items():
        if all(k in aligned_ref for k in range(s, e)):
            reference[(s, e) + ((lab,) if labelled else ())] += cnt
    return sum((projected & reference).values())


def _prf(matched, n_pred, n_ref):
    p = matched / n_pred if n_pred else 0.0
    r = matched / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return {"precision": p, "recall": r, "f1": f}


def span_counts(pred, ref, labelled=True, include_unit=False):
    pred, ref = as_tree(pred), as_tree(ref)
    alignment = align_terminals(terminals(pred), terminals(ref))
    ps, rs = spans(pred, include_unit), spans(ref, include_unit)
    m = _matched(ps, rs, alignment, len(terminals(ref)), labelled)
    return m, sum(ps.values()), sum(rs.values())


def span_f1(pred, ref, labelled=True, include_unit=False):
    """Precision/recall/F1 of constituent spans after terminal alignment.

    Trees may be given as :class:`Tree` objects or action sequences.
    """
    return _prf(*span_counts(pred, ref, labelled, include_unit))


def corpus_span_f1(preds, refs, labelled=True, include_unit=False):
    """Micro-averaged span scores over a corpus."""
    if len(preds) != len(refs):
        raise EvaluationError(f"{len(preds)} predictions but {len(refs)} references")
    m = n_p = n_r = 0
    for p, r in zip(preds, refs):
        a, b, c = span_counts(p, r, labelled, include_unit)
        m, n_p, n_r = m + a, n_p + b, n_r + c
    return _prf(m, n_p, n_r)


def evaluate_parse_task(outputs: dict, references: dict, include_unit=False):
    """Table of labelled/unlabelled F1 (in percent) per model.

    ``outputs`` maps a model name to ``{id: actions}``; ``references`` maps
    ``id -> actions``.
    """
    report = {}
    for name in sorted(outputs):
        preds = outputs[name]
        if set(preds) != set(references):
            missing = sorted(set(references) ^ set(preds))
            raise EvaluationError(f"{name}: ids differ from references, e.g. {missing[:3]}")
        ids = sorted(references)
        lab = corpus_span_f1([preds[i] for i in ids], [references[i] for i in ids], True,
                             include_unit)
        unl = corpus_span_f1([preds[i] for i in ids], [references[i] for i in ids], False,
                             include_unit)
        report[name] = {"labelled_f1": 100 * lab["f1"], "unlabelled_f1": 100 * unl["f1"],
                        "n_examples": len(ids)}
    return report


def format_table(report):
    lines = [f"{'model':<20} {'unlabelled F1':>14} {'labelled F1':>12}"]
    for name, row in report.items():
        lines.append(f"{name:<20} {row['unlabelled_f1']:>14.1f} {row['labelled_f1']:>12.1f}")
    return "\n".join(lines)

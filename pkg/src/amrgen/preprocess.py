"""Turn aligned AMR and parse files into the JSONL corpus the models read."""
from __future__ import annotations

import json
from collections import Counter

from .amr import anonymize, anonymize_tokens, linearize, read_amr_file
from .tree import delexicalise, linearize_tree, parse_ptb


class DataError(ValueError):
    pass


def make_record(entry_id, graph, parse_text=None, sentence=None):
    anon, table = anonymize(graph)
    lin = linearize(anon, table)
    rec = {"id": entry_id, "amr_tokens": lin.tokens, "anon_table": lin.anonymization_table}
    if sentence is not None:
        rec["sentence_tokens"] = anonymize_tokens(sentence.split(), table)
    if parse_text is not None:
        tree, words = delexicalise(parse_ptb(parse_text))
        actions = linearize_tree(tree)
        rec["parse_actions"] = actions
        rec["pos_tags"] = [a for a in actions if not a.startswith("(") and a != ")"]
        rec["words"] = anonymize_tokens(words, table)
        rec.setdefault("sentence_tokens", rec["words"])
    return rec


def read_parse_file(path):
    with open(path, encoding="utf-8") as f:
        return [ln.strip() for ln in f if ln.strip()]


def preprocess_files(amr_path, parse_path=None):
    """Records ``{id, amr_tokens, anon_table, sentence_tokens, parse_actions, pos_tags, words}``."""
    entries = read_amr_file(amr_path)
    parses = read_parse_file(parse_path) if parse_path else None
    if parses is not None and len(parses) != len(entries):
        k = min(len(parses), len(entries))
        first = entries[k].id if k < len(entries) else f"parse line {k + 1}"
        raise DataError(f"{len(entries)} AMRs but {len(parses)} parses; "
                        f"first unmatched example: {first}")
    return [make_record(e.id, e.graph, parses[i] if parses else None, e.sentence)
            for i, e in enumerate(entries)]


def corpus_stats(records):
    amr, words, lengths = Counter(), Counter(), []
    for r in records:
        amr.update(r["amr_tokens"])
        words.update(r.get("words", r.get("sentence_tokens", [])))
        if "parse_actions" in r:
            lengths.append(len(r["parse_actions"]))
    singletons = sum(1 for c in words.values() if c == 1)
    return {
        "examples": len(records),
        "amr_vocab": len(amr),
        "word_vocab": len(words),
        "word_singletons": singletons,
        "singleton_fraction": singletons / len(words) if words else 0.0,
        "action_length_mean": sum(lengths) / len(lengths) if lengths else 0.0,
        "action_length_max": max(lengths, default=0),
    }


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(ln) for ln in f if ln.strip()]

import random

import pytest

from amrgen.amr import (Const, Literal, PenmanError, Var, anonymize, anonymize_tokens,
                        deanonymize, linearize, parse_penman, preprocess_amr, print_penman,
                        read_amr_file)
from amrgen.synthetic import data_dir

GIVE = "(g / give-01 :ARG0 (i / I) :ARG1 (b / ball) :ARG2 (d / dog))"
WANT = "(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-01 :ARG0 b))"


def test_parse_give_example():
    g = parse_penman(GIVE)
    assert g.root == "g"
    assert g.nodes == {"g": "give-01", "i": "I", "b": "ball", "d": "dog"}
    assert [(e.source, e.role, e.target) for e in g.edges] == [
        ("g", ":ARG0", Var("i")), ("g", ":ARG1", Var("b")), ("g", ":ARG2", Var("d"))]


def test_parse_single_node():
    g = parse_penman("(a / alpha)")
    assert g.nodes == {"a": "alpha"} and g.edges == []


def test_reentrancy_in_degree():
    g = parse_penman(WANT)
    assert g.in_degree("b") == 2
    assert g.in_degree("g") == 1
    assert g.is_acyclic()


def test_constants_and_literals():
    g = parse_penman('(r / run-02 :polarity - :ARG0 (p / person :name (n / name :op1 "Bo Li")))')
    roles = {e.role: e.target for e in g.edges}
    assert roles[":polarity"] == Const("-")
    assert roles[":op1"] == Literal("Bo Li")


@pytest.mark.parametrize("text,fragment", [
    ("(a / alpha", "unbalanced"),
    ("(a / alpha))", "unbalanced"),
    ("(a / alpha :ARG0 (a / beta))", "duplicate"),
    ("(a / :ARG0 (b / beta))", "concept"),
    ("(a / alpha :ARG0)", "value"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(PenmanError) as info:
        parse_penman(text)
    assert fragment in str(info.value).lower()
    assert info.value.line is not None and info.value.col is not None


def test_error_position_points_at_second_line():
    with pytest.raises(PenmanError) as info:
        parse_penman("(a / alpha\n   :ARG0 (a / beta))")
    assert info.value.line == 2


def test_print_parse_fixed_point_examples():
    for text in (GIVE, WANT, '(r / run-02 :polarity - :ARG0 (p / person :name (n / name :op1 "Bo")))'):
        once = print_penman(parse_penman(text))
        assert print_penman(parse_penman(once)) == once
        assert parse_penman(once) == parse_penman(text)


def test_print_single_line():
    assert print_penman(parse_penman(GIVE), indent=None) == GIVE


def test_print_parse_fixed_point_on_corpus():
    for split in ("train", "dev", "test"):
        for entry in read_amr_file(data_dir() / f"{split}.amr"):
            once = print_penman(entry.graph)
            assert print_penman(parse_penman(once)) == once


def test_linearize_give():
    g = parse_penman(GIVE)
    anon, table = anonymize(g)
    assert table == {} and anon == g
    assert linearize(anon).tokens == "give :arg0 i :arg1 ball :arg2 dog".split()


def test_linearize_single_node():
    assert linearize(parse_penman("(a / alpha)")).tokens == ["alpha"]


def test_linearize_brackets_internal_subtree():
    g = parse_penman("(s / say-01 :ARG0 (b / boy :mod (t / tall)) :ARG1 (r / run-02))")
    assert linearize(g).tokens == "say :arg0 ( boy :mod tall ) :arg1 run".split()


def test_linearize_reentrancy_repeats_concept():
    assert linearize(parse_penman(WANT)).tokens == \
        "want :arg0 boy :arg1 ( go :arg0 boy )".split()


def test_linearize_drops_wiki_links():
    g = parse_penman('(v / visit-01 :ARG0 (b / boy) :ARG1 (c / city :wiki "Paris"))')
    assert linearize(g).tokens == "visit :arg0 boy :arg1 city".split()


def test_linearize_ignores_variable_names():
    a = parse_penman("(x / see-01 :ARG0 (y / cat) :ARG1 (z / dog))")
    b = parse_penman("(s / see-01 :ARG0 (c / cat) :ARG1 (d / dog))")
    assert linearize(a).tokens == linearize(b).tokens


def test_anonymize_person():
    g = parse_penman('(w / win-01 :ARG0 (p / person :name (n / name :op1 "Obama")))')
    anon, table = anonymize(g)
    assert table == {"person_0": "Obama"}
    assert anon.nodes == {"w": "win-01", "p": "person_0"}
    assert linearize(anon, table).tokens == ["win", ":arg0", "person_0"]


def test_anonymize_two_people_in_order():
    g = parse_penman('(m / meet-01 :ARG0 (p / person :name (n / name :op1 "Ann" :op2 "Lee"))'
                     ' :ARG1 (q / person :name (n2 / name :op1 "Bob")))')
    anon, table = anonymize(g)
    assert table == {"person_0": "Ann Lee", "person_1": "Bob"}
    assert linearize(anon, table).tokens == ["meet", ":arg0", "person_0", ":arg1", "person_1"]


def test_anonymize_types_and_quantities():
    g = parse_penman('(v / visit-01 :ARG0 (c / city :name (n / name :op1 "Paris"))'
                     ' :ARG1 (b / book :quant 3) :time (d / date-entity :year 2017))')
    anon, table = anonymize(g)
    assert table == {"city_0": "Paris", "quantity_0": "3", "date_0": "2017"}
    toks = linearize(anon, table).tokens
    assert toks == "visit :arg0 city_0 :arg1 ( book :quant quantity_0 ) :time date_0".split()


def test_unknown_entity_type_is_other():
    g = parse_penman('(s / see-01 :ARG1 (b / band :name (n / name :op1 "Abba")))')
    _, table = anonymize(g)
    assert table == {"other_0": "Abba"}


def test_deanonymize_examples():
    assert deanonymize(["person_0", "won"], {"person_0": "Obama"}) == (["Obama", "won"], 0)
    assert deanonymize(["a", "b"], {}) == (["a", "b"], 0)
    assert deanonymize(["person_3", "won"], {"person_0": "X"}) == (["person_3", "won"], 1)


def test_corpus_anonymize_round_trip():
    """Anonymizing reference sentences and restoring them gives the originals back."""
    for entry in read_amr_file(data_dir() / "train.amr"):
        lin = preprocess_amr(entry.graph)
        words = entry.sentence.split()
        anon = anonymize_tokens(words, lin.anonymization_table)
        assert set(lin.anonymization_table) <= set(anon)
        restored, missing = deanonymize(anon, lin.anonymization_table)
        assert restored == words and missing == 0


def test_corpus_tokens_have_no_senses_or_variables():
    import re
    for entry in read_amr_file(data_dir() / "train.amr"):
        lin = preprocess_amr(entry.graph)
        placeholders = {t for t in lin.tokens if re.fullmatch(r"[a-z]+_\d+", t)}
        assert placeholders == set(lin.anonymization_table)
        for tok in lin.tokens:
            assert not re.search(r"-\d\d$", tok), tok
            assert tok not in entry.graph.nodes or tok == entry.graph.nodes.get(tok), tok


def _random_graph(rng):
    concepts = ["run-01", "boy", "girl", "see-01", "tall", "red", "house"]
    count = rng.randint(1, 6)
    names = [f"v{i}" for i in range(count)]
    text = {}

    def build(i, depth):
        parts = [f"({names[i]} / {rng.choice(concepts)}"]
        kids = [j for j in range(i + 1, count) if j not in text and rng.random() < 0.5]
        for j in kids:
            text[j] = True
        for j in kids:
            parts.append(f" :ARG{rng.randint(0, 3)} {build(j, depth + 1)}")
        if i > 0 and rng.random() < 0.3:
            parts.append(f" :mod {names[0]}")
        if rng.random() < 0.2:
            parts.append(" :polarity -")
        return "".join(parts) + ")"

    text[0] = True
    return build(0, 0)


def test_random_graph_round_trips():
    rng = random.Random(4)
    for _ in range(300):
        text = _random_graph(rng)
        g = parse_penman(text)
        assert parse_penman(print_penman(g)) == g
        assert parse_penman(print_penman(g, indent=None)) == g

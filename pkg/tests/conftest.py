import pytest

from amrgen.model import ModelConfig, Seq2SeqModel
from amrgen.preprocess import preprocess_files
from amrgen.synthetic import data_dir
from amrgen.vocab import build_vocabs


def load_split(name):
    d = data_dir()
    return preprocess_files(d / f"{name}.amr", d / f"{name}.parse")


@pytest.fixture(scope="session")
def train_records():
    return load_split("train")


@pytest.fixture(scope="session")
def dev_records():
    return load_split("dev")


@pytest.fixture(scope="session")
def train50_records():
    return load_split("train50")


@pytest.fixture(scope="session")
def vocab(train_records):
    return build_vocabs(train_records)


def tiny_model(vocab, task="joint", seed=0, hidden=8, emb=6):
    cfg = ModelConfig(task=task, emb_size=emb, hidden_size=hidden, gate_hidden=hidden,
                      dropout=0.0, rec_dropout=0.0, init_scale=0.3)
    return Seq2SeqModel(vocab, cfg, seed=seed)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)

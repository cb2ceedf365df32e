import pytest

from convofeat.corpus import SynthConfig, build_vocab, split_corpus, synth_corpus


@pytest.fixture(scope="session")
def tiny_corpus():
    cfg = SynthConfig(n_dialogues=24, n_topics=3, n_personas=4, turns=8)
    return synth_corpus(cfg, seed=7)


@pytest.fixture(scope="session")
def tiny_split(tiny_corpus):
    return split_corpus(tiny_corpus, seed=7)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_split):
    return build_vocab(tiny_split.train, max_len=16)

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stableemit import data as ds
from stableemit import model as md
from stableemit.losses import LossWeights
from stableemit.rng import Rng, derive_seed


def train_model(config, corpus, epochs, lr=5e-3, weights=None, seed=0,
                boundaries_fn=None, apply_mask=False):
    """Shared toy training loop: per-epoch derived noise/shuffle streams."""
    m = md.Seq2SeqModel(config)
    opt = md.Adam(lr=lr)
    order = list(range(len(corpus)))
    for epoch in range(epochs):
        rng = Rng(derive_seed(seed, "noise", epoch))
        shuffle_rng = Rng(derive_seed(seed, "shuffle", epoch))
        shuffle_rng.shuffle(order)
        for idx in order:
            utt = corpus[idx]
            bounds = [boundaries_fn(m, utt)] if boundaries_fn else None
            m.train_step([utt], opt, weights=weights, rng=rng,
                         boundaries=bounds, apply_mask=apply_mask)
    return m


@pytest.fixture(scope="session")
def toy_setup():
    """A small trained model plus its corpus, shared across decoder tests."""
    spec = ds.CorpusSpec(n_utts=120, vocab=5, seg_len_min=3, seg_len_max=6,
                         noise=0.1, input_dim=6, min_segments=2,
                         max_segments=5, seed=5)
    corpus = ds.generate_corpus(spec)
    config = md.ModelConfig(input_dim=6, hidden_dim=24, vocab_size=5,
                            encoder_layers=2, chunk_width=4,
                            weights=LossWeights(), noise_std=2.0, seed=1)
    model = train_model(config, corpus, epochs=10, lr=5e-3)
    return model, corpus, spec

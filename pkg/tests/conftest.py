"""Shared fixtures: a small multimodal corpus and cached trained models."""

import numpy as np
import pytest

from emofuse.dataset import filter_dataset
from emofuse.encoders import ImageEncoderConfig
from emofuse.model import DeepSentimentModel, TrainConfig, train
from emofuse.synth import make_multimodal_corpus

FIXTURE_MAX_LEN = 8


@pytest.fixture(scope="session")
def corpus():
    return make_multimodal_corpus(n_per_class=16, seed=0)


@pytest.fixture(scope="session")
def corpus_examples(corpus):
    examples, report = filter_dataset(
        corpus.posts, corpus.table, features=corpus.features, max_len=FIXTURE_MAX_LEN
    )
    assert report.kept == len(corpus.posts)
    return examples


def build_fixture_model(corpus, mode="multimodal", seed=0, hidden_size=32, fusion_width=32):
    return DeepSentimentModel(
        embed_dim=corpus.embed_dim,
        image_config=ImageEncoderConfig(kind="frozen_features", feature_dim=corpus.feature_dim),
        hidden_size=hidden_size,
        fusion_width=fusion_width,
        mode=mode,
        seed=seed,
        max_len=FIXTURE_MAX_LEN,
    )


@pytest.fixture(scope="session")
def trained_model_cache(corpus, corpus_examples):
    """mode/seed -> (model, train_set, test_set, metrics); trained once per session."""
    from emofuse.dataset import split

    cache = {}

    def get(mode="multimodal", seed=1, epochs=150):
        key = (mode, seed, epochs)
        if key not in cache:
            train_set, test_set = split(corpus_examples, 0.2, seed=seed)
            model = build_fixture_model(corpus, mode=mode, seed=seed)
            config = TrainConfig(
                optimizer="adam",
                learning_rate=5e-3,
                batch_size=16,
                epochs=epochs,
                seed=seed,
                shuffle=True,
            )
            metrics = train(model, train_set, config, test_set)
            cache[key] = (model, train_set, test_set, metrics)
        return cache[key]

    return get


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)

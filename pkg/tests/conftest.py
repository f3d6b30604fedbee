"""Shared fixtures: a small emitted corpus and compact model configs.

The corpus is emitted once per session; tests that mutate files copy it
first. Model-bearing fixtures stay deliberately tiny so the whole unit suite
runs in seconds on one CPU core.
"""
import os

import pytest
from hypothesis import HealthCheck, settings

from pivotcap.config import TrainingConfig
from pivotcap.corpus import CorpusConfig, default_ontology, emit_dataset
from pivotcap.data import load_dataset

settings.register_profile(
    "desk",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("desk")


TINY_CORPUS = dict(
    n_caption_train=24,
    n_caption_test=8,
    n_parallel_train=24,
    n_parallel_test=8,
    feature_width=32,
    noise_sigma=0.1,
    base_seed=5,
)


@pytest.fixture(scope="session")
def ontology():
    return default_ontology()


@pytest.fixture(scope="session")
def tiny_data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_corpus")
    emit_dataset(CorpusConfig(**TINY_CORPUS), str(root))
    return str(root)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_data_dir):
    return load_dataset(tiny_data_dir)


def small_config(data_dir: str, out_dir: str, **overrides) -> TrainingConfig:
    """A fast config for integration tests: small model, few steps."""
    base = dict(
        seed=0,
        data_dir=data_dir,
        out_dir=out_dir,
        n_caption_train=TINY_CORPUS["n_caption_train"],
        n_caption_test=TINY_CORPUS["n_caption_test"],
        n_parallel_train=TINY_CORPUS["n_parallel_train"],
        n_parallel_test=TINY_CORPUS["n_parallel_test"],
        noise_sigma=TINY_CORPUS["noise_sigma"],
        corpus_seed=TINY_CORPUS["base_seed"],
        hidden_dim=16,
        heads=2,
        dec_layers=1,
        ffn_dim=32,
        gcn_layers=2,
        batch_size=4,
        stage1_steps=4,
        stage2_steps=2,
        stage3_steps=2,
        stage4_steps=4,
        checkpoint_interval=0,
        average_last_k=1,
    )
    base.update(overrides)
    return TrainingConfig(**base)


@pytest.fixture()
def run_dir(tmp_path):
    out = tmp_path / "run"
    os.makedirs(out, exist_ok=True)
    return str(out)

"""Session-scoped trained artifacts shared by the acceptance suite."""

import numpy as np
import pytest

from talkinghead.face3d import make_synthetic_basis
from talkinghead.harness.config import TrainConfig
from talkinghead.harness.corpus import make_corpus, split_corpus


def desk_config(**kwargs) -> TrainConfig:
    """Desk-scale defaults used across the acceptance runs."""
    defaults = dict(seed=0, d_beta=16, width=32, layers=2, heads=4)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def desk_basis():
    return make_synthetic_basis(40, 16, 16, mouth_fraction=0.25, seed=0)


@pytest.fixture(scope="session")
def desk_corpora(desk_basis):
    """(expert_train, stage1_train, held) splits of one 14-clip corpus.

    The sync expert sees 12 clips (generalization needs identity variety);
    the motion transformers train on the first 8; the last 2 are held out.
    All share one basis and one audio-to-expression response law.
    """
    full = make_corpus(14, 25, seed=1, basis=desk_basis)
    expert_train, held = split_corpus(full, 12)
    stage1_train = split_corpus(full, 8)[0]
    return expert_train, stage1_train, held


@pytest.fixture(scope="session")
def overfit_corpus(desk_basis):
    return make_corpus(1, 25, seed=5, basis=desk_basis)


@pytest.fixture(scope="session")
def desk_expert(desk_corpora):
    from talkinghead.harness.training import train_expert_on_corpus

    expert_train, _, _ = desk_corpora
    return train_expert_on_corpus(expert_train, desk_config(epochs=800))


@pytest.fixture(scope="session")
def stage1_pair(desk_corpora, desk_expert):
    """Stage-1 models trained with and without the sync loss, same seed."""
    from dataclasses import replace

    from talkinghead.harness.training import train_stage1

    _, stage1_train, _ = desk_corpora
    cfg = desk_config(epochs=300, lr=2e-3, lambda_sync=0.1)
    full, _ = train_stage1(stage1_train, cfg, desk_expert)
    ablated, _ = train_stage1(stage1_train, replace(cfg, no_sync_loss=True), desk_expert)
    return full, ablated

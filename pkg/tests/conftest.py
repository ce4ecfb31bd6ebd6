import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from glyphguess.agent import AgentConfig, build_params
from glyphguess.rng import Rng
from glyphguess.world import WorldConfig, build_corpus, generate_world


@pytest.fixture(scope="session")
def tiny_world():
    """40 train / 20 game images with 16-dim features; fast everywhere."""
    return generate_world(
        WorldConfig(n_train_images=40, n_game_images=20, feature_dim=16), seed=101
    )


@pytest.fixture(scope="session")
def tiny_cfg():
    return AgentConfig(
        embed_dim=8,
        qa_hidden=12,
        state_dim=16,
        decoder_hidden=16,
        max_question_len=6,
        top_k=5,
        rounds=3,
    )


@pytest.fixture()
def tiny_params(tiny_world, tiny_cfg):
    return build_params(tiny_cfg, tiny_world.spec, Rng(7))


@pytest.fixture(scope="session")
def tiny_corpora(tiny_world):
    return build_corpus(tiny_world, 36, 3, (0.75, 0.125, 0.125), seed=11)

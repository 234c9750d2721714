import sys
import warnings

import numpy as np
import pytest
import torch

from emotts.config import ExperimentConfig
from emotts.data import SyntheticCorpusSpec, generate_synthetic_corpus

warnings.filterwarnings("ignore", message="joint training from scratch")


def tiny_spec(**kw):
    base = dict(utterances_per_speaker=8, heldout_per_emotion=1, ssl_layers=4, ssl_dim=8, labeled_fraction=[1.0, 0.0])
    base.update(kw)
    return SyntheticCorpusSpec(**base)


def tiny_config(**train):
    t = dict(batch_size=8, max_steps=6, pretrain_steps=4, ckpt_every=3, labeled_fraction=1.0, crop_len=40, seed=7)
    t.update(train)
    return ExperimentConfig().replace(
        model={"hidden_dim": 32, "n_heads": 2, "emotion_dim": 16, "conv_kernel": 3, "n_encoder_blocks": 1, "n_decoder_blocks": 1},
        npc={"n_blocks": 2, "code_dim": 16, "codebook_size": 8},
        emotion={"input_dim": 8, "conv_channels": 16, "emotion_dim": 16, "n_heads": 2},
        data={"ssl_layers": 4},
        train=t,
    )


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_corpus")
    return generate_synthetic_corpus(tiny_spec(), out)


@pytest.fixture
def cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_trained(tiny_corpus, tmp_path_factory):
    from emotts.training import joint_train, pretrain_emotion

    cfg = tiny_config()
    out = tmp_path_factory.mktemp("tiny_run")
    pre = pretrain_emotion(cfg, tiny_corpus, out / "pre")
    joint = joint_train(cfg, tiny_corpus, pre, out / "joint")
    return cfg, pre, joint, out


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in module.RESULTS:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from models import DataConfig, StageConfig, TextConfig, TrainConfig, ViTConfig
from unitok.data_synth import SyntheticCorpus, build_vocab

TINY_CONFIG_TEXT = """\
# tiny run used by the command tests
train.seed = 3
train.mode = joint
codec.f = 4
vit.depth = 1
vit.dim = 16
vit.heads = 2
vit.mlp_ratio = 2
vit.embed_dim_contrastive = 8
recon.decoder_depth = 1
text.depth = 1
text.width = 16
text.heads = 2
text.max_len = 32

[stage1]
resolution = 16
batch_size = 4
base_lr = 0.001
total_steps = 3
warmup_steps = 1

[stage2]
resolution = 16
batch_size = 4
base_lr = 0.0001
total_steps = 0
warmup_steps = 0

[data]
n_train = 8
n_eval = 4
master_res = 32

[eval]
n_retrieval = 4
"""


def tiny_train_config(**overrides):
    values = dict(
        stages=[
            StageConfig(resolution=16, batch_size=4, base_lr=1e-3, total_steps=4, warmup_steps=1, lam=0.0),
            StageConfig(resolution=32, batch_size=4, base_lr=1e-4, total_steps=2, warmup_steps=0, lam=0.5),
        ],
        seed=3,
        vit=ViTConfig(depth=1, dim=16, heads=2, mlp_ratio=2, embed_dim_contrastive=8),
        text=TextConfig(depth=1, width=16, heads=2, max_len=32),
        decoder_depth=1,
        data=DataConfig(n_train=8, n_eval=4, master_res=32),
        n_retrieval=4,
    )
    values.update(overrides)
    return TrainConfig(**values).validate()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_train_config()


@pytest.fixture
def vocab():
    return build_vocab()


@pytest.fixture
def corpus():
    return SyntheticCorpus(8, seed=0, master_res=32)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / 'tiny.cfg'
    path.write_text(TINY_CONFIG_TEXT, encoding='utf-8')
    return str(path)

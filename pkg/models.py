from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
import json
import math
import os
import subprocess

import numpy as np

from errors import ConfigError, ShapeError, ValidationError
from unitok.tensor_core import Tensor

VERSION = '0.1.0'

MODES = ('joint', 'und_only', 'rec_only')

# Component columns of the curve log, in file order
LOSS_COMPONENTS = ('pixel_l1', 'latent_l1', 'perceptual', 'caption_ce', 'contrastive')
CURVE_FIELDS = ('step', 'stage', 'lr') + LOSS_COMPONENTS + ('weighted_total',)

VIT_PRESETS = {
    'tiny': {'depth': 6, 'dim': 256, 'heads': 8},
    'B': {'depth': 12, 'dim': 768, 'heads': 12},
    'L': {'depth': 24, 'dim': 1024, 'heads': 16},
}


# Image / latent / token containers

@dataclass
class ImageBatch:
    """Images in [-1, 1], values shaped [N, H, W, C]"""
    values: Tensor

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ShapeError("ImageBatch expects [N, H, W, C]", self.values.shape)

    @property
    def count(self):
        return self.values.shape[0]

    @property
    def resolution(self):
        return self.values.shape[1], self.values.shape[2]

    def clamped(self):
        """Values clipped to [-1, 1] as a plain array, for metrics"""
        return np.clip(self.values.data, -1.0, 1.0)

    def __repr__(self):
        return f'<ImageBatch {tuple(self.values.shape)}>'


@dataclass
class LatentGrid:
    """Frozen-codec latents shaped [N, H/f, W/f, f*f*C]"""
    values: Tensor
    factor: int

    @property
    def channels(self):
        return self.values.shape[-1]

    @property
    def grid(self):
        return self.values.shape[1], self.values.shape[2]

    def __repr__(self):
        return f'<LatentGrid {tuple(self.values.shape)} f={self.factor}>'


@dataclass
class UnifiedTokens:
    """ViT output tokens [N, T, D_u] together with the token grid they tile"""
    values: Tensor
    grid: tuple

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        if self.values.ndim != 3 or self.values.shape[1] != self.grid[0] * self.grid[1]:
            raise ShapeError(f"token count does not match grid {self.grid}", self.values.shape)

    @property
    def dim(self):
        return self.values.shape[-1]

    def __repr__(self):
        return f'<UnifiedTokens {tuple(self.values.shape)} grid={self.grid}>'


@dataclass
class CaptionBatch:
    """Token ids [N, T] plus a boolean mask that is True on PAD positions"""
    token_ids: np.ndarray
    pad_mask: np.ndarray
    vocab_size: int
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.pad_mask = np.asarray(self.pad_mask, dtype=bool)

    @property
    def length(self):
        return self.token_ids.shape[1]

    def validate(self):
        ids = self.token_ids
        if ids.ndim != 2 or ids.shape != self.pad_mask.shape:
            raise ShapeError("CaptionBatch token_ids and pad_mask must be matching [N, T] grids",
                             ids.shape, self.pad_mask.shape)
        if ids.shape[1] == 0:
            raise ValidationError("Caption length must be at least 1")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValidationError(f"Caption token id outside [0, {self.vocab_size})")
        for row, mask in zip(ids, self.pad_mask):
            if not mask.all() and row[0] != self.bos_id:
                raise ValidationError("Every caption must begin with BOS")
            body = row[~mask]
            if body.size and np.count_nonzero(body == self.eos_id) != 1:
                raise ValidationError("Every caption must contain exactly one EOS before padding")
        return self

    def __repr__(self):
        return f'<CaptionBatch {tuple(self.token_ids.shape)} V={self.vocab_size}>'


# Model configuration

@dataclass
class ViTConfig:
    patch: int = 2
    depth: int = 6
    dim: int = 256
    heads: int = 8
    mlp_ratio: int = 4
    embed_dim_contrastive: int = 256

    @classmethod
    def preset(cls, name, **overrides):
        if name not in VIT_PRESETS:
            raise ConfigError(f"Unknown ViT preset '{name}', expected one of {sorted(VIT_PRESETS)}", key='vit.preset')
        values = dict(VIT_PRESETS[name])
        values.update(overrides)
        return cls(**values)

    def validate(self):
        if self.patch != 2:
            raise ConfigError("The unified encoder patch size is fixed at 2", key='vit.patch')
        if self.dim % self.heads != 0:
            raise ConfigError(f"vit.dim ({self.dim}) must be divisible by vit.heads ({self.heads})", key='vit.dim')
        if self.depth < 1 or self.mlp_ratio < 1 or self.embed_dim_contrastive < 1:
            raise ConfigError("vit.depth, vit.mlp_ratio and vit.embed_dim_contrastive must be positive")
        return self


@dataclass
class TextConfig:
    depth: int = 4
    width: int = 256
    heads: int = 4
    max_len: int = 32

    def validate(self):
        if self.width % self.heads != 0:
            raise ConfigError(f"text.width ({self.width}) must be divisible by text.heads ({self.heads})", key='text.width')
        if self.depth < 1 or self.max_len < 3:
            raise ConfigError("text.depth must be >= 1 and text.max_len >= 3")
        return self


@dataclass
class NoiseConfig:
    tau: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.tau < 0:
            raise ConfigError(f"Noise scale tau must be non-negative, got {self.tau}", key='recon.tau')


@dataclass
class ReconLossWeights:
    beta: float = 0.4
    lam: float = 0.0

    def __post_init__(self):
        if self.beta < 0 or self.lam < 0:
            raise ConfigError("Reconstruction loss weights must be non-negative")


@dataclass
class OptimConfig:
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.05


@dataclass
class DataConfig:
    dir: str = None
    captions: str = 'captions.tsv'
    n_train: int = 8192
    n_eval: int = 1024
    seed: int = 0
    master_res: int = 64


@dataclass
class StageConfig:
    resolution: int
    batch_size: int
    base_lr: float
    total_steps: int
    warmup_steps: int
    lam: float = 0.0

    def validate(self, index=1):
        prefix = f'stage{index}'
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("Step counts must be non-negative", key=f'{prefix}.total_steps')
        if self.total_steps == 0 and self.warmup_steps != 0:
            raise ConfigError("An empty stage cannot have warmup steps", key=f'{prefix}.warmup_steps')
        if self.total_steps > 0 and self.warmup_steps >= self.total_steps:
            raise ConfigError("warmup_steps must be smaller than total_steps", key=f'{prefix}.warmup_steps')
        if self.resolution < 1:
            raise ConfigError("resolution must be positive", key=f'{prefix}.resolution')
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 for the contrastive loss", key=f'{prefix}.batch_size')
        if self.base_lr < 0 or self.lam < 0:
            raise ConfigError("base_lr and lambda must be non-negative", key=f'{prefix}.base_lr')
        return self


@dataclass
class TrainConfig:
    stages: list = field(default_factory=lambda: [
        StageConfig(resolution=32, batch_size=64, base_lr=3e-4, total_steps=3000, warmup_steps=120, lam=0.0),
        StageConfig(resolution=64, batch_size=32, base_lr=1.5e-5, total_steps=300, warmup_steps=30, lam=0.5),
    ])
    omega_rec: float = 0.5
    omega_und: float = 1.0
    alpha: float = 1.0
    beta: float = 0.4
    tau: float = 0.2
    seed: int = 0
    mode: str = 'joint'
    vit: ViTConfig = field(default_factory=ViTConfig)
    text: TextConfig = field(default_factory=TextConfig)
    decoder_depth: int = 6
    codec_f: int = 4
    codec_seed: int = 0
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    n_retrieval: int = 256

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode '{self.mode}', expected one of {MODES}", key='train.mode')
        if self.omega_rec < 0 or self.omega_und < 0:
            raise ConfigError("omega weights must be non-negative", key='loss.omega_rec')
        if self.alpha < 0 or self.beta < 0 or self.tau < 0:
            raise ConfigError("alpha, beta and tau must be non-negative")
        if self.codec_f < 1:
            raise ConfigError("codec.f must be positive", key='codec.f')
        if self.decoder_depth < 1:
            raise ConfigError("recon.decoder_depth must be positive", key='recon.decoder_depth')
        if not self.stages:
            raise ConfigError("At least one training stage is required")
        previous = 0
        for index, stage in enumerate(self.stages, start=1):
            stage.validate(index)
            if stage.resolution % (2 * self.codec_f) != 0:
                raise ConfigError(f"Resolution {stage.resolution} is not divisible by 2*codec.f = {2 * self.codec_f}",
                                  key=f'stage{index}.resolution')
            if stage.resolution < previous:
                raise ConfigError("Stage resolutions must be nondecreasing", key=f'stage{index}.resolution')
            previous = stage.resolution
        self.vit.validate()
        self.text.validate()
        return self

    def with_mode(self, mode):
        return replace(self, mode=mode).validate()

    def to_dict(self):
        return asdict(self)


# Training / evaluation records

@dataclass
class LossReport:
    step: int
    stage: int
    lr: float
    pixel_l1: float
    latent_l1: float
    perceptual: float
    caption_ce: float
    contrastive: float
    weighted_total: float

    @classmethod
    def compose(cls, step, stage, lr, components, omega_rec, omega_und, alpha, beta, lam):
        """Build a report whose total follows the overall objective, whatever was optimized"""
        c = {k: float(components[k]) for k in LOSS_COMPONENTS}
        rec = c['pixel_l1'] + beta * c['latent_l1'] + lam * c['perceptual']
        und = c['caption_ce'] + alpha * c['contrastive']
        return cls(step=step, stage=stage, lr=float(lr), weighted_total=omega_rec * rec + omega_und * und, **c)

    def components(self):
        return {k: getattr(self, k) for k in LOSS_COMPONENTS}

    def non_finite_component(self):
        for name in LOSS_COMPONENTS:
            if not math.isfinite(getattr(self, name)):
                return name
        return None

    def to_row(self):
        return [self.step, self.stage, repr(self.lr)] + [repr(getattr(self, k)) for k in CURVE_FIELDS[3:]]

    def to_dict(self):
        return asdict(self)

    def __repr__(self):
        return (f'<LossReport stage={self.stage} step={self.step} total={self.weighted_total:.5f} '
                f'pix={self.pixel_l1:.4f} cap={self.caption_ce:.4f} con={self.contrastive:.4f}>')


@dataclass
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise ShapeError("FeatureStats covariance must be [D, D]", self.mean.shape, self.covariance.shape)
        if self.count < 2:
            raise ValidationError(f"FeatureStats needs at least 2 samples, got {self.count}")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-8):
            raise ValidationError("FeatureStats covariance is not symmetric")

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass
class RunManifest:
    config_snapshot: str
    build_id: str
    seed: int
    started_at: str = None
    finished_at: str = None
    outputs: dict = field(default_factory=dict)

    @staticmethod
    def now():
        return datetime.now(timezone.utc).isoformat()

    @staticmethod
    def build_identifier():
        """Short git revision of the working tree, or the package version outside a checkout"""
        try:
            revision = subprocess.run(['git', 'rev-parse', '--short', 'HEAD'], capture_output=True, text=True,
                                      timeout=5, cwd=os.path.dirname(os.path.abspath(__file__)))
        except (OSError, subprocess.SubprocessError):
            return f'unitok-{VERSION}'
        return revision.stdout.strip() if revision.returncode == 0 else f'unitok-{VERSION}'

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        with open(path, 'w', encoding='utf-8', newline='\n') as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
            handle.write('\n')

    @classmethod
    def read(cls, path):
        with open(path, encoding='utf-8') as handle:
            return cls(**json.load(handle))

    def __repr__(self):
        return f'<RunManifest seed={self.seed} build={self.build_id}>'

"""Frozen, lossless stand-in for a pretrained image VAE.

Images are folded space-to-depth by a factor ``f`` and the resulting
``f*f*C`` channels are mixed by a fixed orthogonal matrix. The inverse is
exact, so every reconstruction error measured downstream comes from the
trained tokenizer rather than from the codec.
"""
from dataclasses import dataclass
import logging

import numpy as np

from errors import ShapeError
from models import ImageBatch, LatentGrid
from unitok import tensor_core as tc

logger = logging.getLogger('unitok.codec')

IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class CodecParams:
    factor: int
    seed: int
    mixing: np.ndarray
    channels: int = IMAGE_CHANNELS

    @property
    def latent_channels(self):
        return self.factor * self.factor * self.channels

    def __repr__(self):
        return f'<CodecParams f={self.factor} seed={self.seed} D_vae={self.latent_channels}>'


def make_codec(factor=4, seed=0, channels=IMAGE_CHANNELS):
    """Build the orthogonal mixing matrix deterministically from ``seed``"""
    if factor < 1:
        raise ShapeError(f"Codec factor must be positive, got {factor}")
    d = factor * factor * channels
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    # sign fix makes the QR factor unique
    q = q * np.sign(np.diag(r))
    logger.debug(f"[CODEC] Built mixing matrix f={factor} D_vae={d} seed={seed}")
    return CodecParams(factor=factor, seed=seed, mixing=q, channels=channels)


def space_to_depth(x, factor):
    """[N, H, W, C] -> [N, H/f, W/f, f*f*C]"""
    n, h, w, c = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"Spatial dims must be divisible by {factor}", x.shape)
    x = tc.reshape(x, (n, h // factor, factor, w // factor, factor, c))
    x = tc.transpose(x, (0, 1, 3, 2, 4, 5))
    return tc.reshape(x, (n, h // factor, w // factor, factor * factor * c))


def depth_to_space(z, factor, channels):
    """[N, h, w, f*f*C] -> [N, h*f, w*f, C]"""
    n, h, w, d = z.shape
    if d != factor * factor * channels:
        raise ShapeError(f"Expected {factor * factor * channels} channels for depth-to-space", z.shape)
    z = tc.reshape(z, (n, h, w, factor, factor, channels))
    z = tc.transpose(z, (0, 1, 3, 2, 4, 5))
    return tc.reshape(z, (n, h * factor, w * factor, channels))


def _mixing(codec, transpose=False):
    matrix = codec.mixing.T if transpose else codec.mixing
    return tc.constant(matrix.astype(tc.default_dtype()))


def encode_image(x, codec):
    """ImageBatch -> LatentGrid"""
    values = x.values
    if values.shape[-1] != codec.channels:
        raise ShapeError(f"Codec expects {codec.channels} image channels", values.shape)
    if values.shape[1] % codec.factor or values.shape[2] % codec.factor:
        raise ShapeError(f"Image height and width must be divisible by codec factor {codec.factor}", values.shape)
    folded = space_to_depth(values, codec.factor)
    return LatentGrid(values=tc.matmul(folded, _mixing(codec)), factor=codec.factor)


def decode_latents(z, codec):
    """LatentGrid -> ImageBatch; exact inverse of :func:`encode_image`"""
    values = z.values
    if values.ndim != 4 or values.shape[-1] != codec.latent_channels:
        raise ShapeError(f"Codec expects {codec.latent_channels} latent channels", values.shape)
    unmixed = tc.matmul(values, _mixing(codec, transpose=True))
    return ImageBatch(values=depth_to_space(unmixed, codec.factor, codec.channels))

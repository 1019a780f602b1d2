"""Reconstruction branch: noise the unified tokens, decode back to latents, score the result."""
from dataclasses import dataclass
import logging

import numpy as np

from errors import ShapeError
from models import LatentGrid, UnifiedTokens
from unitok import tensor_core as tc
from unitok.frozen_codec import depth_to_space
from unitok.layers import INIT_STD, linear, linear_params, param, stack_params, transformer

logger = logging.getLogger('unitok.recon')

PERCEPTUAL_SEED = 1234
PERCEPTUAL_CHANNELS = (16, 32, 64)
NORMALIZE_EPS = 1e-10


@dataclass
class DecoderConfig:
    dim: int
    depth: int
    heads: int
    mlp_ratio: int
    latent_channels: int

    @classmethod
    def from_vit(cls, vit, depth, latent_channels):
        return cls(dim=vit.dim, depth=depth, heads=vit.heads, mlp_ratio=vit.mlp_ratio, latent_channels=latent_channels)


def init_decoder_params(cfg, grid, rng, token_dim=None):
    token_dim = token_dim or cfg.dim
    params = linear_params(rng, 'decoder.embed', token_dim, cfg.dim)
    params['decoder.pos_embed'] = param(rng.normal(0.0, INIT_STD, (grid[0] * grid[1], cfg.dim)), 'decoder.pos_embed')
    params.update(stack_params(rng, 'decoder', cfg.depth, cfg.dim, cfg.mlp_ratio))
    params.update(linear_params(rng, 'decoder.head', cfg.dim, 4 * cfg.latent_channels))
    return params


def perturb(z_u, cfg, rng=None, training=True):
    """z~ = z + sigma * eps with one sigma ~ U[0, tau] per sample.

    Evaluation (``training=False``) and ``tau == 0`` return the tokens unchanged.
    """
    if not training or cfg.tau == 0:
        return z_u
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    values = z_u.values
    sigma = rng.uniform(0.0, cfg.tau, size=(values.shape[0],) + (1,) * (values.ndim - 1))
    noise = (sigma * rng.standard_normal(values.shape)).astype(values.data.dtype)
    return UnifiedTokens(values=tc.add(values, tc.constant(noise)), grid=z_u.grid)


def decode_unified(z_tilde, params, cfg):
    """UnifiedTokens -> LatentGrid at twice the token-grid resolution"""
    n, t, _ = z_tilde.values.shape
    gh, gw = z_tilde.grid
    pos = params['decoder.pos_embed']
    if pos.shape[0] != t:
        raise ShapeError(f"Decoder positional table covers {pos.shape[0]} tokens but the input has {t}", pos.shape)
    x = tc.add(linear(z_tilde.values, params, 'decoder.embed'), pos)
    x = transformer(x, params, 'decoder', cfg.depth, cfg.heads)
    blocks = tc.reshape(linear(x, params, 'decoder.head'), (n, gh, gw, 4 * cfg.latent_channels))
    return LatentGrid(values=depth_to_space(blocks, 2, cfg.latent_channels), factor=None)


class PerceptualNet:
    """Fixed random three-stage strided convolution stack (3x3, stride 2)"""

    def __init__(self, seed=PERCEPTUAL_SEED, channels=PERCEPTUAL_CHANNELS, in_channels=3):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.stages = []
        fan_in = in_channels
        for width in channels:
            std = np.sqrt(2.0 / (9 * fan_in))
            self.stages.append((rng.normal(0.0, std, (3, 3, fan_in, width)), rng.normal(0.0, 0.01, width)))
            fan_in = width

    @property
    def feature_dim(self):
        return self.stages[-1][0].shape[-1]

    def activations(self, images):
        """Per-stage ReLU activations of an [N, H, W, 3] tensor"""
        dtype = tc.default_dtype()
        x = tc.as_tensor(images)
        outputs = []
        for weight, bias in self.stages:
            x = tc.conv2d(x, tc.constant(weight.astype(dtype)), stride=2, padding=1)
            x = tc.relu(tc.add(x, tc.constant(bias.astype(dtype))))
            outputs.append(x)
        return outputs

    def features(self, images):
        """Globally pooled final-stage activations as a float64 [N, D] array"""
        final = self.activations(tc.constant(np.asarray(images, dtype=tc.default_dtype())))[-1]
        return final.data.mean(axis=(1, 2)).astype(np.float64)

    def __repr__(self):
        return f'<PerceptualNet seed={self.seed} channels={[w.shape[-1] for w, _ in self.stages]}>'


def _unit(a):
    return tc.div(a, tc.sqrt(tc.add(tc.sum_(tc.mul(a, a), axis=-1, keepdims=True), NORMALIZE_EPS)))


def perceptual_loss(x, x_hat, feat_net):
    """Mean squared distance between channel-normalised activations, averaged over stages"""
    if x.values.shape != x_hat.values.shape:
        raise ShapeError("perceptual_loss inputs differ in shape", x.values.shape, x_hat.values.shape)
    total = None
    stages = list(zip(feat_net.activations(x.values), feat_net.activations(x_hat.values)))
    for a, b in stages:
        diff = tc.sub(_unit(a), _unit(b))
        term = tc.mean(tc.sum_(tc.mul(diff, diff), axis=-1))
        total = term if total is None else tc.add(total, term)
    return tc.scale(total, 1.0 / len(stages))


def l1(a, b):
    a, b = tc.as_tensor(a), tc.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("l1 inputs differ in shape", a.shape, b.shape)
    return tc.mean(tc.abs_(tc.sub(a, b)))


def recon_loss(x, x_hat, z_vae, z_hat, weights, feat_net):
    """pixel L1 + beta * latent L1 + lambda * perceptual.

    Returns the total as a Tensor and every component as a float. With
    ``lambda == 0`` the perceptual term is still measured but kept off the graph.
    """
    pixel = l1(x.values, x_hat.values)
    latent = l1(z_vae.values, z_hat.values)
    if weights.lam > 0:
        perceptual = perceptual_loss(x, x_hat, feat_net)
    else:
        perceptual = perceptual_loss(x, type(x_hat)(values=x_hat.values.detach()), feat_net)

    total = tc.add(pixel, tc.scale(latent, weights.beta))
    if weights.lam > 0:
        total = tc.add(total, tc.scale(perceptual, weights.lam))
    components = {
        'pixel_l1': pixel.item(),
        'latent_l1': latent.item(),
        'perceptual': perceptual.item(),
    }
    return total, components

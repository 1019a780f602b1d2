"""Trainable ViT that turns codec latents into the unified token grid z_u."""
import logging

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from errors import ShapeError
from models import UnifiedTokens
from unitok import tensor_core as tc
from unitok.frozen_codec import space_to_depth
from unitok.layers import INIT_STD, linear, linear_params, param, stack_params, transformer

logger = logging.getLogger('unitok.encoder')


def init_encoder_params(cfg, latent_channels, grid, rng):
    """Patch embedding, positional table, blocks and final norm under ``encoder.``"""
    patch_dim = cfg.patch * cfg.patch * latent_channels
    params = linear_params(rng, 'encoder.patch_embed', patch_dim, cfg.dim)
    params['encoder.pos_embed'] = param(rng.normal(0.0, INIT_STD, (grid[0] * grid[1], cfg.dim)), 'encoder.pos_embed')
    params.update(stack_params(rng, 'encoder', cfg.depth, cfg.dim, cfg.mlp_ratio))
    return params


def init_visual_proj_params(cfg, rng):
    return linear_params(rng, 'visual_proj', cfg.dim, cfg.embed_dim_contrastive)


def encode_unified(z_vae, params, cfg):
    """LatentGrid -> UnifiedTokens with the latent grid halved on each side"""
    n, h, w, _ = z_vae.values.shape
    if h % cfg.patch or w % cfg.patch:
        raise ShapeError(f"Latent grid must be divisible by the patch size {cfg.patch}", z_vae.values.shape)
    grid = (h // cfg.patch, w // cfg.patch)
    pos = params['encoder.pos_embed']
    if pos.shape[0] != grid[0] * grid[1]:
        raise ShapeError(f"Positional table covers {pos.shape[0]} tokens but the input has {grid[0] * grid[1]}; "
                         f"resize it with interpolate_pos_embed", pos.shape)

    patches = space_to_depth(z_vae.values, cfg.patch)
    tokens = tc.reshape(patches, (n, grid[0] * grid[1], patches.shape[-1]))
    x = tc.add(linear(tokens, params, 'encoder.patch_embed'), pos)
    x = transformer(x, params, 'encoder', cfg.depth, cfg.heads)
    return UnifiedTokens(values=x, grid=grid)


def pool_visual(z_u, proj_params):
    """Mean-pool tokens, project to the contrastive width, L2-normalise"""
    if z_u.values.shape[1] < 1:
        raise ShapeError("pool_visual needs at least one token", z_u.values.shape)
    pooled = tc.mean(z_u.values, axis=1)
    return tc.l2_normalize(linear(pooled, proj_params, 'visual_proj'))


def resize_table(table, old_grid, new_grid):
    """Bilinear resize of a [gh*gw, D] table with corners pinned to corners"""
    old_h, old_w = old_grid
    new_h, new_w = new_grid
    grid_values = np.asarray(table, dtype=np.float64).reshape(old_h, old_w, -1)
    if old_h == 1:
        grid_values = np.repeat(grid_values, 2, axis=0)
    if old_w == 1:
        grid_values = np.repeat(grid_values, 2, axis=1)
    axes = (np.arange(grid_values.shape[0], dtype=np.float64),
            np.arange(grid_values.shape[1], dtype=np.float64))
    interp = RegularGridInterpolator(axes, grid_values, method='linear')
    ys = np.linspace(0.0, old_h - 1, new_h)
    xs = np.linspace(0.0, old_w - 1, new_w)
    points = np.stack(np.meshgrid(ys, xs, indexing='ij'), axis=-1).reshape(-1, 2)
    return interp(points)


def interpolate_pos_embed(params, old_grid, new_grid, key='encoder.pos_embed'):
    """Return ``params`` with the positional table at ``key`` resized to ``new_grid``"""
    old_grid, new_grid = tuple(old_grid), tuple(new_grid)
    if old_grid == new_grid:
        return params
    table = params[key]
    if table.shape[0] != old_grid[0] * old_grid[1]:
        raise ShapeError(f"Table at '{key}' does not cover grid {old_grid}", table.shape)
    resized = resize_table(table.data, old_grid, new_grid).astype(table.data.dtype)
    logger.info(f"[ENCODER] Resized '{key}' from grid {old_grid} to {new_grid}")
    updated = dict(params)
    updated[key] = param(resized, key)
    return updated

"""Parameter tables and pre-norm transformer blocks shared by every tower.

Parameters live in flat ``{dotted_name: Tensor}`` tables so that the
optimizer, the checkpoint writer and the position-embedding resize can all
address them by name.
"""
import numpy as np

from unitok import tensor_core as tc

INIT_STD = 0.02


def param(array, name):
    return tc.Tensor(array, requires_grad=True, name=name)


def linear_params(rng, prefix, fan_in, fan_out, std=INIT_STD):
    return {
        f'{prefix}.weight': param(rng.normal(0.0, std, (fan_in, fan_out)), f'{prefix}.weight'),
        f'{prefix}.bias': param(np.zeros(fan_out), f'{prefix}.bias'),
    }


def norm_params(prefix, dim):
    return {
        f'{prefix}.gamma': param(np.ones(dim), f'{prefix}.gamma'),
        f'{prefix}.beta': param(np.zeros(dim), f'{prefix}.beta'),
    }


def block_params(rng, prefix, dim, mlp_ratio):
    params = {}
    params.update(norm_params(f'{prefix}.ln1', dim))
    params.update(linear_params(rng, f'{prefix}.attn.qkv', dim, 3 * dim))
    params.update(linear_params(rng, f'{prefix}.attn.proj', dim, dim))
    params.update(norm_params(f'{prefix}.ln2', dim))
    params.update(linear_params(rng, f'{prefix}.mlp.fc1', dim, mlp_ratio * dim))
    params.update(linear_params(rng, f'{prefix}.mlp.fc2', mlp_ratio * dim, dim))
    return params


def stack_params(rng, prefix, depth, dim, mlp_ratio):
    """Blocks ``{prefix}.blocks.{i}`` followed by the final norm ``{prefix}.norm``"""
    params = {}
    for i in range(depth):
        params.update(block_params(rng, f'{prefix}.blocks.{i}', dim, mlp_ratio))
    params.update(norm_params(f'{prefix}.norm', dim))
    return params


def select(params, prefix):
    """Entries of ``params`` under ``prefix.``"""
    start = prefix + '.'
    return {name: p for name, p in params.items() if name.startswith(start)}


def linear(x, params, prefix):
    return tc.add(tc.matmul(x, params[f'{prefix}.weight']), params[f'{prefix}.bias'])


def norm(x, params, prefix):
    return tc.layer_norm(x, params[f'{prefix}.gamma'], params[f'{prefix}.beta'])


def self_attention(x, params, prefix, heads, causal=False, key_mask=None):
    b, t, d = x.shape
    qkv = linear(x, params, f'{prefix}.qkv')
    qkv = tc.transpose(tc.reshape(qkv, (b, t, 3, heads, d // heads)), (2, 0, 3, 1, 4))
    out = tc.attention(qkv[0], qkv[1], qkv[2], causal=causal, key_mask=key_mask)
    out = tc.reshape(tc.transpose(out, (0, 2, 1, 3)), (b, t, d))
    return linear(out, params, f'{prefix}.proj')


def transformer_block(x, params, prefix, heads, causal=False, key_mask=None):
    x = tc.add(x, self_attention(norm(x, params, f'{prefix}.ln1'), params, f'{prefix}.attn',
                                 heads, causal=causal, key_mask=key_mask))
    hidden = tc.gelu(linear(norm(x, params, f'{prefix}.ln2'), params, f'{prefix}.mlp.fc1'))
    return tc.add(x, linear(hidden, params, f'{prefix}.mlp.fc2'))


def transformer(x, params, prefix, depth, heads, causal=False, key_mask=None):
    for i in range(depth):
        x = transformer_block(x, params, f'{prefix}.blocks.{i}', heads, causal=causal, key_mask=key_mask)
    return norm(x, params, f'{prefix}.norm')

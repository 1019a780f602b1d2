import numpy as np
import pytest

from errors import ShapeError
from models import ImageBatch, UnifiedTokens, ViTConfig
from unitok import tensor_core as tc
from unitok.frozen_codec import encode_image, make_codec
from unitok.layers import param
from unitok.unified_encoder import (encode_unified, init_encoder_params, init_visual_proj_params,
                                    interpolate_pos_embed, pool_visual, resize_table)

VIT = ViTConfig(depth=1, dim=16, heads=2, mlp_ratio=2, embed_dim_contrastive=8)


@pytest.fixture
def latents(rng):
    images = ImageBatch(values=tc.Tensor(rng.uniform(-1.0, 1.0, size=(3, 16, 16, 3))))
    return encode_image(images, make_codec(4))


class TestUnifiedEncoder:
    def test_token_grid_is_half_latent_grid(self, rng, latents):
        params = init_encoder_params(VIT, 48, (2, 2), rng)
        z_u = encode_unified(latents, params, VIT)
        assert z_u.values.shape == (3, 4, 16)
        assert z_u.grid == (2, 2)

    def test_mismatched_pos_table_rejected(self, rng, latents):
        params = init_encoder_params(VIT, 48, (4, 4), rng)
        with pytest.raises(ShapeError):
            encode_unified(latents, params, VIT)

    def test_pooled_embeddings_are_unit_norm(self, rng, latents):
        params = init_encoder_params(VIT, 48, (2, 2), rng)
        params.update(init_visual_proj_params(VIT, rng))
        pooled = pool_visual(encode_unified(latents, params, VIT), params).data
        assert pooled.shape == (3, 8)
        np.testing.assert_allclose(np.linalg.norm(pooled, axis=1), 1.0, atol=1e-5)

    def test_same_grid_resize_is_identity(self, rng):
        params = init_encoder_params(VIT, 48, (2, 2), rng)
        assert interpolate_pos_embed(params, (2, 2), (2, 2)) is params

    def test_resize_pins_corners(self, rng):
        table = rng.normal(size=(4, 5))
        resized = resize_table(table, (2, 2), (4, 4)).reshape(4, 4, 5)
        original = table.reshape(2, 2, 5)
        np.testing.assert_allclose(resized[0, 0], original[0, 0], atol=1e-12)
        np.testing.assert_allclose(resized[-1, -1], original[-1, -1], atol=1e-12)
        np.testing.assert_allclose(resized[0, -1], original[0, -1], atol=1e-12)

    def test_resize_of_constant_table_is_constant(self):
        resized = resize_table(np.full((9, 2), 0.25), (3, 3), (5, 5))
        np.testing.assert_allclose(resized, 0.25)

    def test_resized_params_encode_larger_images(self, rng):
        params = init_encoder_params(VIT, 48, (2, 2), rng)
        params = interpolate_pos_embed(params, (2, 2), (4, 4))
        assert params['encoder.pos_embed'].shape == (16, 16)
        assert params['encoder.pos_embed'].requires_grad
        images = ImageBatch(values=tc.Tensor(rng.uniform(-1.0, 1.0, size=(1, 32, 32, 3))))
        z_u = encode_unified(encode_image(images, make_codec(4)), params, VIT)
        assert z_u.grid == (4, 4)


class TestPooling:
    @pytest.fixture
    def identity_proj(self):
        return {'visual_proj.weight': param(np.eye(6), 'visual_proj.weight'),
                'visual_proj.bias': param(np.zeros(6), 'visual_proj.bias')}

    def test_equal_tokens_pool_to_that_token(self, rng, identity_proj):
        v = rng.normal(size=6)
        with tc.precision('f64'):
            tokens = UnifiedTokens(values=tc.Tensor(np.tile(v, (2, 4, 1))), grid=(2, 2))
            pooled = pool_visual(tokens, identity_proj).data
        np.testing.assert_allclose(pooled, np.tile(v / np.linalg.norm(v), (2, 1)), atol=1e-12)

    def test_token_order_does_not_matter(self, rng):
        values = rng.normal(size=(3, 9, 16))
        with tc.precision('f64'):
            params = init_visual_proj_params(VIT, rng)
            base = pool_visual(UnifiedTokens(values=tc.Tensor(values), grid=(3, 3)), params).data
            shuffled = values[:, rng.permutation(9), :]
            permuted = pool_visual(UnifiedTokens(values=tc.Tensor(shuffled), grid=(3, 3)), params).data
        np.testing.assert_allclose(permuted, base, atol=1e-6)


class TestFactorEight:
    def test_128px_image_gives_64_tokens(self, rng):
        images = ImageBatch(values=tc.Tensor(rng.uniform(-1.0, 1.0, size=(1, 128, 128, 3))))
        latents = encode_image(images, make_codec(8))
        assert latents.values.shape == (1, 16, 16, 192)
        params = init_encoder_params(VIT, 192, (8, 8), rng)
        z_u = encode_unified(latents, params, VIT)
        assert z_u.grid == (8, 8)
        assert z_u.values.shape == (1, 64, 16)

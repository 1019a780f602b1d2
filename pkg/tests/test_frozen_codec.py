import numpy as np
import pytest

from errors import ShapeError
from models import ImageBatch, LatentGrid
from unitok import tensor_core as tc
from unitok.frozen_codec import decode_latents, encode_image, make_codec


@pytest.fixture
def images(rng):
    return ImageBatch(values=tc.Tensor(rng.uniform(-1.0, 1.0, size=(2, 16, 16, 3))))


class TestFrozenCodec:
    def test_latent_shape(self, images):
        z = encode_image(images, make_codec(4))
        assert z.values.shape == (2, 4, 4, 48)
        assert z.factor == 4

    def test_round_trip_is_exact(self, images):
        codec = make_codec(4, seed=7)
        restored = decode_latents(encode_image(images, codec), codec).values.data
        assert np.abs(restored - images.values.data).max() <= 1e-5

    def test_mixing_is_orthogonal(self):
        codec = make_codec(2, seed=3)
        np.testing.assert_allclose(codec.mixing @ codec.mixing.T, np.eye(12), atol=1e-10)

    def test_same_seed_same_codec(self):
        np.testing.assert_array_equal(make_codec(4, seed=1).mixing, make_codec(4, seed=1).mixing)
        assert not np.array_equal(make_codec(4, seed=1).mixing, make_codec(4, seed=2).mixing)

    def test_indivisible_image_rejected(self, rng):
        batch = ImageBatch(values=tc.Tensor(rng.uniform(size=(1, 18, 16, 3))))
        with pytest.raises(ShapeError):
            encode_image(batch, make_codec(4))

    def test_wrong_latent_channels_rejected(self):
        with pytest.raises(ShapeError):
            decode_latents(LatentGrid(values=tc.Tensor(np.zeros((1, 2, 2, 47))), factor=4), make_codec(4))

    def test_codec_is_differentiable(self, images):
        codec = make_codec(4)
        x = tc.Tensor(images.values.data, requires_grad=True)
        with tc.Graph() as graph:
            z = encode_image(ImageBatch(values=x), codec)
            loss = tc.sum_(tc.mul(z.values, z.values))
        tc.backward(graph, loss)
        # orthogonal mixing preserves the squared norm, so d/dx = 2x
        np.testing.assert_allclose(x.grad, 2 * x.data, atol=1e-4)

    def test_factor_eight_latent_shape(self, rng):
        batch = ImageBatch(values=tc.Tensor(rng.uniform(-1.0, 1.0, size=(1, 128, 128, 3))))
        codec = make_codec(8)
        z = encode_image(batch, codec)
        assert codec.latent_channels == 192
        assert z.values.shape == (1, 16, 16, 192)
        assert np.abs(decode_latents(z, codec).values.data - batch.values.data).max() <= 1e-5

import json
import os

import numpy as np
import pytest
from PIL import Image

from errors import CorpusError, ValidationError
from unitok.data_synth import (CAPTIONS_NAME, MANIFEST_NAME, VOCAB_NAME, SceneSpec, ShapeSpec, SyntheticCorpus,
                               build_vocab, export_corpus, gen_sample, load_corpus, render_scene, sample_scene,
                               to_array)
from unitok.und_branch import Vocabulary


class TestScenes:
    def test_same_seed_same_sample(self):
        a_image, a_caption = gen_sample(11, 32)
        b_image, b_caption = gen_sample(11, 32)
        np.testing.assert_array_equal(a_image, b_image)
        assert a_caption == b_caption

    def test_image_range_and_shape(self):
        image, _ = gen_sample(4, 32)
        assert image.shape == (32, 32, 3)
        assert image.dtype == np.float32
        assert image.min() >= -1.0 and image.max() <= 1.0

    def test_caption_lists_shapes_in_cell_order(self):
        spec = SceneSpec(shapes=(ShapeSpec('square', 'blue', 8, 'large'), ShapeSpec('circle', 'red', 0, 'small')),
                         background='white')
        assert spec.caption == ('a small red circle at the top left and '
                                'a large blue square at the bottom right on a white background')

    def test_center_phrase(self):
        spec = SceneSpec(shapes=(ShapeSpec('triangle', 'green', 4, 'small'),), background='gray')
        assert spec.caption == 'a small green triangle in the center on a gray background'

    def test_shared_cell_rejected(self):
        with pytest.raises(ValidationError):
            SceneSpec(shapes=(ShapeSpec('square', 'blue', 2, 'large'), ShapeSpec('circle', 'red', 2, 'small')),
                      background='black')

    def test_identical_content_renders_identically(self):
        shapes = (ShapeSpec('circle', 'cyan', 3, 'large'),)
        a = to_array(render_scene(SceneSpec(shapes=shapes, background='brown', seed=1), 32))
        b = to_array(render_scene(SceneSpec(shapes=shapes, background='brown', seed=2), 32))
        np.testing.assert_array_equal(a, b)

    def test_scene_sizes_vary(self):
        counts = {len(sample_scene(seed).shapes) for seed in range(200)}
        assert counts == {1, 2, 3}


class TestVocab:
    def test_grammar_vocab_covers_every_caption(self):
        vocab = build_vocab()
        corpus = SyntheticCorpus(200, seed=5)
        for caption in corpus.captions:
            assert vocab.unk_id not in vocab.encode(caption)

    def test_vocab_is_small(self):
        assert len(build_vocab()) < 100

    def test_vocab_from_captions(self):
        vocab = build_vocab(['a red circle', 'a blue circle'])
        assert vocab.tokens == ['<pad>', '<bos>', '<eos>', '<unk>', 'a', 'blue', 'circle', 'red']


class TestSyntheticCorpus:
    def test_deterministic_across_instances(self):
        a, b = SyntheticCorpus(6, seed=2, master_res=32), SyntheticCorpus(6, seed=2, master_res=32)
        images_a, captions_a = a.batch([0, 3, 5], 16)
        images_b, captions_b = b.batch([0, 3, 5], 16)
        np.testing.assert_array_equal(images_a, images_b)
        assert captions_a == captions_b

    def test_batch_shape(self, corpus):
        images, captions = corpus.batch(np.array([1, 2]), 16)
        assert images.shape == (2, 16, 16, 3)
        assert len(captions) == 2

    def test_image_cache_is_bounded(self):
        corpus = SyntheticCorpus(6, seed=2, master_res=32, cache_size=2)
        first = corpus.image(0, 16)
        assert corpus.image(0, 16) is first
        for index in range(1, 6):
            corpus.image(index, 16)
        corpus.image(0, 32)
        info = corpus.cache_info()
        assert info.maxsize == 2
        assert info.currsize == 2
        assert info.hits == 1
        # evicted entries are rendered again with the same pixels
        again = corpus.image(0, 16)
        assert again is not first
        np.testing.assert_array_equal(again, first)

    def test_cached_images_are_read_only(self, corpus):
        image = corpus.image(0, 16)
        with pytest.raises(ValueError):
            image[0, 0, 0] = 0.0

    def test_out_of_range_index(self, corpus):
        with pytest.raises(IndexError):
            corpus.caption(len(corpus))


class TestFileCorpus:
    def test_export_then_load(self, tmp_path):
        manifest = export_corpus(str(tmp_path), count=4, seed=9, resolution=32)
        assert manifest['count'] == 4
        assert json.loads((tmp_path / MANIFEST_NAME).read_text())['seed'] == 9
        assert Vocabulary.read(str(tmp_path / VOCAB_NAME)).tokens == build_vocab().tokens

        loaded = load_corpus(str(tmp_path))
        generated = SyntheticCorpus(4, seed=9, master_res=32)
        assert loaded.captions == generated.captions
        np.testing.assert_array_equal(loaded.image(2, 32), generated.image(2, 32))

    def test_export_is_byte_identical(self, tmp_path):
        export_corpus(str(tmp_path / 'a'), count=3, seed=1, resolution=16)
        export_corpus(str(tmp_path / 'b'), count=3, seed=1, resolution=16)
        for rel in (CAPTIONS_NAME, VOCAB_NAME, 'images/00001.png'):
            assert (tmp_path / 'a' / rel).read_bytes() == (tmp_path / 'b' / rel).read_bytes()

    def test_empty_tsv_is_empty_corpus(self, tmp_path):
        (tmp_path / CAPTIONS_NAME).write_text('', encoding='utf-8')
        assert len(load_corpus(str(tmp_path))) == 0

    def test_missing_tab_names_line(self, tmp_path):
        Image.new('RGB', (8, 8)).save(tmp_path / 'x.png')
        (tmp_path / CAPTIONS_NAME).write_text('x.png\ta red circle\nx.png a blue square\n', encoding='utf-8')
        with pytest.raises(CorpusError) as excinfo:
            load_corpus(str(tmp_path))
        assert excinfo.value.line == 2

    def test_empty_caption_rejected(self, tmp_path):
        Image.new('RGB', (8, 8)).save(tmp_path / 'x.png')
        (tmp_path / CAPTIONS_NAME).write_text('x.png\t  \n', encoding='utf-8')
        with pytest.raises(CorpusError):
            load_corpus(str(tmp_path))

    def test_missing_image_rejected(self, tmp_path):
        (tmp_path / CAPTIONS_NAME).write_text('gone.png\ta red circle\n', encoding='utf-8')
        with pytest.raises(CorpusError) as excinfo:
            load_corpus(str(tmp_path))
        assert excinfo.value.path.endswith('gone.png')

    def test_missing_caption_file(self, tmp_path):
        with pytest.raises(CorpusError):
            load_corpus(str(tmp_path))

    def test_undecodable_image_fails_on_use(self, tmp_path):
        (tmp_path / 'bad.png').write_bytes(b'not a png')
        (tmp_path / CAPTIONS_NAME).write_text('bad.png\ta red circle\n', encoding='utf-8')
        corpus = load_corpus(str(tmp_path))
        with pytest.raises(CorpusError) as excinfo:
            corpus.image(0, 16)
        assert excinfo.value.line == 1

    def test_non_square_images_are_center_cropped(self, tmp_path):
        Image.new('RGB', (40, 20), (255, 0, 0)).save(tmp_path / 'wide.png')
        (tmp_path / CAPTIONS_NAME).write_text('wide.png\ta red square\n', encoding='utf-8')
        image = load_corpus(str(tmp_path)).image(0, 16)
        assert image.shape == (16, 16, 3)
        np.testing.assert_allclose(image[..., 0], 1.0)

"""Procedural shape scenes with template captions, corpus export and TSV corpus loading."""
from dataclasses import dataclass
from functools import lru_cache
import json
import logging
import os

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from errors import CorpusError, ValidationError
from unitok.und_branch import SPECIAL_TOKENS, Vocabulary

logger = logging.getLogger('unitok.data')

GRAMMAR_VERSION = 1
SUPERSAMPLE = 4
# decoded (index, resolution) arrays kept per corpus
IMAGE_CACHE_SIZE = 2048

SHAPE_KINDS = ('circle', 'square', 'triangle')
SIZES = ('small', 'large')
COLORS = {
    'red': (220, 40, 40),
    'green': (40, 170, 60),
    'blue': (40, 70, 220),
    'yellow': (240, 220, 40),
    'orange': (245, 140, 30),
    'purple': (140, 50, 170),
    'cyan': (40, 210, 220),
    'magenta': (225, 50, 190),
}
BACKGROUNDS = {
    'white': (245, 245, 245),
    'black': (15, 15, 15),
    'gray': (128, 128, 128),
    'brown': (110, 75, 45),
}
# row-major 3x3 grid
CELLS = ('top left', 'top', 'top right', 'left', 'center', 'right', 'bottom left', 'bottom', 'bottom right')
TEMPLATE_WORDS = ('a', 'at', 'the', 'in', 'and', 'on', 'background')

MANIFEST_NAME = 'manifest.json'
VOCAB_NAME = 'vocab.txt'
CAPTIONS_NAME = 'captions.tsv'


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    color: str
    cell: int
    size: str

    def phrase(self):
        where = 'in the center' if CELLS[self.cell] == 'center' else f'at the {CELLS[self.cell]}'
        return f'a {self.size} {self.color} {self.kind} {where}'


@dataclass(frozen=True)
class SceneSpec:
    shapes: tuple
    background: str
    seed: int = None

    def __post_init__(self):
        cells = [s.cell for s in self.shapes]
        if not 1 <= len(cells) <= 3:
            raise ValidationError(f"A scene holds 1 to 3 shapes, got {len(cells)}")
        if len(set(cells)) != len(cells):
            raise ValidationError("Two shapes cannot share a cell")

    @property
    def caption(self):
        body = ' and '.join(s.phrase() for s in sorted(self.shapes, key=lambda s: s.cell))
        return f'{body} on a {self.background} background'

    def content(self):
        """Everything that determines the rendered image"""
        return tuple(sorted((s.cell, s.kind, s.color, s.size) for s in self.shapes)), self.background


def sample_scene(seed):
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, 4))
    cells = sorted(int(c) for c in rng.choice(len(CELLS), size=count, replace=False))
    colors = list(COLORS)
    shapes = tuple(
        ShapeSpec(kind=SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))],
                  color=colors[rng.integers(len(colors))],
                  cell=cell,
                  size=SIZES[rng.integers(len(SIZES))])
        for cell in cells
    )
    background = list(BACKGROUNDS)[rng.integers(len(BACKGROUNDS))]
    return SceneSpec(shapes=shapes, background=background, seed=seed)


def render_scene(spec, resolution):
    """Anti-aliased RGB rendering: draw at 4x then box-filter down"""
    canvas = resolution * SUPERSAMPLE
    image = Image.new('RGB', (canvas, canvas), BACKGROUNDS[spec.background])
    draw = ImageDraw.Draw(image)
    cell = canvas / 3
    for shape in spec.shapes:
        row, col = divmod(shape.cell, 3)
        cx, cy = (col + 0.5) * cell, (row + 0.5) * cell
        r = cell * (0.42 if shape.size == 'large' else 0.24)
        fill = COLORS[shape.color]
        if shape.kind == 'circle':
            draw.ellipse((cx - r, cy - r, cx + r, cy + r), fill=fill)
        elif shape.kind == 'square':
            draw.rectangle((cx - r, cy - r, cx + r, cy + r), fill=fill)
        else:
            draw.polygon([(cx, cy - r), (cx + r, cy + r), (cx - r, cy + r)], fill=fill)
    return image.resize((resolution, resolution), Image.Resampling.BOX)


def to_array(image):
    """uint8 RGB image -> float32 [H, W, 3] in [-1, 1]"""
    return np.asarray(image, dtype=np.float32) / 127.5 - 1.0


def gen_sample(seed, resolution=64):
    spec = sample_scene(seed)
    return to_array(render_scene(spec, resolution)), spec.caption


def grammar_words():
    words = set(TEMPLATE_WORDS) | set(SHAPE_KINDS) | set(SIZES) | set(COLORS) | set(BACKGROUNDS)
    for cell in CELLS:
        words.update(cell.split())
    return words


def build_vocab(captions=None):
    """Sorted word list behind the four special tokens.

    Without ``captions`` the vocabulary covers the scene grammar.
    """
    if captions is None:
        words = grammar_words()
    else:
        words = {w for c in captions for w in c.lower().split()}
    return Vocabulary(list(SPECIAL_TOKENS) + sorted(words - set(SPECIAL_TOKENS)))


def resize_center_crop(image, resolution):
    """Bilinear resize of the shorter side to ``resolution``, then a centred square crop"""
    w, h = image.size
    if (w, h) != (resolution, resolution):
        scale = resolution / min(w, h)
        size = (max(resolution, round(w * scale)), max(resolution, round(h * scale)))
        image = image.resize(size, Image.Resampling.BILINEAR)
        w, h = size
        left, top = (w - resolution) // 2, (h - resolution) // 2
        image = image.crop((left, top, left + resolution, top + resolution))
    return image


class Dataset:
    """Indexed image/caption pairs decoded on demand at any square resolution"""

    def __len__(self):
        raise NotImplementedError

    def caption(self, index):
        raise NotImplementedError

    def image(self, index, resolution):
        raise NotImplementedError

    @property
    def captions(self):
        return [self.caption(i) for i in range(len(self))]

    def batch(self, indices, resolution):
        images = np.stack([self.image(int(i), resolution) for i in indices]) if len(indices) else \
            np.zeros((0, resolution, resolution, 3), dtype=np.float32)
        return images, [self.caption(int(i)) for i in indices]


class SyntheticCorpus(Dataset):
    """``count`` procedurally generated scenes rendered at ``master_res``"""

    def __init__(self, count, seed=0, master_res=64, cache_size=IMAGE_CACHE_SIZE):
        self.count = count
        self.seed = seed
        self.master_res = master_res
        self._specs = {}
        self._render = lru_cache(maxsize=cache_size)(self._render_uncached)

    @staticmethod
    def sample_seed(seed, index):
        return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])

    def spec(self, index):
        if not 0 <= index < self.count:
            raise IndexError(index)
        if index not in self._specs:
            self._specs[index] = sample_scene(self.sample_seed(self.seed, index))
        return self._specs[index]

    def __len__(self):
        return self.count

    def caption(self, index):
        return self.spec(index).caption

    def master(self, index):
        return render_scene(self.spec(index), self.master_res)

    def _render_uncached(self, index, resolution):
        array = to_array(resize_center_crop(self.master(index), resolution))
        array.setflags(write=False)
        return array

    def image(self, index, resolution):
        return self._render(index, resolution)

    def cache_info(self):
        return self._render.cache_info()

    def __repr__(self):
        return f'<SyntheticCorpus n={self.count} seed={self.seed} res={self.master_res}>'


class FileCorpus(Dataset):
    """Corpus described by a TSV of ``relative_image_path<TAB>caption`` lines"""

    def __init__(self, directory, entries, tsv_path):
        self.directory = directory
        self.entries = entries
        self.tsv_path = tsv_path

    def __len__(self):
        return len(self.entries)

    def caption(self, index):
        return self.entries[index][1]

    def image(self, index, resolution):
        rel_path, _, line = self.entries[index]
        path = os.path.join(self.directory, rel_path)
        try:
            with Image.open(path) as handle:
                image = handle.convert('RGB')
        except (OSError, UnidentifiedImageError) as e:
            raise CorpusError(f"Cannot decode image: {e}", path=path, line=line) from e
        return to_array(resize_center_crop(image, resolution))

    def __repr__(self):
        return f'<FileCorpus n={len(self)} dir={self.directory}>'


def load_corpus(directory, captions_file=CAPTIONS_NAME):
    """Parse the caption TSV; images are only decoded when requested"""
    tsv_path = captions_file if os.path.isabs(captions_file) else os.path.join(directory, captions_file)
    if not os.path.isfile(tsv_path):
        raise CorpusError("Caption file not found", path=tsv_path)

    entries = []
    with open(tsv_path, encoding='utf-8') as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip('\r\n')
            if not line.strip():
                continue
            if '\t' not in line:
                raise CorpusError("Malformed caption line, expected path<TAB>caption", path=tsv_path, line=line_no)
            rel_path, caption = line.split('\t', 1)
            if not caption.strip():
                raise CorpusError("Empty caption", path=tsv_path, line=line_no)
            if not os.path.isfile(os.path.join(directory, rel_path)):
                raise CorpusError("Image file not found", path=os.path.join(directory, rel_path), line=line_no)
            entries.append((rel_path, caption, line_no))

    logger.info(f"[DATA] Loaded {len(entries)} caption entries from {tsv_path}")
    return FileCorpus(directory, entries, tsv_path)


def export_corpus(out_dir, count, seed=0, resolution=64):
    """Write PNGs, the caption TSV, the vocabulary and a manifest under ``out_dir``"""
    corpus = SyntheticCorpus(count, seed=seed, master_res=resolution)
    image_dir = os.path.join(out_dir, 'images')
    os.makedirs(image_dir, exist_ok=True)

    rows = []
    for i in range(count):
        rel_path = f'images/{i:05d}.png'
        corpus.master(i).save(os.path.join(out_dir, rel_path), format='PNG')
        rows.append(f'{rel_path}\t{corpus.caption(i)}\n')

    with open(os.path.join(out_dir, CAPTIONS_NAME), 'w', encoding='utf-8', newline='\n') as handle:
        handle.writelines(rows)
    vocab = build_vocab()
    vocab.write(os.path.join(out_dir, VOCAB_NAME))

    manifest = {
        'seed': seed,
        'grammar_version': GRAMMAR_VERSION,
        'count': count,
        'resolution': resolution,
        'vocab_size': len(vocab),
        'captions': CAPTIONS_NAME,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), 'w', encoding='utf-8', newline='\n') as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write('\n')

    logger.info(f"[DATA] Exported {count} samples (seed={seed}, res={resolution}) to {out_dir}")
    return manifest


def corpus_vocab(directory, dataset):
    """Vocabulary stored next to a corpus, or one built from its captions"""
    path = os.path.join(directory, VOCAB_NAME)
    if os.path.isfile(path):
        return Vocabulary.read(path)
    return build_vocab(dataset.captions)


def training_corpus(data_cfg):
    """(dataset, vocabulary) for training: the corpus at ``data.dir`` or a synthetic one"""
    if data_cfg.dir:
        dataset = load_corpus(data_cfg.dir, data_cfg.captions)
        return dataset, corpus_vocab(data_cfg.dir, dataset)
    return SyntheticCorpus(data_cfg.n_train, seed=data_cfg.seed, master_res=data_cfg.master_res), build_vocab()


def eval_corpus(data_cfg, directory=None, captions_file=CAPTIONS_NAME):
    """Held-out corpus: ``directory`` when given, otherwise synthetic scenes from a disjoint seed"""
    if directory:
        return load_corpus(directory, captions_file)
    return SyntheticCorpus(data_cfg.n_eval, seed=data_cfg.seed + 1, master_res=data_cfg.master_res)

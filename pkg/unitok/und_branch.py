"""Understanding branch: word tokenizer, text encoder, captioning decoder and their losses."""
from dataclasses import dataclass
import logging
import math

import numpy as np

from errors import CorpusError, ShapeError, ValidationError
from models import CaptionBatch
from unitok import tensor_core as tc
from unitok.layers import INIT_STD, linear, linear_params, param, stack_params, transformer

logger = logging.getLogger('unitok.und')

PAD, BOS, EOS, UNK = '<pad>', '<bos>', '<eos>', '<unk>'
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK)
IGNORE_INDEX = -100

LOGIT_SCALE_INIT = math.log(1 / 0.07)
LOGIT_SCALE_MIN = math.log(1 / 100)
LOGIT_SCALE_MAX = math.log(100)
LM_HEAD_STD = 0.002


class Vocabulary:
    """Word-level vocabulary; ids 0-3 are PAD, BOS, EOS, UNK"""

    def __init__(self, words):
        words = list(words)
        if tuple(words[:4]) != SPECIAL_TOKENS:
            words = list(SPECIAL_TOKENS) + [w for w in words if w not in SPECIAL_TOKENS]
        self.tokens = words
        self.index = {w: i for i, w in enumerate(words)}

    pad_id = 0
    bos_id = 1
    eos_id = 2
    unk_id = 3

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, word):
        return word in self.index

    def encode(self, caption):
        return [self.index.get(word, self.unk_id) for word in caption.lower().split()]

    def decode(self, ids):
        words = []
        for i in ids:
            if i == self.eos_id:
                break
            if i in (self.pad_id, self.bos_id):
                continue
            words.append(self.tokens[i])
        return ' '.join(words)

    def encode_batch(self, captions, max_len):
        """Captions -> CaptionBatch padded to the longest one, truncated to ``max_len``"""
        if max_len < 3:
            raise ValidationError(f"max_len must leave room for BOS, a word and EOS, got {max_len}")
        rows = [[self.bos_id] + self.encode(c)[:max_len - 2] + [self.eos_id] for c in captions]
        length = max((len(r) for r in rows), default=2)
        ids = np.full((len(rows), length), self.pad_id, dtype=np.int64)
        for i, row in enumerate(rows):
            ids[i, :len(row)] = row
        return CaptionBatch(token_ids=ids, pad_mask=ids == self.pad_id, vocab_size=len(self),
                            pad_id=self.pad_id, bos_id=self.bos_id, eos_id=self.eos_id)

    def write(self, path):
        with open(path, 'w', encoding='utf-8', newline='\n') as handle:
            handle.write('\n'.join(self.tokens) + '\n')

    @classmethod
    def read(cls, path):
        try:
            with open(path, encoding='utf-8') as handle:
                words = [line.rstrip('\n') for line in handle if line.strip()]
        except OSError as e:
            raise CorpusError(f"Cannot read vocabulary: {e}", path=path) from e
        if tuple(words[:4]) != SPECIAL_TOKENS:
            raise CorpusError(f"Vocabulary must start with {', '.join(SPECIAL_TOKENS)}", path=path, line=1)
        return cls(words)

    def __repr__(self):
        return f'<Vocabulary size={len(self)}>'


@dataclass
class TextTowers:
    """Shapes of the text encoder, the captioning decoder and the shared temperature"""
    cfg: object
    vocab_size: int
    visual_dim: int
    embed_dim: int

    def init_params(self, rng):
        w, cfg = self.cfg.width, self.cfg
        params = {
            'text_encoder.token_embed': param(rng.normal(0.0, INIT_STD, (self.vocab_size, w)), 'text_encoder.token_embed'),
            'text_encoder.pos_embed': param(rng.normal(0.0, INIT_STD, (cfg.max_len, w)), 'text_encoder.pos_embed'),
        }
        params.update(stack_params(rng, 'text_encoder', cfg.depth, w, 4))
        params.update(linear_params(rng, 'text_encoder.proj', w, self.embed_dim))

        params.update(linear_params(rng, 'text_decoder.prefix_proj', self.visual_dim, w))
        params['text_decoder.token_embed'] = param(rng.normal(0.0, INIT_STD, (self.vocab_size, w)), 'text_decoder.token_embed')
        params['text_decoder.pos_embed'] = param(rng.normal(0.0, INIT_STD, (cfg.max_len, w)), 'text_decoder.pos_embed')
        params.update(stack_params(rng, 'text_decoder', cfg.depth, w, 4))
        params.update(linear_params(rng, 'text_decoder.lm_head', w, self.vocab_size, std=LM_HEAD_STD))

        params['logit_scale'] = param(np.array(LOGIT_SCALE_INIT), 'logit_scale')
        return params


def temperature(params):
    """exp(-logit_scale) with the scale clamped so the temperature stays in [1/100, 100]"""
    return tc.exp(tc.neg(tc.clip(params['logit_scale'], LOGIT_SCALE_MIN, LOGIT_SCALE_MAX)))


def _positions(params, key, length):
    table = params[key]
    if length > table.shape[0]:
        raise ShapeError(f"Caption length {length} exceeds the positional table", table.shape)
    return table[:length]


def encode_text(captions, params, cfg):
    """CaptionBatch -> unit-norm caption embeddings [N, D_e]"""
    captions.validate()
    keep = ~captions.pad_mask
    counts = keep.sum(axis=1)
    if np.any(counts == 0):
        raise ValidationError(f"Caption row {int(np.argmin(counts))} is entirely padding")

    n, t = captions.token_ids.shape
    x = tc.embedding(params['text_encoder.token_embed'], captions.token_ids)
    x = tc.add(x, _positions(params, 'text_encoder.pos_embed', t))
    x = transformer(x, params, 'text_encoder', cfg.depth, cfg.heads, key_mask=keep)

    weights = (keep / counts[:, None]).astype(x.data.dtype)[..., None]
    pooled = tc.sum_(tc.mul(x, tc.constant(weights)), axis=1)
    return tc.l2_normalize(linear(pooled, params, 'text_encoder.proj'))


def caption_logits(z_u, token_ids, params, cfg):
    """Next-token logits [N, T, V] for ``token_ids`` given the visual prefix"""
    prefix = linear(z_u.values, params, 'text_decoder.prefix_proj')
    n_prefix = prefix.shape[1]
    t = token_ids.shape[1]
    x = tc.embedding(params['text_decoder.token_embed'], token_ids)
    x = tc.add(x, _positions(params, 'text_decoder.pos_embed', t))
    # causal over the whole [prefix | caption] sequence
    h = transformer(tc.concat([prefix, x], axis=1), params, 'text_decoder', cfg.depth, cfg.heads, causal=True)
    return linear(h[:, n_prefix:, :], params, 'text_decoder.lm_head')


def caption_loss(z_u, captions, params, cfg):
    """Teacher-forced next-token cross-entropy over caption positions, PAD ignored"""
    captions.validate()
    ids = captions.token_ids
    if ids.shape[0] != z_u.values.shape[0]:
        raise ShapeError("caption_loss needs one caption per image", z_u.values.shape, ids.shape)
    if ids.shape[1] < 2:
        raise ValidationError("Captions need at least BOS and EOS to form a prediction target")

    inputs = ids[:, :-1]
    targets = np.where(captions.pad_mask[:, 1:], IGNORE_INDEX, ids[:, 1:])
    logits = caption_logits(z_u, inputs, params, cfg)
    n, t, v = logits.shape
    return tc.softmax_cross_entropy(tc.reshape(logits, (n * t, v)), targets.reshape(-1), ignore_index=IGNORE_INDEX)


def contrastive_loss(z_img, z_txt, temperature):
    """Symmetric InfoNCE over the similarity matrix divided by ``temperature``"""
    z_img, z_txt = tc.as_tensor(z_img), tc.as_tensor(z_txt)
    if z_img.shape != z_txt.shape or z_img.ndim != 2:
        raise ShapeError("contrastive_loss expects matching [N, D] embeddings", z_img.shape, z_txt.shape)
    n = z_img.shape[0]
    if n < 2:
        raise ValidationError(f"Contrastive loss needs at least 2 pairs, got {n}")

    logits = tc.div(tc.matmul(z_img, tc.transpose(z_txt)), temperature)
    targets = np.arange(n)
    image_to_text = tc.softmax_cross_entropy(logits, targets)
    text_to_image = tc.softmax_cross_entropy(tc.transpose(logits), targets)
    return tc.scale(tc.add(image_to_text, text_to_image), 0.5)


def und_loss(caption_l, contrastive_l, alpha):
    return tc.add(caption_l, tc.scale(contrastive_l, alpha))

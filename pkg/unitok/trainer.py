"""Two-stage progressive-resolution training, the per-step objective and the ablation harness."""
import csv
from dataclasses import dataclass, field
import json
import logging
import math
import os

import numpy as np

from config import parse_config_text
from errors import CheckpointError, TrainingDivergedError, ValidationError
from models import CURVE_FIELDS, LOSS_COMPONENTS, MODES, ImageBatch, LossReport, NoiseConfig, ReconLossWeights
from unitok import tensor_core as tc
from unitok.checkpoint import load_checkpoint, save_checkpoint
from unitok.frozen_codec import decode_latents, encode_image, make_codec
from unitok.layers import param
from unitok.recon_branch import DecoderConfig, PerceptualNet, decode_unified, init_decoder_params, perturb, recon_loss
from unitok.und_branch import TextTowers, Vocabulary, caption_loss, contrastive_loss, encode_text, temperature, und_loss
from unitok.unified_encoder import encode_unified, init_encoder_params, init_visual_proj_params, interpolate_pos_embed, pool_visual

logger = logging.getLogger('unitok.trainer')

NOISE_STREAM = 0
DATA_STREAM = 1
LOG_EVERY = 50
POS_TABLES = ('encoder.pos_embed', 'decoder.pos_embed')
# final / initial band read as "barely moved"
STAGNANT_BAND = (0.8, 1.2)
# largest relative gap between joint and und_only understanding losses
PARITY_TOLERANCE = 0.10
# share of the last steps averaged when a claim reads a "final" loss
TAIL_FRACTION = 0.1


def lr_at(step, stage_cfg):
    """Linear warmup from 0 to base_lr, then cosine decay to 0 at total_steps"""
    total, warmup, base = stage_cfg.total_steps, stage_cfg.warmup_steps, stage_cfg.base_lr
    if not 0 <= step <= total:
        raise ValidationError(f"Step {step} outside [0, {total}]")
    if step < warmup:
        return base * step / warmup
    if total == warmup:
        return 0.0
    progress = (step - warmup) / (total - warmup)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


def token_grid(resolution, codec_f):
    side = resolution // (2 * codec_f)
    return side, side


def step_rng(seed, stage_index, step):
    return np.random.default_rng([seed, stage_index, NOISE_STREAM, step])


class BatchSampler:
    """Seeded per-epoch permutation; batch ``k`` of a stage is a pure function of (seed, stage, k)"""

    def __init__(self, size, batch_size, seed, stage_index):
        if size < batch_size:
            raise ValidationError(f"Dataset has {size} samples, fewer than the batch size {batch_size}")
        self.size = size
        self.batch_size = batch_size
        self.seed = seed
        self.stage_index = stage_index
        self.steps_per_epoch = size // batch_size
        self._epoch = None
        self._order = None

    def indices(self, step):
        epoch, offset = divmod(step, self.steps_per_epoch)
        if epoch != self._epoch:
            rng = np.random.default_rng([self.seed, self.stage_index, DATA_STREAM, epoch])
            self._order = rng.permutation(self.size)
            self._epoch = epoch
        return self._order[offset * self.batch_size:(offset + 1) * self.batch_size]


@dataclass
class LossTerms:
    rec: tc.Tensor
    und: tc.Tensor
    components: dict


class TokenizerModel:
    """Frozen codec, trainable encoder, both branches and their flat parameter table"""

    def __init__(self, cfg, vocab, grid=None):
        self.cfg = cfg.validate()
        self.vocab = vocab
        self.codec = make_codec(cfg.codec_f, cfg.codec_seed)
        self.feat_net = PerceptualNet()
        self.decoder_cfg = DecoderConfig.from_vit(cfg.vit, cfg.decoder_depth, self.codec.latent_channels)
        self.towers = TextTowers(cfg.text, len(vocab), cfg.vit.dim, cfg.vit.embed_dim_contrastive)
        self.grid = tuple(grid or token_grid(cfg.stages[0].resolution, cfg.codec_f))

        rng = np.random.default_rng(cfg.seed)
        params = {}
        params.update(init_encoder_params(cfg.vit, self.codec.latent_channels, self.grid, rng))
        params.update(init_visual_proj_params(cfg.vit, rng))
        params.update(init_decoder_params(self.decoder_cfg, self.grid, rng))
        params.update(self.towers.init_params(rng))
        self.params = params
        logger.debug(f"[TRAINER] Initialised {len(params)} tensors, "
                     f"{sum(p.size for p in params.values())} scalars, grid {self.grid}")

    def set_grid(self, grid, optimizer=None):
        """Resize both positional tables; their optimizer moments are dropped"""
        grid = tuple(grid)
        if grid == self.grid:
            return False
        for key in POS_TABLES:
            self.params = interpolate_pos_embed(self.params, self.grid, grid, key=key)
            if optimizer is not None:
                for table in ('m', 'v', 't'):
                    optimizer.state[table].pop(key, None)
        logger.info(f"[TRAINER] Token grid {self.grid} -> {grid}")
        self.grid = grid
        return True

    def set_resolution(self, resolution, optimizer=None):
        return self.set_grid(token_grid(resolution, self.cfg.codec_f), optimizer)

    def encode_captions(self, captions):
        return self.vocab.encode_batch(captions, self.cfg.text.max_len)

    def losses(self, images, captions, rng, lam=0.0, training=True):
        """All five component losses for one batch; rec and und totals stay differentiable"""
        cfg = self.cfg
        x = ImageBatch(values=tc.constant(np.asarray(images, dtype=tc.default_dtype())))
        z_vae = encode_image(x, self.codec)
        z_u = encode_unified(z_vae, self.params, cfg.vit)

        z_tilde = perturb(z_u, NoiseConfig(tau=cfg.tau), rng, training=training)
        z_hat = decode_unified(z_tilde, self.params, self.decoder_cfg)
        x_hat = decode_latents(z_hat, self.codec)
        rec, components = recon_loss(x, x_hat, z_vae, z_hat, ReconLossWeights(beta=cfg.beta, lam=lam), self.feat_net)

        cap = caption_loss(z_u, captions, self.params, cfg.text)
        z_img = pool_visual(z_u, self.params)
        z_txt = encode_text(captions, self.params, cfg.text)
        con = contrastive_loss(z_img, z_txt, temperature(self.params))
        components['caption_ce'] = cap.item()
        components['contrastive'] = con.item()
        return LossTerms(rec=rec, und=und_loss(cap, con, cfg.alpha), components=components)

    def objective(self, terms, mode=None):
        """The scalar that gets backpropagated: the weighted sum of both branches, or one of them"""
        mode = mode or self.cfg.mode
        rec = tc.scale(terms.rec, self.cfg.omega_rec)
        und = tc.scale(terms.und, self.cfg.omega_und)
        if mode == 'joint':
            return tc.add(rec, und)
        if mode == 'und_only':
            return und
        if mode == 'rec_only':
            return rec
        raise ValidationError(f"Unknown mode '{mode}'")

    def reconstruct(self, images, bypass_vit=False):
        """Noise-free reconstruction of an [N, H, W, 3] array"""
        x = ImageBatch(values=tc.constant(np.asarray(images, dtype=tc.default_dtype())))
        z_vae = encode_image(x, self.codec)
        if bypass_vit:
            return decode_latents(z_vae, self.codec)
        self.set_grid((z_vae.grid[0] // self.cfg.vit.patch, z_vae.grid[1] // self.cfg.vit.patch))
        z_u = encode_unified(z_vae, self.params, self.cfg.vit)
        return decode_latents(decode_unified(z_u, self.params, self.decoder_cfg), self.codec)

    def embed_images(self, images):
        x = ImageBatch(values=tc.constant(np.asarray(images, dtype=tc.default_dtype())))
        z_vae = encode_image(x, self.codec)
        self.set_grid((z_vae.grid[0] // self.cfg.vit.patch, z_vae.grid[1] // self.cfg.vit.patch))
        return pool_visual(encode_unified(z_vae, self.params, self.cfg.vit), self.params).data

    def embed_captions(self, captions):
        return encode_text(self.encode_captions(captions), self.params, self.cfg.text).data

    def load_arrays(self, arrays):
        missing = sorted(set(self.params) - set(arrays))
        extra = sorted(set(arrays) - set(self.params))
        if missing or extra:
            raise CheckpointError(f"Checkpoint parameters do not match the model (missing {missing[:3]}, "
                                  f"unexpected {extra[:3]})")
        dtype = tc.default_dtype()
        self.params = {name: param(np.asarray(arrays[name], dtype=dtype), name) for name in self.params}

    def __repr__(self):
        return f'<TokenizerModel mode={self.cfg.mode} grid={self.grid} tensors={len(self.params)}>'


def make_optimizer(cfg):
    o = cfg.optim
    return tc.AdamW(betas=(o.beta1, o.beta2), eps=o.eps, weight_decay=o.weight_decay)


def train_step(model, images, captions, optimizer, stage_index, step, lr, lam=0.0):
    """Forward all five components, backpropagate the mode's objective, apply AdamW.

    Returns:
        (LossReport, params)
    """
    cfg = model.cfg
    if images.shape[1] != images.shape[2] or token_grid(images.shape[1], cfg.codec_f) != model.grid:
        raise ValidationError(f"Batch resolution {images.shape[1:3]} does not match the model grid {model.grid}")
    batch = model.encode_captions(captions) if isinstance(captions, list) else captions

    tc.zero_grad(model.params.values())
    with tc.Graph() as graph:
        terms = model.losses(images, batch, step_rng(cfg.seed, stage_index, step), lam=lam)
        loss = model.objective(terms)

    report = LossReport.compose(step, stage_index, lr, terms.components, cfg.omega_rec, cfg.omega_und,
                                cfg.alpha, cfg.beta, lam)
    bad = report.non_finite_component()
    if bad is not None:
        raise TrainingDivergedError(bad, step, stage_index)

    tc.backward(graph, loss)
    optimizer.step(model.params, lr)
    return report, model.params


class CurveLog:
    """CSV curve writer, one row per step, LF line endings"""

    def __init__(self, path, append=False):
        self.path = path
        exists = append and os.path.isfile(path)
        self._handle = open(path, 'a' if exists else 'w', encoding='utf-8', newline='')
        self._writer = csv.writer(self._handle, lineterminator='\n')
        if not exists:
            self._writer.writerow(CURVE_FIELDS)

    def write(self, report):
        self._writer.writerow(report.to_row())
        self._handle.flush()

    def close(self):
        self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False


def read_curves(path):
    with open(path, encoding='utf-8', newline='') as handle:
        rows = list(csv.DictReader(handle))
    return [LossReport(**{k: (int(row[k]) if k in ('step', 'stage') else float(row[k])) for k in CURVE_FIELDS})
            for row in rows]


def checkpoint_header(model, stage_index, step, snapshot=None):
    return {
        'codec': {'f': model.codec.factor, 'seed': model.codec.seed},
        'config': snapshot,
        'stage': stage_index,
        'step': step,
        'grid': list(model.grid),
        'mode': model.cfg.mode,
        'vocab': list(model.vocab.tokens),
    }


def save_training_checkpoint(path, model, optimizer, stage_index, step, snapshot=None):
    return save_checkpoint(path, model.params, checkpoint_header(model, stage_index, step, snapshot), optimizer)


def restore_training_checkpoint(path, cfg=None, vocab=None):
    """Rebuild (model, optimizer, stage_index, step) from a checkpoint file"""

    ckpt = load_checkpoint(path)
    header = ckpt.header
    if cfg is None:
        if not header.get('config'):
            raise CheckpointError(f"Checkpoint '{path}' carries no config snapshot")
        cfg = parse_config_text(header['config'], source=path)
    if (cfg.codec_f, cfg.codec_seed) != (header['codec']['f'], header['codec']['seed']):
        raise CheckpointError(f"Codec in '{path}' (f={header['codec']['f']}, seed={header['codec']['seed']}) "
                              f"differs from the config")
    vocab = vocab or Vocabulary(header['vocab'])
    model = TokenizerModel(cfg, vocab, grid=tuple(header['grid']))
    model.load_arrays(ckpt.params)
    optimizer = make_optimizer(cfg)
    optimizer.load_state_arrays(ckpt.optimizer_arrays, ckpt.optimizer_steps)
    logger.info(f"[TRAINER] Restored {path} at stage {header['stage']}, step {header['step']}")
    return model, optimizer, header['stage'], header['step']


def run_stage(model, stage_index, dataset, optimizer, curve_log=None, start_step=0, out_dir=None, snapshot=None):
    """Train one stage; returns the per-step LossReports.

    Positional tables are resized when the stage resolution changes the token
    grid. A checkpoint ``stage{index}.ckpt`` is written to ``out_dir`` at the end.
    """
    cfg = model.cfg
    stage = cfg.stages[stage_index - 1]
    if stage.total_steps > 0:
        model.set_resolution(stage.resolution, optimizer)
    reports = []

    if stage.total_steps > start_step:
        sampler = BatchSampler(len(dataset), stage.batch_size, cfg.seed, stage_index)
        logger.info(f"[TRAINER] Stage {stage_index}: {stage.resolution}px, batch {stage.batch_size}, "
                    f"steps {start_step}..{stage.total_steps}, base_lr {stage.base_lr}, lambda {stage.lam}")
    for step in range(start_step, stage.total_steps):
        images, captions = dataset.batch(sampler.indices(step), stage.resolution)
        report, _ = train_step(model, images, captions, optimizer, stage_index, step,
                               lr_at(step, stage), lam=stage.lam)
        reports.append(report)
        if curve_log is not None:
            curve_log.write(report)
        if step % LOG_EVERY == 0 or step == stage.total_steps - 1:
            logger.info(f"[TRAINER] {report!r}")

    if out_dir is not None:
        save_training_checkpoint(os.path.join(out_dir, f'stage{stage_index}.ckpt'), model, optimizer,
                                 stage_index, stage.total_steps, snapshot)
    return reports


@dataclass
class TrainingResult:
    model: TokenizerModel
    reports: list = field(default_factory=list)
    curve_path: str = None
    checkpoints: list = field(default_factory=list)


def run_training(cfg, dataset, vocab, out_dir, snapshot=None, resume=None):
    """Run every stage in order, logging curves to ``out_dir/curves.csv``"""
    os.makedirs(out_dir, exist_ok=True)
    logger.warning(f"[TRAINER] Noise scale tau={cfg.tau} (set recon.tau to change it)")
    logger.info(f"[TRAINER] Mode {cfg.mode}, seed {cfg.seed}, {len(cfg.stages)} stage(s), {len(dataset)} samples")

    if resume:
        model, optimizer, first_stage, start_step = restore_training_checkpoint(resume, cfg, vocab)
    else:
        model, optimizer, first_stage, start_step = TokenizerModel(cfg, vocab), make_optimizer(cfg), 1, 0

    result = TrainingResult(model=model, curve_path=os.path.join(out_dir, 'curves.csv'))
    with CurveLog(result.curve_path, append=bool(resume)) as curve_log:
        for stage_index in range(first_stage, len(cfg.stages) + 1):
            first = start_step if stage_index == first_stage else 0
            result.reports.extend(run_stage(model, stage_index, dataset, optimizer, curve_log,
                                            start_step=first, out_dir=out_dir, snapshot=snapshot))
            result.checkpoints.append(os.path.join(out_dir, f'stage{stage_index}.ckpt'))
    return result


def _relative(a, b):
    return None if b == 0 else (a - b) / abs(b)


def summarize_runs(reports_by_mode):
    """Initial/final/ratio per component for each mode, plus cross-mode final comparisons"""
    summary = {'modes': {}, 'comparisons': {}}
    for mode, reports in reports_by_mode.items():
        if not reports:
            summary['modes'][mode] = {}
            continue
        first, last = reports[0], reports[-1]
        tail = reports[-max(1, int(len(reports) * TAIL_FRACTION)):]
        summary['modes'][mode] = {
            name: {
                'initial': getattr(first, name),
                'final': getattr(last, name),
                'tail_mean': float(np.mean([getattr(r, name) for r in tail])),
                'ratio': None if getattr(first, name) == 0 else getattr(last, name) / getattr(first, name),
            }
            for name in LOSS_COMPONENTS + ('weighted_total',)
        }
        summary['steps'] = len(reports)
    joint = summary['modes'].get('joint', {})
    for other in ('und_only', 'rec_only'):
        finals = summary['modes'].get(other, {})
        if joint and finals:
            summary['comparisons'][f'joint_vs_{other}'] = {
                name: _relative(joint[name]['final'], finals[name]['final']) for name in LOSS_COMPONENTS
            }
    return summary


def _tail_mean(summary, mode, name):
    return summary['modes'][mode][name]['tail_mean']


def _initial(summary, mode, name):
    return summary['modes'][mode][name]['initial']


def _falls(summary, mode, name):
    initial, final = _initial(summary, mode, name), _tail_mean(summary, mode, name)
    return final < initial, {'initial': initial, 'tail_mean': final}


def _stagnant(summary, mode, name):
    initial = _initial(summary, mode, name)
    ratio = None if initial == 0 else _tail_mean(summary, mode, name) / initial
    low, high = STAGNANT_BAND
    return ratio is not None and low <= ratio <= high, {'ratio': ratio, 'band': list(STAGNANT_BAND)}


def _parity(summary, name):
    joint, und = _tail_mean(summary, 'joint', name), _tail_mean(summary, 'und_only', name)
    gap = _relative(joint, und)
    return gap is not None and abs(gap) < PARITY_TOLERANCE, {'joint': joint, 'und_only': und, 'relative_gap': gap}


def _not_worse(summary, name):
    joint, rec = _tail_mean(summary, 'joint', name), _tail_mean(summary, 'rec_only', name)
    return joint <= rec, {'joint': joint, 'rec_only': rec}


# name -> (modes the check reads, check, rule)
ABLATION_CLAIMS = {
    'und_only_pixel_l1_falls': (('und_only',), lambda s: _falls(s, 'und_only', 'pixel_l1'),
                                'und_only pixel_l1 tail mean < step 0'),
    'und_only_latent_l1_falls': (('und_only',), lambda s: _falls(s, 'und_only', 'latent_l1'),
                                 'und_only latent_l1 tail mean < step 0'),
    'joint_caption_matches_und_only': (('joint', 'und_only'), lambda s: _parity(s, 'caption_ce'),
                                       'caption_ce tail mean of joint within 10% of und_only'),
    'joint_contrastive_matches_und_only': (('joint', 'und_only'), lambda s: _parity(s, 'contrastive'),
                                           'contrastive tail mean of joint within 10% of und_only'),
    'rec_only_contrastive_stagnant': (('rec_only',), lambda s: _stagnant(s, 'rec_only', 'contrastive'),
                                      'rec_only contrastive tail mean / step 0 inside the stagnant band'),
    'rec_only_caption_declines': (('rec_only',), lambda s: _falls(s, 'rec_only', 'caption_ce'),
                                  'rec_only caption_ce tail mean < step 0'),
    'joint_pixel_l1_not_worse': (('joint', 'rec_only'), lambda s: _not_worse(s, 'pixel_l1'),
                                 'pixel_l1 tail mean of joint <= rec_only'),
}


def evaluate_claims(summary):
    """Pass/fail of each loss-interaction direction plus the numbers it was read from.

    Claims whose modes did not run, or ran zero steps, are left out.
    """
    claims = {}
    for name, (modes, check, rule) in ABLATION_CLAIMS.items():
        if not all(summary['modes'].get(mode) for mode in modes):
            continue
        passed, values = check(summary)
        claims[name] = {'passed': bool(passed), 'rule': rule, 'values': values}
        if not passed:
            logger.warning(f"[TRAINER] Ablation claim '{name}' not reproduced: {values}")
    return claims


def run_ablation_suite(cfg, dataset, vocab, out_dir, snapshot_for=None):
    """Three runs differing only in mode, plus ``summary.json``"""
    reports_by_mode = {}
    for mode in MODES:
        mode_cfg = cfg.with_mode(mode)
        snapshot = snapshot_for(mode_cfg) if snapshot_for else None
        logger.info(f"[TRAINER] Ablation run '{mode}'")
        result = run_training(mode_cfg, dataset, vocab, os.path.join(out_dir, mode), snapshot=snapshot)
        reports_by_mode[mode] = result.reports

    summary = summarize_runs(reports_by_mode)
    summary['claims'] = evaluate_claims(summary)
    passed = sum(claim['passed'] for claim in summary['claims'].values())
    logger.info(f"[TRAINER] Ablation claims reproduced: {passed}/{len(summary['claims'])}")
    with open(os.path.join(out_dir, 'summary.json'), 'w', encoding='utf-8', newline='\n') as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write('\n')
    return reports_by_mode, summary

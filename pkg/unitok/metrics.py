"""Reconstruction and retrieval metrics plus the evaluation report writer."""
import csv
from dataclasses import asdict, dataclass, field
import json
import logging

import numpy as np
from scipy import linalg
from scipy.signal import convolve2d

from errors import ShapeError, ValidationError
from models import FeatureStats, ImageBatch
from unitok import tensor_core as tc
from unitok.recon_branch import perceptual_loss

logger = logging.getLogger('unitok.metrics')

DATA_RANGE = 2.0
PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
RESIZE_INTERPOLATION = 'bilinear'


def _pair(x, x_hat):
    a = x.clamped() if isinstance(x, ImageBatch) else np.asarray(x)
    b = x_hat.clamped() if isinstance(x_hat, ImageBatch) else np.asarray(x_hat)
    if a.shape != b.shape or a.ndim != 4:
        raise ShapeError("Metric inputs must be matching [N, H, W, C] batches", a.shape, b.shape)
    return a.astype(np.float64), b.astype(np.float64)


def psnr(x, x_hat):
    """Per-image PSNR in dB on a data range of 2, and the batch mean"""
    a, b = _pair(x, x_hat)
    mse = ((a - b) ** 2).mean(axis=(1, 2, 3))
    with np.errstate(divide='ignore'):
        values = np.where(mse > 0, 10.0 * np.log10(DATA_RANGE ** 2 / np.maximum(mse, 1e-300)), PSNR_CAP)
    values = np.minimum(values, PSNR_CAP)
    return values, float(values.mean()) if values.size else float('nan')


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-coords ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(a, b, window):
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2

    def filt(img):
        return convolve2d(img, window, mode='valid')

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return ssim_map.mean()


def ssim(x, x_hat):
    """Per-image SSIM (11x11 Gaussian window, sigma 1.5), channels averaged"""
    a, b = _pair(x, x_hat)
    if a.shape[1] < SSIM_WINDOW or a.shape[2] < SSIM_WINDOW:
        raise ValidationError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[1]}x{a.shape[2]}")
    window = gaussian_window()
    values = np.array([
        np.mean([_ssim_channel(a[i, :, :, c], b[i, :, :, c], window) for c in range(a.shape[3])])
        for i in range(a.shape[0])
    ])
    return values, float(values.mean()) if values.size else float('nan')


def frechet_distance(a, b):
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))"""
    if a.dim != b.dim:
        raise ShapeError("Fréchet distance needs statistics of the same dimension", a.mean.shape, b.mean.shape)
    sa = (a.covariance + a.covariance.T) / 2
    sb = (b.covariance + b.covariance.T) / 2
    w, v = linalg.eigh(sa)
    sqrt_a = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    inner = sqrt_a @ sb @ sqrt_a
    eig = linalg.eigh((inner + inner.T) / 2, eigvals_only=True)
    tr_covmean = np.sqrt(np.clip(eig, 0.0, None)).sum()
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(sa) + np.trace(sb) - 2.0 * tr_covmean)
    return max(value, 0.0)


class FeatureAccumulator:
    """Streaming mean/scatter accumulation; merges are order independent"""

    def __init__(self, dim):
        self.count = 0
        self.mean = np.zeros(dim)
        self.scatter = np.zeros((dim, dim))

    def add(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.mean.shape[0]:
            raise ShapeError("Features must be [N, D]", features.shape, self.mean.shape)
        if not len(features):
            return self
        batch = FeatureAccumulator(features.shape[1])
        batch.count = len(features)
        batch.mean = features.mean(axis=0)
        centered = features - batch.mean
        batch.scatter = centered.T @ centered
        return self.merge(batch)

    def merge(self, other):
        n = self.count + other.count
        if n == 0:
            return self
        delta = other.mean - self.mean
        self.scatter = self.scatter + other.scatter + np.outer(delta, delta) * (self.count * other.count / n)
        self.mean = self.mean + delta * (other.count / n)
        self.count = n
        return self

    def stats(self):
        if self.count < 2:
            raise ValidationError(f"Need at least 2 samples for feature statistics, got {self.count}")
        cov = self.scatter / (self.count - 1)
        return FeatureStats(mean=self.mean.copy(), covariance=(cov + cov.T) / 2, count=self.count)


def feature_stats(features):
    features = np.asarray(features, dtype=np.float64)
    return FeatureAccumulator(features.shape[1]).add(features).stats()


def _ranks(sims):
    """Rank of the diagonal entry in each row, ties going to the lower index"""
    n = sims.shape[0]
    diag = np.diag(sims)[:, None]
    cols = np.arange(n)[None, :]
    rows = np.arange(n)[:, None]
    ahead = (sims > diag) | ((sims == diag) & (cols < rows))
    return ahead.sum(axis=1)


def retrieval_recall(z_img, z_txt, k):
    """Recall@k in both directions for paired unit-norm embeddings"""
    a = np.asarray(z_img.data if isinstance(z_img, tc.Tensor) else z_img, dtype=np.float64)
    b = np.asarray(z_txt.data if isinstance(z_txt, tc.Tensor) else z_txt, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError("retrieval_recall expects matching [N, D] embeddings", a.shape, b.shape)
    if k < 1:
        raise ValidationError(f"k must be at least 1, got {k}")
    sims = a @ b.T
    return {
        'image_to_text': float((_ranks(sims) < k).mean()),
        'text_to_image': float((_ranks(sims.T) < k).mean()),
    }


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    protocol: dict = field(default_factory=dict)

    def add(self, metric, value, n):
        self.rows.append({'metric': metric, 'value': float(value), 'n': int(n)})

    def value(self, metric):
        for row in self.rows:
            if row['metric'] == metric:
                return row['value']
        raise KeyError(metric)

    def to_dict(self):
        return asdict(self)

    def write(self, csv_path, json_path=None):
        with open(csv_path, 'w', encoding='utf-8', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(['metric', 'value', 'n'])
            for row in self.rows:
                writer.writerow([row['metric'], repr(row['value']), row['n']])
        if json_path:
            with open(json_path, 'w', encoding='utf-8', newline='\n') as handle:
                json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
                handle.write('\n')

    def __repr__(self):
        body = ' '.join(f"{r['metric']}={r['value']:.4f}" for r in self.rows)
        return f'<MetricReport {body}>'


def eval_reconstruction(dataset, model, resolution, batch_size=32, bypass_vit=False, report=None):
    """PSNR, SSIM, perceptual distance and surrogate Fréchet distance over ``dataset``.

    ``model`` must provide ``reconstruct(images, bypass_vit)`` and ``feat_net``.
    Reconstructions are noise-free and clamped to [-1, 1] before scoring.
    """
    n = len(dataset)
    if n == 0:
        raise ValidationError("Cannot evaluate on an empty dataset")
    report = report or MetricReport()
    feat_net = model.feat_net
    real = FeatureAccumulator(feat_net.feature_dim)
    fake = FeatureAccumulator(feat_net.feature_dim)
    psnr_values, ssim_values = [], []
    perceptual_total = 0.0

    for start in range(0, n, batch_size):
        images, _ = dataset.batch(range(start, min(start + batch_size, n)), resolution)
        x = ImageBatch(values=tc.constant(images.astype(tc.default_dtype())))
        x_hat = ImageBatch(values=tc.constant(model.reconstruct(images, bypass_vit=bypass_vit).clamped()))
        psnr_values.append(psnr(x, x_hat)[0])
        if resolution >= SSIM_WINDOW:
            ssim_values.append(ssim(x, x_hat)[0])
        perceptual_total += perceptual_loss(x, x_hat, feat_net).item() * len(images)
        real.add(feat_net.features(x.values.data))
        fake.add(feat_net.features(x_hat.values.data))

    omitted = {}
    report.add('psnr', np.concatenate(psnr_values).mean(), n)
    if ssim_values:
        report.add('ssim', np.concatenate(ssim_values).mean(), n)
    else:
        omitted['ssim'] = f"resolution {resolution} is below the {SSIM_WINDOW}px window"
    report.add('perceptual', perceptual_total / n, n)
    if n >= 2:
        report.add('surrogate_fid', frechet_distance(real.stats(), fake.stats()), n)
    else:
        omitted['surrogate_fid'] = f"needs at least 2 images, got {n}"
    for metric, reason in omitted.items():
        logger.warning(f"[EVAL] Skipping {metric}: {reason}")
    report.protocol.update({
        'resolution': resolution,
        'resize': RESIZE_INTERPOLATION,
        'center_crop': True,
        'noise_sigma': 0.0,
        'bypass_vit': bool(bypass_vit),
        'omitted': omitted,
    })
    logger.info(f"[EVAL] Reconstruction metrics over {n} images at {resolution}px: {report}")
    return report


def eval_retrieval(dataset, model, resolution, count, ks=(1, 5), batch_size=32, report=None):
    """Image/text recall@k on the first ``count`` pairs of ``dataset``"""
    count = min(count, len(dataset))
    if count < 1:
        raise ValidationError("Cannot evaluate retrieval on an empty dataset")
    report = report or MetricReport()
    img, txt = [], []
    for start in range(0, count, batch_size):
        images, captions = dataset.batch(range(start, min(start + batch_size, count)), resolution)
        img.append(model.embed_images(images))
        txt.append(model.embed_captions(captions))
    z_img, z_txt = np.concatenate(img), np.concatenate(txt)
    for k in ks:
        recall = retrieval_recall(z_img, z_txt, k)
        report.add(f'recall@{k}_image_to_text', recall['image_to_text'], count)
        report.add(f'recall@{k}_text_to_image', recall['text_to_image'], count)
    logger.info(f"[EVAL] Retrieval over {count} pairs: {report}")
    return report

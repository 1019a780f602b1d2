import logging
import os

import click

from decorators import exit_codes, force_option, refuse_overwrite
from errors import ValidationError
from unitok.data_synth import CAPTIONS_NAME, eval_corpus
from unitok.metrics import MetricReport, eval_reconstruction, eval_retrieval
from unitok.trainer import restore_training_checkpoint

logger = logging.getLogger('unitok.cli')


@click.command('eval')
@click.option('--checkpoint', 'checkpoint_path', required=True, type=click.Path(dir_okay=False))
@click.option('--data', 'data_dir', default=None, type=click.Path(file_okay=False),
              help='Corpus directory; defaults to held-out synthetic scenes.')
@click.option('--captions', default=CAPTIONS_NAME, show_default=True)
@click.option('--res', 'resolution', default=None, type=int, help='Evaluation resolution; defaults to the last stage.')
@click.option('--out', 'out', required=True, type=click.Path(file_okay=False), help='Directory for metrics.csv/json.')
@click.option('--bypass-vit', is_flag=True, default=False, help='Score the codec round trip only.')
@force_option
@exit_codes
@refuse_overwrite('out')
def evaluate(checkpoint_path, data_dir, captions, resolution, out, bypass_vit, force):
    """Reconstruction metrics plus image/text retrieval recall on a held-out corpus."""
    model, _, stage, step = restore_training_checkpoint(checkpoint_path)
    cfg = model.cfg
    resolution = resolution or cfg.stages[-1].resolution
    if resolution % (2 * cfg.codec_f):
        raise ValidationError(f"--res {resolution} is not divisible by 2*f = {2 * cfg.codec_f}")

    dataset = eval_corpus(cfg.data, data_dir, captions)
    report = MetricReport(protocol={'checkpoint': checkpoint_path, 'stage': stage, 'step': step})
    eval_reconstruction(dataset, model, resolution, bypass_vit=bypass_vit, report=report)
    if not bypass_vit and len(dataset) >= 2:
        eval_retrieval(dataset, model, resolution, cfg.n_retrieval, report=report)
    elif not bypass_vit:
        report.protocol['omitted']['retrieval'] = f"needs at least 2 pairs, got {len(dataset)}"

    os.makedirs(out, exist_ok=True)
    report.write(os.path.join(out, 'metrics.csv'), os.path.join(out, 'metrics.json'))
    logger.info(f"[CLI] eval wrote {len(report.rows)} metrics to {out}")
    for row in report.rows:
        click.echo(f"{row['metric']}\t{row['value']:.6g}\t{row['n']}")

import logging

import click

from decorators import exit_codes, force_option, refuse_overwrite
from errors import ValidationError
from unitok.data_synth import export_corpus

logger = logging.getLogger('unitok.cli')


@click.command('gen-data')
@click.option('--out', 'out', required=True, type=click.Path(file_okay=False), help='Output directory.')
@click.option('--n', 'count', default=8192, show_default=True, type=int, help='Number of samples.')
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--res', 'resolution', default=64, show_default=True, type=int, help='Image side in pixels.')
@click.option('--codec-f', default=4, show_default=True, type=int, help='Codec factor the corpus must suit.')
@force_option
@exit_codes
@refuse_overwrite('out')
def gen_data(out, count, seed, resolution, codec_f, force):
    """Render a synthetic shapes corpus: PNGs, captions.tsv, vocab.txt and manifest.json."""
    if count < 1:
        raise ValidationError(f"--n must be positive, got {count}")
    if codec_f < 1 or resolution < 2 * codec_f or resolution % (2 * codec_f):
        raise ValidationError(f"--res {resolution} is not divisible by 2*f = {2 * codec_f}")
    manifest = export_corpus(out, count, seed=seed, resolution=resolution)
    logger.info(f"[CLI] gen-data wrote {manifest['count']} samples to {out}")
    click.echo(f"Wrote {manifest['count']} samples to {out}")

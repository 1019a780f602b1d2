import logging
import sys

import click

from config import load_settings
from errors import ConfigError
from models import VERSION

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

logger = logging.getLogger('unitok')


def configure_logging(level='INFO', log_file=None):
    """Attach stderr (and optionally file) handlers to the ``unitok`` logger"""
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    formatter = logging.Formatter(LOG_FORMAT)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(formatter)
    logger.addHandler(stream)
    if log_file:
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    logger.setLevel(getattr(logging, level, logging.INFO))
    logger.propagate = False


@click.group()
@click.version_option(VERSION, prog_name='unitok')
@click.option('--log-level', default=None, help='Overrides UNITOK_LOG_LEVEL.')
@click.pass_context
def cli(ctx, log_level):
    """Unified visual tokenizer: data generation, training, ablations and evaluation."""
    try:
        settings = load_settings()
    except ConfigError as e:
        click.echo(f"Error: {e}", err=True)
        ctx.exit(3)
    configure_logging((log_level or settings.log_level).upper(), settings.log_file)
    if settings.threads == 0:
        logger.debug("[CLI] Deterministic single-thread kernels (UNITOK_THREADS=0)")
    ctx.obj = settings


# Register command modules
from commands.data import gen_data
from commands.train import train, ablate
from commands.evaluate import evaluate
from commands.curves import export_curves

cli.add_command(gen_data)
cli.add_command(train)
cli.add_command(ablate)
cli.add_command(evaluate)
cli.add_command(export_curves)


def main(argv=None):
    return cli.main(args=argv, prog_name='unitok')


if __name__ == '__main__':
    main()

import csv
import logging
import os

import click

from decorators import exit_codes, force_option, refuse_overwrite
from errors import ValidationError
from models import LOSS_COMPONENTS
from unitok.trainer import read_curves

logger = logging.getLogger('unitok.cli')

CURVE_FILE = 'curves.csv'
LONG_FIELDS = ('run', 'stage', 'step', 'global_step', 'lr', 'metric', 'value')


def find_curve_logs(root):
    """(label, path) of every curve log under ``root``, in sorted directory order"""
    found = []
    for directory, subdirs, files in os.walk(root):
        subdirs.sort()
        if CURVE_FILE in files:
            label = os.path.relpath(directory, os.path.dirname(os.path.normpath(root)))
            found.append((label.replace(os.sep, '/'), os.path.join(directory, CURVE_FILE)))
    return found


def long_rows(label, reports):
    for global_step, report in enumerate(reports):
        for metric in LOSS_COMPONENTS + ('weighted_total',):
            yield [label, report.stage, report.step, global_step, repr(report.lr), metric, repr(getattr(report, metric))]


@click.command('export-curves')
@click.option('--runs', 'runs', required=True, multiple=True, type=click.Path(file_okay=False),
              help='Run directory; repeat for several. Nested runs (e.g. ablations) are found recursively.')
@click.option('--out', 'out', required=True, type=click.Path(dir_okay=False), help='Merged CSV file.')
@force_option
@exit_codes
@refuse_overwrite('out')
def export_curves(runs, out, force):
    """Merge curve logs into one long-format CSV for plotting."""
    logs = []
    for run in runs:
        found = find_curve_logs(run)
        if not found:
            raise ValidationError(f"No {CURVE_FILE} found under '{run}'")
        logs.extend(found)

    count = 0
    with open(out, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(LONG_FIELDS)
        for label, path in logs:
            for row in long_rows(label, read_curves(path)):
                writer.writerow(row)
                count += 1
    logger.info(f"[CLI] export-curves merged {len(logs)} logs into {out} ({count} rows)")
    click.echo(f"Wrote {count} rows from {len(logs)} runs to {out}")

import logging
import os

import click

from config import load_config, reduced_ablation_config, render_config
from decorators import exit_codes, force_option, refuse_overwrite
from models import MODES, RunManifest
from unitok.data_synth import training_corpus
from unitok.trainer import run_ablation_suite, run_training

logger = logging.getLogger('unitok.cli')

SNAPSHOT_NAME = 'config.txt'
MANIFEST_NAME = 'manifest.json'


def write_snapshot(out_dir, cfg):
    """Write the resolved config next to the run outputs and return its path"""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, SNAPSHOT_NAME)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write(render_config(cfg))
    return path


def start_manifest(out_dir, cfg):
    manifest = RunManifest(config_snapshot=write_snapshot(out_dir, cfg), build_id=RunManifest.build_identifier(),
                           seed=cfg.seed, started_at=RunManifest.now())
    manifest.write(os.path.join(out_dir, MANIFEST_NAME))
    return manifest


def finish_manifest(out_dir, manifest, outputs):
    manifest.finished_at = RunManifest.now()
    manifest.outputs = outputs
    manifest.write(os.path.join(out_dir, MANIFEST_NAME))


@click.command('train')
@click.option('--config', 'config_path', required=True, help='Run configuration file.')
@click.option('--mode', type=click.Choice(MODES), default=None, help='Override train.mode.')
@click.option('--out', 'out', required=True, type=click.Path(file_okay=False), help='Output directory.')
@click.option('--resume', type=click.Path(dir_okay=False), default=None, help='Continue from a checkpoint.')
@force_option
@exit_codes
@refuse_overwrite('out')
def train(config_path, mode, out, resume, force):
    """Two-stage training; writes curves.csv, stage checkpoints, config.txt and manifest.json."""
    cfg, _ = load_config(config_path)
    if mode:
        cfg = cfg.with_mode(mode)
    dataset, vocab = training_corpus(cfg.data)
    manifest = start_manifest(out, cfg)
    snapshot = render_config(cfg)

    result = run_training(cfg, dataset, vocab, out, snapshot=snapshot, resume=resume)
    finish_manifest(out, manifest, {'curves': result.curve_path, 'checkpoints': result.checkpoints})
    logger.info(f"[CLI] train finished: {len(result.reports)} steps logged to {result.curve_path}")
    click.echo(f"Trained {len(result.reports)} steps; outputs in {out}")


@click.command('ablate')
@click.option('--config', 'config_path', default=None, help='Run configuration file.')
@click.option('--reduced', is_flag=True, default=False,
              help='Use the built-in reduced ablation preset instead of --config.')
@click.option('--out', 'out', required=True, type=click.Path(file_okay=False), help='Output directory.')
@force_option
@exit_codes
@refuse_overwrite('out')
def ablate(config_path, reduced, out, force):
    """Joint, und_only and rec_only runs from one config, plus summary.json."""
    if bool(config_path) == reduced:
        raise click.UsageError("Give exactly one of --config or --reduced")
    cfg = reduced_ablation_config() if reduced else load_config(config_path)[0]
    dataset, vocab = training_corpus(cfg.data)
    manifest = start_manifest(out, cfg)

    reports, summary = run_ablation_suite(cfg, dataset, vocab, out, snapshot_for=render_config)
    outputs = {mode: os.path.join(out, mode, 'curves.csv') for mode in reports}
    outputs['summary'] = os.path.join(out, 'summary.json')
    finish_manifest(out, manifest, outputs)
    claims = summary['claims']
    passed = sum(claim['passed'] for claim in claims.values())
    click.echo(f"Ablation finished; {passed}/{len(claims)} loss-interaction claims hold; "
               f"summary in {outputs['summary']}")

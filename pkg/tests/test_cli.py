import csv
import json
import logging
import os

import pytest
from click.testing import CliRunner

from app import cli
from models import CURVE_FIELDS


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(autouse=True)
def detach_log_handlers():
    yield
    logger = logging.getLogger('unitok')
    for handler in list(logger.handlers):
        logger.removeHandler(handler)


@pytest.fixture
def trained_run(runner, tiny_config_file, tmp_path):
    out = str(tmp_path / 'run')
    result = runner.invoke(cli, ['train', '--config', tiny_config_file, '--out', out])
    assert result.exit_code == 0, result.output
    return out


class TestGenData:
    def test_writes_corpus(self, runner, tmp_path):
        out = tmp_path / 'data'
        result = runner.invoke(cli, ['gen-data', '--out', str(out), '--n', '3', '--seed', '2', '--res', '16'])
        assert result.exit_code == 0, result.output
        assert len((out / 'captions.tsv').read_text(encoding='utf-8').splitlines()) == 3
        assert sorted(os.listdir(out / 'images')) == ['00000.png', '00001.png', '00002.png']
        assert json.loads((out / 'manifest.json').read_text())['resolution'] == 16

    def test_same_flags_same_bytes(self, runner, tmp_path):
        for name in ('a', 'b'):
            runner.invoke(cli, ['gen-data', '--out', str(tmp_path / name), '--n', '2', '--res', '16'])
        for rel in ('captions.tsv', 'vocab.txt', 'manifest.json', 'images/00001.png'):
            assert (tmp_path / 'a' / rel).read_bytes() == (tmp_path / 'b' / rel).read_bytes()

    def test_indivisible_resolution_exits_3(self, runner, tmp_path):
        result = runner.invoke(cli, ['gen-data', '--out', str(tmp_path / 'd'), '--res', '30', '--codec-f', '4'])
        assert result.exit_code == 3
        assert '30' in result.output

    def test_refuses_to_overwrite(self, runner, tmp_path):
        args = ['gen-data', '--out', str(tmp_path / 'd'), '--n', '1', '--res', '16']
        assert runner.invoke(cli, args).exit_code == 0
        refused = runner.invoke(cli, args)
        assert refused.exit_code == 3
        assert '--force' in refused.output
        assert runner.invoke(cli, args + ['--force']).exit_code == 0

    def test_missing_required_option_is_usage_error(self, runner):
        assert runner.invoke(cli, ['gen-data']).exit_code == 2


class TestTrain:
    def test_outputs(self, trained_run):
        with open(os.path.join(trained_run, 'curves.csv'), encoding='utf-8', newline='') as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == list(CURVE_FIELDS)
        assert len(rows) == 1 + 3
        for name in ('stage1.ckpt', 'stage2.ckpt', 'config.txt', 'manifest.json'):
            assert os.path.isfile(os.path.join(trained_run, name))
        manifest = json.loads(open(os.path.join(trained_run, 'manifest.json'), encoding='utf-8').read())
        assert manifest['seed'] == 3
        assert manifest['finished_at']

    def test_snapshot_replays_identically(self, runner, trained_run, tmp_path):
        replay = tmp_path / 'replay'
        result = runner.invoke(cli, ['train', '--config', os.path.join(trained_run, 'config.txt'), '--out', str(replay)])
        assert result.exit_code == 0, result.output
        with open(os.path.join(trained_run, 'curves.csv'), 'rb') as handle:
            assert (replay / 'curves.csv').read_bytes() == handle.read()

    def test_missing_config_exits_3(self, runner, tmp_path):
        missing = str(tmp_path / 'nope.cfg')
        result = runner.invoke(cli, ['train', '--config', missing, '--out', str(tmp_path / 'run')])
        assert result.exit_code == 3
        assert 'nope.cfg' in result.output

    def test_unknown_key_exits_3(self, runner, tmp_path):
        path = tmp_path / 'bad.cfg'
        path.write_text('vit.width = 3\n', encoding='utf-8')
        result = runner.invoke(cli, ['train', '--config', str(path), '--out', str(tmp_path / 'run')])
        assert result.exit_code == 3
        assert 'vit.width' in result.output

    def test_mode_override(self, runner, tiny_config_file, tmp_path):
        out = tmp_path / 'rec'
        result = runner.invoke(cli, ['train', '--config', tiny_config_file, '--mode', 'rec_only', '--out', str(out)])
        assert result.exit_code == 0, result.output
        assert 'train.mode = rec_only' in (out / 'config.txt').read_text(encoding='utf-8')
        header = (out / 'curves.csv').read_text(encoding='utf-8').splitlines()[0]
        assert header == ','.join(CURVE_FIELDS)

    def test_bad_mode_is_usage_error(self, runner, tiny_config_file, tmp_path):
        result = runner.invoke(cli, ['train', '--config', tiny_config_file, '--mode', 'both',
                                     '--out', str(tmp_path / 'run')])
        assert result.exit_code == 2


class TestAblate:
    def test_summary_records_claims(self, runner, tiny_config_file, tmp_path):
        out = tmp_path / 'ablation'
        result = runner.invoke(cli, ['ablate', '--config', tiny_config_file, '--out', str(out)])
        assert result.exit_code == 0, result.output
        claims = json.loads((out / 'summary.json').read_text())['claims']
        assert len(claims) == 7
        assert all(isinstance(claim['passed'], bool) for claim in claims.values())
        assert f"{sum(c['passed'] for c in claims.values())}/7" in result.output

    def test_needs_exactly_one_config_source(self, runner, tiny_config_file, tmp_path):
        assert runner.invoke(cli, ['ablate', '--out', str(tmp_path / 'a')]).exit_code == 2
        both = runner.invoke(cli, ['ablate', '--config', tiny_config_file, '--reduced', '--out', str(tmp_path / 'b')])
        assert both.exit_code == 2


class TestEval:
    def test_metrics(self, runner, trained_run, tmp_path):
        out = tmp_path / 'eval'
        result = runner.invoke(cli, ['eval', '--checkpoint', os.path.join(trained_run, 'stage1.ckpt'),
                                     '--out', str(out)])
        assert result.exit_code == 0, result.output
        metrics = {row['metric']: float(row['value'])
                   for row in csv.DictReader(open(out / 'metrics.csv', encoding='utf-8'))}
        for name in ('psnr', 'ssim', 'perceptual', 'surrogate_fid', 'recall@1_image_to_text',
                     'recall@5_text_to_image'):
            assert name in metrics
        assert json.loads((out / 'metrics.json').read_text())['protocol']['resize'] == 'bilinear'

    def test_bypass_vit_is_near_lossless(self, runner, trained_run, tmp_path):
        out = tmp_path / 'bypass'
        result = runner.invoke(cli, ['eval', '--checkpoint', os.path.join(trained_run, 'stage2.ckpt'),
                                     '--bypass-vit', '--out', str(out)])
        assert result.exit_code == 0, result.output
        metrics = {row['metric']: float(row['value'])
                   for row in csv.DictReader(open(out / 'metrics.csv', encoding='utf-8'))}
        assert metrics['psnr'] >= 90
        assert metrics['surrogate_fid'] <= 1e-3

    def test_corrupt_checkpoint_exits_4(self, runner, tmp_path):
        path = tmp_path / 'broken.ckpt'
        path.write_bytes(b'garbage')
        result = runner.invoke(cli, ['eval', '--checkpoint', str(path), '--out', str(tmp_path / 'e')])
        assert result.exit_code == 4


class TestExportCurves:
    def test_long_format(self, runner, trained_run, tmp_path):
        out = tmp_path / 'long.csv'
        result = runner.invoke(cli, ['export-curves', '--runs', trained_run, '--out', str(out)])
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(open(out, encoding='utf-8')))
        assert len(rows) == 3 * 6
        assert {row['metric'] for row in rows} == {'pixel_l1', 'latent_l1', 'perceptual', 'caption_ce',
                                                   'contrastive', 'weighted_total'}
        assert rows[0]['run'] == 'run'

    def test_missing_logs_exit_3(self, runner, tmp_path):
        empty = tmp_path / 'empty'
        empty.mkdir()
        result = runner.invoke(cli, ['export-curves', '--runs', str(empty), '--out', str(tmp_path / 'x.csv')])
        assert result.exit_code == 3


def test_version(runner):
    result = runner.invoke(cli, ['--version'])
    assert result.exit_code == 0
    assert '0.1.0' in result.output

# -*- coding: utf-8 -*-

import json
import os

import pytest

from dynfusion import ablation
from dynfusion import cli
from dynfusion import data
from dynfusion import reports


CONFIG = """\
data:
  synthetic:
    n_samples: 200
    d_text: 8
    d_audio: 5
    d_video: 4
    seq_len_max: 4
    seed: 3
model:
  d_attn: 4
  d_hidden: 4
  encoder_hidden: 3
train:
  learning_rate: 1.0e-3
  max_epochs: 3
gradcheck:
  seeds: [0]
  lengths: [1, 3]
  max_elements: 4
"""


@pytest.fixture
def config_file(tmp_path):
    filename = tmp_path / 'config.yaml'
    filename.write_text(CONFIG)
    return str(filename)


def run(config_file, command, *args):
    return cli.main([command, '-c', config_file] + [str(arg) for arg in args])


def reject_constant(token):
    raise ValueError(f'non-standard JSON token {token}')


def read(path):
    with open(path, 'rb') as handle:
        return handle.read()


@pytest.fixture
def trained(config_file, tmp_path):
    out = tmp_path / 'train'
    assert run(config_file, 'train', '--out', out) == 0
    return out


class TestUsage:

    @pytest.mark.parametrize('argv', [['--help'], ['-?'], ['train', '--help'], ['--help', 'fly']])
    def test_help(self, capsys, argv):
        assert cli.main(argv) == 0
        printed = capsys.readouterr().out
        assert 'Usage: dynfusion' in printed
        assert 'off for synthetic data' in printed
        assert 'expected exactly one command' not in printed

    def test_unknown_command(self, capsys):
        assert cli.main(['fly']) == 2
        assert 'expected exactly one command' in capsys.readouterr().out

    def test_unknown_option(self):
        assert cli.main(['train', '--colour', 'red']) == 2

    def test_invalid_configuration(self, config_file, tmp_path):
        assert run(config_file, 'train', '--fusion', 'magic', '--out', tmp_path) == 2

    def test_missing_config_file(self, tmp_path):
        assert cli.main(['train', '-c', str(tmp_path / 'nope.yaml')]) == 2

    def test_missing_dataset(self, config_file, tmp_path):
        assert run(config_file, 'train', '--data', tmp_path / 'nowhere', '--out', tmp_path / 'out') == 3


class TestGenSynth:

    def test_writes_loadable_dataset(self, config_file, tmp_path, capsys):
        out = tmp_path / 'synth'
        assert run(config_file, 'gen-synth', '--out', out) == 0
        printed = capsys.readouterr().out
        assert 'train: 140 utterances' in printed
        splits = data.load_dataset(str(out))
        assert [len(splits[name]) for name in ('train', 'val', 'test')] == [140, 30, 30]
        assert splits.n_dropped == 0
        with open(out / 'manifest.json') as handle:
            assert json.load(handle)['extra']['synthetic']['n_samples'] == 200

    @pytest.mark.parametrize('encoding, suffix', [('jsonl', 'jsonl'), ('binary', 'bin')])
    def test_generation_is_byte_identical(self, config_file, tmp_path, encoding, suffix):
        for name in ('a', 'b'):
            assert run(config_file, 'gen-synth', '--encoding', encoding, '--samples', 50, '--out', tmp_path / name) == 0
        assert read(tmp_path / 'a' / f'train.{suffix}') == read(tmp_path / 'b' / f'train.{suffix}')

    def test_refuses_dataset_path(self, config_file, tmp_path):
        assert run(config_file, 'gen-synth', '--data', tmp_path, '--out', tmp_path / 'synth') == 2


class TestTrain:

    def test_artifacts(self, trained):
        assert os.path.isfile(trained / 'seed-0' / 'checkpoint.dafckpt')
        with open(trained / 'seed-0' / 'history.csv') as handle:
            text = handle.read()
        assert text.startswith('# config: ')
        header, rows = reports.read_csv(text)
        assert header[:3] == ['epoch', 'train_mse', 'val_mse']
        assert [row[0] for row in rows] == ['1', '2', '3']
        with open(trained / 'run_record.json') as handle:
            record = json.load(handle, parse_constant=reject_constant)
        assert record['command'] == 'train'
        assert record['seeds'][0]['seed'] == 0
        assert set(record['aggregate']) >= {'mae', 'acc2', 'auc'}

    def test_runs_are_byte_identical(self, config_file, trained, tmp_path):
        other = tmp_path / 'again'
        assert run(config_file, 'train', '--out', other, '--workers', 2) == 0
        for name in ('history.csv', 'checkpoint.dafckpt'):
            assert read(trained / 'seed-0' / name) == read(other / 'seed-0' / name)

    def test_trains_from_a_dataset_directory(self, config_file, tmp_path):
        assert run(config_file, 'gen-synth', '--samples', 60, '--out', tmp_path / 'synth') == 0
        assert run(config_file, 'train', '--data', tmp_path / 'synth', '--modalities', 'text,video',
                   '--seeds', '1,2', '--epochs', 1, '--out', tmp_path / 'run') == 0
        assert os.path.isfile(tmp_path / 'run' / 'seed-2' / 'checkpoint.dafckpt')


class TestEvaluate:

    def test_evaluate_writes_reports(self, config_file, trained, tmp_path, capsys):
        out = tmp_path / 'eval'
        assert run(config_file, 'evaluate', '--checkpoint', trained / 'seed-0' / 'checkpoint.dafckpt',
                   '--out', out) == 0
        for name in ('predictions.csv', 'gates.csv', 'metrics.json', 'metrics.md'):
            assert os.path.isfile(out / name)
        with open(out / 'gates.csv') as handle:
            header, rows = reports.read_csv(handle.read())
        assert header == ['id', 'label', 'gate_text', 'gate_audio', 'gate_video', 'oracle']
        assert len(rows) == 30
        with open(out / 'metrics.json') as handle:
            values = json.load(handle, parse_constant=reject_constant)
        assert values['metrics']['roc_points'][0][2] == 'Inf'
        assert 'mae: ' in capsys.readouterr().out

    def test_missing_checkpoint_option(self, config_file, tmp_path):
        assert run(config_file, 'evaluate', '--out', tmp_path) == 2

    def test_missing_checkpoint_file(self, config_file, tmp_path):
        assert run(config_file, 'evaluate', '--checkpoint', tmp_path / 'none.dafckpt', '--out', tmp_path) == 3

    def test_roc(self, config_file, trained, tmp_path, capsys):
        out = tmp_path / 'roc'
        assert run(config_file, 'roc', '--checkpoint', trained / 'seed-0' / 'checkpoint.dafckpt',
                   '--noise-std', 0.1, '--out', out) == 0
        with open(out / 'roc.csv') as handle:
            header, rows = reports.read_csv(handle.read())
        assert header == ['fpr', 'tpr', 'threshold']
        assert [float(v) for v in rows[0][:2]] == [0.0, 0.0]
        assert [float(v) for v in rows[-1][:2]] == [1.0, 1.0]
        with open(out / 'roc.svg') as handle:
            assert 'AUC =' in handle.read()
        assert capsys.readouterr().out.startswith('AUC ')

    def test_roc_without_figure(self, config_file, trained, tmp_path):
        out = tmp_path / 'roc'
        assert run(config_file, 'roc', '--checkpoint', trained / 'seed-0' / 'checkpoint.dafckpt',
                   '--no-svg', '--out', out) == 0
        assert not os.path.exists(out / 'roc.svg')


class TestGradCheck:

    def test_passes(self, config_file, tmp_path, capsys):
        assert run(config_file, 'gradcheck', '--out', tmp_path) == 0
        printed = capsys.readouterr().out
        assert 'Gradient check passed' in printed
        for fusion in ('softmax3', 'sigmoid2', 'static_concat', 'fixed_mean'):
            assert f'[{fusion}]' in printed

    def test_corrupted_gradient_is_named(self, config_file, tmp_path, capsys):
        assert run(config_file, 'gradcheck', '--corrupt', 'head.W_out', '--out', tmp_path) == 4
        failing = [line.split()[1] for line in capsys.readouterr().out.splitlines() if line.strip().startswith('FAIL')]
        assert set(failing) == {'head.W_out'}

    def test_zero_tolerance_fails(self, config_file, tmp_path):
        assert run(config_file, 'gradcheck', '--tol', 0, '--out', tmp_path) == 4


class TestAblate:

    def test_table1_matrix(self, config_file, tmp_path):
        out = tmp_path / 'ablate'
        assert run(config_file, 'ablate', '--epochs', 1, '--workers', 2, '--out', out) == 0
        with open(out / 'ablation.csv') as handle:
            header, rows = reports.read_csv(handle.read())
        assert header == list(reports.TABLE_COLUMNS)
        assert [row[0] for row in rows] == ['Text only', 'Text + Audio (Dynamic Fusion)',
                                            'Text + Video (Dynamic Fusion)', 'Text + Audio + Video (Dynamic Fusion)']
        assert os.path.isfile(out / 'cells' / 'text+audio-softmax3' / 'seed-0' / 'checkpoint.dafckpt')
        with open(out / 'run_record.json') as handle:
            record = json.load(handle)
        assert [cell['status'] for cell in record['cells']] == ['ok'] * 4
        assert not os.path.exists(out / 'exceptions.log')

    def test_fusion_comparison(self, config_file, tmp_path):
        out = tmp_path / 'ablate'
        assert run(config_file, 'ablate', '--epochs', 1, '--matrix', 'fusion', '--out', out) == 0
        with open(out / 'comparison.md') as handle:
            text = handle.read()
        assert '| Text + Audio + Video (Dynamic Fusion) |' in text
        assert '| Text + Audio + Video (Static Fusion) |' in text
        assert 'mae: best [' in text

    def test_failing_cell_is_reported(self, config_file, tmp_path, monkeypatch):
        original = ablation.train_and_evaluate

        def failing(run_config, splits, modalities, fusion, seed):
            if modalities == ('text',):
                raise RuntimeError('simulated failure')
            return original(run_config, splits, modalities, fusion, seed)

        monkeypatch.setattr(ablation, 'train_and_evaluate', failing)
        out = tmp_path / 'ablate'
        assert run(config_file, 'ablate', '--epochs', 1, '--out', out) == 1
        with open(out / 'ablation.md') as handle:
            first_row = [line for line in handle.read().splitlines() if line.startswith('| Text only')][0]
        assert first_row.count('FAILED') == 4
        with open(out / 'exceptions.log') as handle:
            assert 'simulated failure' in handle.read()
        with open(out / 'run_record.json') as handle:
            statuses = [cell['status'] for cell in json.load(handle)['cells']]
        assert statuses == ['failed', 'ok', 'ok', 'ok']

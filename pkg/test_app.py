"""
命令行测试
"""

import json
import os

import pandas as pd
import pytest
from click.testing import CliRunner

from app import EXIT_CONFIG, EXIT_RUNTIME, cli
from modules.data_processor import load_encoded


def _invoke(experiment_file, out, *args):
    return CliRunner().invoke(cli, ['--config', experiment_file, '--out', str(out), *args])


def _read(path):
    with open(path, 'rb') as f:
        return f.read()


def test_pairs_is_deterministic(experiment_file, tmp_path):
    first = _invoke(experiment_file, tmp_path / 'a', 'pairs')
    second = _invoke(experiment_file, tmp_path / 'b', 'pairs')
    assert first.exit_code == 0, first.output
    assert second.exit_code == 0, second.output
    for name in ('pairs_train.csv', 'pairs_test.csv', 'pair_stats.csv'):
        assert _read(tmp_path / 'a' / name) == _read(tmp_path / 'b' / name)

    stats = pd.read_csv(tmp_path / 'a' / 'pair_stats.csv')
    assert stats['split'].tolist() == ['train', 'test']
    assert stats['samples'].tolist() == [240, 120]
    assert stats['dims'].tolist() == [11, 11]
    assert stats['sensitive'].tolist() == ['group', 'group']


def test_missing_config_exits_with_config_code():
    result = CliRunner().invoke(cli, ['pairs'])
    assert result.exit_code == EXIT_CONFIG


def test_bad_config_version(experiment_file, tmp_path):
    with open(experiment_file, encoding='utf-8') as f:
        config = json.load(f)
    config['config_version'] = 2
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps(config), encoding='utf-8')
    result = CliRunner().invoke(cli, ['--config', str(path), 'pairs'])
    assert result.exit_code == EXIT_CONFIG


def test_sample_without_bundle_fails_at_runtime(experiment_file, tmp_path):
    result = _invoke(experiment_file, tmp_path / 'empty', 'sample')
    assert result.exit_code == EXIT_RUNTIME


def test_train_generator_then_sample(experiment_file, tmp_path):
    out = tmp_path / 'gen'
    result = _invoke(experiment_file, out, 'train-generator')
    assert result.exit_code == 0, result.output
    assert (out / 'generator.afgb').exists()
    trace = pd.read_csv(out / 'generator_trace.csv')
    assert len(trace) == 2
    assert (out / 'generator_trace.png').exists()

    result = _invoke(experiment_file, out, 'sample', '--percentage', '0')
    assert result.exit_code == 0, result.output
    assert len(pd.read_csv(out / 'antidote.csv')) == 0

    result = _invoke(experiment_file, out, 'sample')
    assert result.exit_code == 0, result.output
    antidote = pd.read_csv(out / 'antidote.csv')
    # ⌈20% × 240⌉
    assert len(antidote) <= 48
    assert list(antidote.columns[:3]) == ['source_index', 'requested_sensitive', 'label']


def test_experiment_and_tradeoff(experiment_file, tmp_path):
    out = tmp_path / 'exp'
    result = _invoke(experiment_file, out, 'experiment')
    assert result.exit_code == 0, result.output

    table = pd.read_csv(out / 'experiment_table.csv')
    assert set(table['name']) == {'logreg:base', 'logreg:anti', 'nn:base', 'nn:antidro'}
    assert set(table['status']) == {'ok'}
    base = table[table['regime'] == 'base'].dropna(subset=['delta_pct'])
    assert len(base) > 0
    assert (base['delta_pct'] == 0.0).all()
    assert (table['seeds'] == 2).all()

    reports = os.listdir(out / 'reports')
    assert len(reports) == 8
    assert 'logreg_base_seed0.json' in reports
    assert (out / 'experiment_table.xlsx').exists()
    assert (out / 'classifiers.afgb').exists()

    result = _invoke(experiment_file, out, 'tradeoff', '-p', '0', '-p', '20')
    assert result.exit_code == 0, result.output
    sweep = pd.read_csv(out / 'tradeoff.csv')
    assert sweep['percentage'].tolist() == [0.0, 20.0]
    assert sweep['antidote_rows'].iloc[0] == 0
    base_roc = table[(table['name'] == 'logreg:base') & (table['metric'] == 'roc')]['mean'].iloc[0]
    assert sweep['roc'].iloc[0] == pytest.approx(base_roc)


def test_encode(experiment_file, tmp_path):
    out = tmp_path / 'enc'
    result = _invoke(experiment_file, out, 'encode')
    assert result.exit_code == 0, result.output
    train = load_encoded(str(out / 'train.fenc'))
    test = load_encoded(str(out / 'test.fenc'))
    assert (train.n_rows, test.n_rows) == (240, 120)
    assert train.width == 11

"""
实验编排测试（采样循环、随机数流、汇总）
"""

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from config import ExperimentConfig
from modules import report_generator
from modules.antidote_generator import RawGeneration, count_violations
from modules.chart_generator import ChartGenerator
from modules.data_processor import codes_to_onehot
from modules.errors import ConfigError, EmptyPairsError
from modules.report_generator import ExperimentRunner, safe_name, seed_stream, stream_seed, target_count


def _comparable_sampler(gen, dataset, iterations, rng, batch_size=4096):
    """替代生成器：每行请求下一个敏感取值，其余特征不变"""
    requested = np.tile((dataset.sensitive_codes() + 1) % 3, (iterations, 1))
    src = np.tile(np.arange(dataset.n_rows), iterations)
    data = replace(dataset.subset(src), S=codes_to_onehot(requested, [3]), split='synthetic')
    return RawGeneration(data=data, source_index=src, requested=requested)


@pytest.fixture
def runner(experiment_file, tmp_path):
    cfg = ExperimentConfig.from_json(experiment_file).with_overrides(out=str(tmp_path / 'run'))
    return ExperimentRunner(cfg)


def test_target_count():
    assert target_count(0.0, 240) == 0
    assert target_count(10.0, 240) == 24
    assert target_count(20.0, 240) == 48
    assert target_count(45.25, 30162) == 13649
    assert target_count(0.1, 240) == 1


def test_seed_streams_are_independent():
    assert stream_seed(0, 'gan') == stream_seed(0, 'gan')
    assert stream_seed(0, 'gan') != stream_seed(1, 'gan')
    assert stream_seed(0, 'gan') != stream_seed(0, 'sample')
    assert stream_seed(0, 'classifier', 0) != stream_seed(0, 'classifier', 1)
    assert isinstance(seed_stream(0, 'x'), np.random.SeedSequence)


def test_safe_name():
    assert safe_name('nn:anti+dis') == 'nn_anti_dis'


def test_sample_reaches_exact_target(runner, monkeypatch):
    monkeypatch.setattr(report_generator, 'sample_raw', _comparable_sampler)
    train = runner.prepare().train
    antidote = runner.sample_antidote(None, 20.0)
    assert len(antidote) == 48
    assert count_violations(antidote, train, runner.config.comparability) == 0
    assert np.all(np.diff(antidote.source_index) > 0)


def test_sample_shortfall_keeps_partial_result(runner, monkeypatch):
    monkeypatch.setattr(report_generator, 'sample_raw', _comparable_sampler)
    antidote = runner.sample_antidote(None, 500.0)
    # 3 次迭代 × 240 行
    assert len(antidote) == 3 * 240


def test_sample_is_reproducible(runner, monkeypatch):
    monkeypatch.setattr(report_generator, 'sample_raw', _comparable_sampler)
    first = runner.sample_antidote(None, 20.0)
    second = runner.sample_antidote(None, 20.0)
    assert np.array_equal(first.source_index, second.source_index)


def test_regime_percentage(runner):
    regimes = {r.name: r for r in runner.config.regimes}
    assert runner.regime_percentage(regimes['logreg:anti']) == 20.0
    assert runner.regime_percentage(regimes['nn:antidro']) == 20.0
    assert runner.regime_percentage(replace(regimes['logreg:anti'], antidote_percentage=5.0)) == 5.0


def test_consolidate_marks_failures(runner):
    outcomes = [{'status': 'failed', 'config': r, 'seed_index': 0, 'error': 'boom'}
                for r in runner.config.regimes]
    table = runner.consolidate(outcomes)
    assert set(table['status']) == {'failed'}
    assert table['mean'].isna().all()
    assert len(table) == len(runner.config.regimes) * 9


def test_charts_skip_empty_frames(tmp_path):
    charts = ChartGenerator(str(tmp_path))
    assert charts.plot_trace(pd.DataFrame()) is None
    sweep = pd.DataFrame({
        'regime': ['logreg:anti', 'logreg:anti'], 'percentage': [0.0, 20.0], 'status': ['ok', 'ok'],
        'roc': [80.0, 79.0], 'roc_var': [0.1, 0.2], 'pos_mean': [5.0, 4.0], 'pos_mean_var': [0.0, 0.1],
        'neg_mean': [3.0, 2.5], 'neg_mean_var': [0.1, 0.1],
    })
    path = charts.plot_tradeoff(sweep)
    assert path is not None
    assert (tmp_path / 'tradeoff.png').exists()


def _untrainable(*args, **kwargs):
    raise EmptyPairsError("训练集中没有可比较样本对")


def test_experiment_keeps_base_rows_when_generator_fails(runner, monkeypatch):
    monkeypatch.setattr(runner, 'generator', _untrainable)
    table = runner.run_experiment()
    status = table.groupby('name')['status'].first()
    assert status['logreg:base'] == 'ok'
    assert status['nn:base'] == 'ok'
    assert status['logreg:anti'] == 'failed'
    assert status['nn:antidro'] == 'failed'
    assert table.loc[table['name'] == 'logreg:base', 'mean'].notna().all()
    runs = pd.read_csv(runner.config.output('experiment_runs.csv'))
    failed = runs[runs['status'] == 'failed']
    assert len(failed) == 2 * len(runner.config.seeds)
    assert failed['error'].str.contains('可比较样本对').all()


def test_tradeoff_zero_percent_point_survives_generator_failure(runner, monkeypatch):
    monkeypatch.setattr(runner, 'generator', _untrainable)
    sweep = runner.run_tradeoff()
    by_pct = sweep.set_index('percentage')['status']
    assert by_pct[0.0] == 'ok'
    assert by_pct[20.0] == 'failed'


def test_config_errors_still_abort_experiment(runner, monkeypatch):
    def _bad_config(*args, **kwargs):
        raise ConfigError("模型包中的字段定义与当前配置不一致")

    monkeypatch.setattr(runner, 'generator', _bad_config)
    with pytest.raises(ConfigError):
        runner.run_experiment()

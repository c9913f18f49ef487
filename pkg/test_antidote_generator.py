"""
解毒数据生成测试
"""

from dataclasses import replace

import numpy as np
import pytest

from conftest import random_encoded
from modules.antidote_generator import (AntidoteSet, AntidoteTrainer, GanHyperparams, RawGeneration,
                                        count_violations, group_ratios, post_filter, sample_raw, train_generator)
from modules.comparability import ComparabilityConfig, PairSet, mine_pairs
from modules.data_processor import codes_to_onehot
from modules.errors import ConfigError, EmptyPairsError
from modules.export_generator import generator_bundle, generator_from_bundle, load_bundle, save_bundle

CFG = ComparabilityConfig(t_d=1, t_c=0.025)


def _small_hp(**kwargs):
    return GanHyperparams(batch_size=64, epochs=2, noise_dim=4, hidden_dim=16, monitor_size=64, **kwargs)


def _shifted_raw(dataset, broken=()):
    """每行请求下一个敏感取值；broken 中的行把第一个连续特征推出阈值"""
    own = dataset.sensitive_codes()
    requested = (own + 1) % 3
    C = dataset.C.copy()
    for k in broken:
        C[k, 0] = 1.0 if C[k, 0] < 0.5 else 0.0
    data = replace(dataset, C=C, S=codes_to_onehot(requested, [3]), split='synthetic')
    return RawGeneration(data=data, source_index=np.arange(dataset.n_rows), requested=requested)


def test_hyperparams_validation():
    with pytest.raises(ConfigError):
        GanHyperparams(lr_g=0.0)
    with pytest.raises(ConfigError):
        GanHyperparams(batch_size=0)
    with pytest.raises(ConfigError):
        GanHyperparams.from_dict({'learning_rate': 0.1})
    assert GanHyperparams.from_dict(_small_hp().to_dict()) == _small_hp()


def test_empty_pairs_rejected(train_ds):
    with pytest.raises(EmptyPairsError):
        AntidoteTrainer(train_ds, PairSet.empty(), _small_hp())


def test_training_trace(train_ds):
    pairs = mine_pairs(train_ds, CFG)
    gen, disc, trace = train_generator(train_ds, pairs, _small_hp(), cfg=CFG, max_modes=3)
    frame = trace.to_frame()
    assert frame.shape == (2, 8)
    assert frame['epoch'].tolist() == [1, 2]
    for column in ('sensitive', 'discrete', 'continuous', 'all'):
        assert frame[column].between(0.0, 1.0).all()
    assert np.isfinite(frame[['loss_g', 'loss_d', 'gradient_penalty']].to_numpy()).all()
    assert disc.width == gen.encoder.width


def test_sample_and_filter(train_ds):
    pairs = mine_pairs(train_ds, CFG)
    gen, _, _ = train_generator(train_ds, pairs, _small_hp(), cfg=CFG, max_modes=3)

    raw = sample_raw(gen, train_ds, 2, np.random.default_rng(0), batch_size=100)
    # 单个三值敏感字段：每行两个不同的请求取值
    assert len(raw) == 2 * 2 * train_ds.n_rows
    assert not np.any(np.all(raw.requested == train_ds.sensitive_codes()[raw.source_index], axis=1))
    raw.data.check_invariants()
    assert np.array_equal(raw.data.y, train_ds.y[raw.source_index])

    antidote = post_filter(raw, train_ds, CFG)
    assert count_violations(antidote, train_ds, CFG) == 0
    antidote.data.check_invariants()

    strict = post_filter(raw, train_ds, CFG, require_requested_sensitive=True)
    assert len(strict) <= len(antidote)
    assert np.all(strict.data.sensitive_codes() == strict.requested)


def test_bundle_reproduces_samples(train_ds, processor, tmp_path):
    pairs = mine_pairs(train_ds, CFG)
    gen, disc, _ = train_generator(train_ds, pairs, _small_hp(seed=3), cfg=CFG, max_modes=3)
    path = str(tmp_path / 'generator.afgb')
    save_bundle(generator_bundle(processor, (gen, disc)), path)
    loaded, _ = generator_from_bundle(load_bundle(path))

    first = sample_raw(gen, train_ds, 1, np.random.default_rng(11))
    second = sample_raw(loaded, train_ds, 1, np.random.default_rng(11))
    assert np.array_equal(first.data.C, second.data.C)
    assert np.array_equal(first.data.D, second.data.D)
    assert np.array_equal(first.data.S, second.data.S)


def test_post_filter_drops_incomparable_rows(train_ds):
    broken = [0, 5, 17]
    antidote = post_filter(_shifted_raw(train_ds, broken), train_ds, CFG)
    assert len(antidote) == train_ds.n_rows - len(broken)
    assert not set(broken) & set(antidote.source_index.tolist())
    assert count_violations(antidote, train_ds, CFG) == 0
    assert np.array_equal(antidote.data.y, train_ds.y[antidote.source_index])
    assert antidote.data.split == 'antidote'


def test_group_ratios(train_ds):
    raw = _shifted_raw(train_ds)
    ratios = group_ratios(raw.data, train_ds, raw.requested, CFG)
    assert ratios == {'sensitive': 1.0, 'discrete': 1.0, 'continuous': 1.0, 'all': 1.0}
    wrong = group_ratios(raw.data, train_ds, train_ds.sensitive_codes(), CFG)
    assert wrong['sensitive'] == 0.0
    assert wrong['all'] == 0.0


def test_truncate_and_partners(train_ds):
    antidote = post_filter(_shifted_raw(train_ds), train_ds, CFG)
    small = antidote.truncate(10, np.random.default_rng(0))
    assert len(small) == 10
    assert np.all(np.diff(small.source_index) > 0)
    assert antidote.truncate(len(antidote) + 5, np.random.default_rng(0)) is antidote

    doubled = antidote.concat(antidote)
    indptr, rows = doubled.partners(train_ds.n_rows)
    assert indptr[-1] == len(doubled)
    assert np.all(np.diff(indptr) == 2)
    assert np.array_equal(doubled.source_index[rows[indptr[3]:indptr[4]]], [3, 3])
    assert antidote.percentage(train_ds.n_rows) == pytest.approx(100.0)


def test_antidote_csv(train_ds, processor, tmp_path):
    antidote = post_filter(_shifted_raw(train_ds), train_ds, CFG).truncate(30, np.random.default_rng(1))
    path = str(tmp_path / 'antidote.csv')
    antidote.to_csv(path, processor)
    header = open(path, encoding='utf-8').readline().strip().split(',')
    assert header[:3] == ['source_index', 'requested_sensitive', 'label']

    restored = AntidoteSet.from_csv(path, processor)
    assert np.array_equal(restored.source_index, antidote.source_index)
    assert np.array_equal(restored.requested, antidote.requested)
    assert np.array_equal(restored.data.D, antidote.data.D)
    assert np.array_equal(restored.data.S, antidote.data.S)
    assert np.allclose(restored.data.C, antidote.data.C)
    assert np.array_equal(restored.data.y, antidote.data.y)


def test_empty_raw_filters_to_empty(train_ds):
    empty = _shifted_raw(train_ds.subset(np.zeros(0, dtype=np.int64)))
    antidote = post_filter(empty, train_ds, CFG)
    assert len(antidote) == 0
    assert antidote.data.width == train_ds.width


def test_empty_antidote_set(train_ds):
    empty = AntidoteSet.empty_like(train_ds)
    assert len(empty) == 0
    assert empty.requested.shape == (0, 1)
    assert empty.data.n_rows == 0
    assert len(empty.truncate(10, np.random.default_rng(0))) == 0

    one = empty.concat(AntidoteSet(train_ds.subset(np.array([4])), np.array([4]), np.array([[2]])))
    assert len(one) == 1
    assert one.requested.tolist() == [[2]]
    assert one.percentage(train_ds.n_rows) == pytest.approx(100.0 / train_ds.n_rows)


def test_sensitive_ratio_converges_on_binary_sensitive_feature():
    data = random_encoded(np.random.default_rng(21), 300, d_widths=(2,), s_widths=(2,), n_c=1, grid=4)
    pairs = mine_pairs(data, CFG)
    assert len(pairs) > 1000
    hp = GanHyperparams(batch_size=256, epochs=100, noise_dim=4, hidden_dim=32, lr_g=1e-3, lr_d=1e-3,
                        monitor_size=512, seed=4)
    _, _, trace = train_generator(data, pairs, hp, cfg=CFG, max_modes=3)
    frame = trace.to_frame()
    assert len(frame) == 100
    assert frame['sensitive'].max() >= 0.99

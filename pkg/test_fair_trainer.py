"""
公平训练方式测试
"""

from dataclasses import replace

import numpy as np
import pytest

from modules.antidote_generator import AntidoteSet, RawGeneration, post_filter
from modules.comparability import ComparabilityConfig, comparable_mask
from modules.data_processor import codes_to_onehot
from modules.errors import ConfigError, ContractViolationError
from modules.fair_trainer import (FairTrainer, LogRegConfig, NNConfig, RegimeConfig, dro_objective,
                                  logreg_gradient, random_comparable, random_synthetic, train_anti,
                                  train_antidro, train_base, train_logreg, train_nn)

CFG = ComparabilityConfig(t_d=1, t_c=0.025)
SMALL_NN = {'hidden': [8, 8], 'iterations': 60, 'batch_size': 32}


def _antidote(dataset):
    own = dataset.sensitive_codes()
    requested = (own + 1) % 3
    data = replace(dataset, S=codes_to_onehot(requested, [3]), split='synthetic')
    raw = RawGeneration(data=data, source_index=np.arange(dataset.n_rows), requested=requested)
    return post_filter(raw, dataset, CFG)


def test_regime_config_validation():
    with pytest.raises(ConfigError):
        RegimeConfig('antidro', 'logreg')
    with pytest.raises(ConfigError):
        RegimeConfig('bagging', 'logreg')
    with pytest.raises(ConfigError):
        RegimeConfig('base', 'svm')
    with pytest.raises(ConfigError):
        RegimeConfig.from_dict({'regime': 'base', 'epochs': 3})
    cfg = RegimeConfig.from_dict({'regime': 'antidro', 'classifier': 'nn', 'nn': SMALL_NN})
    assert cfg.name == 'nn:antidro'
    assert cfg.nn.hidden == (8, 8)
    assert cfg.needs_antidote
    assert RegimeConfig.from_dict(cfg.to_dict()) == cfg


def test_logreg_reaches_optimum():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 4))
    y = (X @ np.array([1.5, -2.0, 0.5, 0.0]) + rng.normal(scale=0.5, size=300) > 0).astype(int)
    model = train_logreg(X, y, LogRegConfig(C=1.0))
    assert np.linalg.norm(logreg_gradient(model, X, y, C=1.0)) < 1e-4
    assert np.mean((model.predict_proba(X) >= 0.5) == y) > 0.85
    assert model.params['coef'][0] > 0 > model.params['coef'][1]


def test_nn_learns_separable_data():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(400, 3))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    model = train_nn(X, y, NNConfig(hidden=(16, 16), iterations=400, lr=0.1, weight_decay=1e-4,
                                    halving_period=200, batch_size=64), seed=0)
    assert np.mean((model.predict_proba(X) >= 0.5) == y) > 0.9
    assert np.isfinite(model.metadata['final_loss'])


def test_nn_rejects_empty_training_set():
    with pytest.raises(ContractViolationError):
        train_nn(np.zeros((0, 3)), np.zeros(0))


def test_anti_with_empty_antidote_equals_base(train_ds, test_ds):
    for classifier in ('logreg', 'nn'):
        cfg = RegimeConfig('anti', classifier, nn=SMALL_NN)
        base = train_base(train_ds, RegimeConfig('base', classifier, nn=SMALL_NN), seed=5)
        anti = train_anti(train_ds, AntidoteSet.empty_like(train_ds), cfg, seed=5)
        assert np.allclose(base.score_dataset(test_ds), anti.score_dataset(test_ds))


def test_dis_drops_sensitive_block(train_ds, test_ds):
    model = train_base(train_ds, RegimeConfig('dis', 'logreg'), dis=True)
    assert model.params['coef'].shape == (train_ds.width - 3,)
    scores = model.score_dataset(test_ds)
    assert scores.shape == (test_ds.n_rows,)
    assert np.all((scores >= 0.0) & (scores <= 1.0))


def test_antidro_runs(train_ds, test_ds):
    antidote = _antidote(train_ds)
    cfg = RegimeConfig('antidro', 'nn', nn=SMALL_NN, max_candidates=1)
    model = train_antidro(train_ds, antidote, cfg, seed=0)
    assert model.score_dataset(test_ds).shape == (test_ds.n_rows,)

    X = model.view(train_ds)
    X_anti = model.standardizer.transform(antidote.data)
    erm, dro = dro_objective(model, X, train_ds.y.astype(float), X_anti, antidote.source_index)
    assert dro >= erm


def test_antidro_requires_nn(train_ds):
    cfg = RegimeConfig('antidro', 'nn', nn=SMALL_NN)
    cfg.classifier = 'logreg'
    with pytest.raises(ConfigError):
        train_antidro(train_ds, AntidoteSet.empty_like(train_ds), cfg)


def test_random_comparable_rows_are_comparable(train_ds):
    randoms = random_comparable(train_ds, CFG, 500, np.random.default_rng(0))
    assert len(randoms) == 500
    randoms.data.check_invariants()
    assert np.all(comparable_mask(randoms.data, train_ds, CFG, b_index=randoms.source_index))
    own = train_ds.sensitive_codes()[randoms.source_index]
    assert np.all(np.any(randoms.data.sensitive_codes() != own, axis=1))


def test_random_synthetic_shapes(train_ds):
    data = random_synthetic(train_ds, 50, np.random.default_rng(0))
    assert data.n_rows == 50
    assert data.width == train_ds.width
    data.check_invariants()
    assert set(np.unique(data.y)) <= {0, 1}


def test_run_regime(train_ds):
    trainer = FairTrainer(train_ds, CFG)
    antidote = _antidote(train_ds).truncate(24, np.random.default_rng(0))

    result = trainer.run_regime(RegimeConfig('anti', 'logreg'), seed=0, antidote=antidote)
    assert result.antidote_rows == 24
    assert result.model.metadata['antidote_percentage'] == pytest.approx(10.0)

    result = trainer.run_regime(RegimeConfig('random-comparable', 'logreg', random_percentage=50.0), seed=0,
                                rng=np.random.default_rng(0))
    assert result.antidote_rows == 120

    result = trainer.run_regime(RegimeConfig('random-data', 'logreg'), seed=0, rng=np.random.default_rng(0))
    assert result.antidote_rows == train_ds.n_rows

    result = trainer.run_regime(RegimeConfig('anti-only', 'logreg'), seed=0, antidote=antidote)
    assert result.train_rows == train_ds.n_rows

    with pytest.raises(ConfigError):
        trainer.run_regime(RegimeConfig('anti', 'logreg'), seed=0)

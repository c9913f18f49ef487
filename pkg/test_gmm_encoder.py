"""
高斯混合编码测试
"""

import numpy as np
import pytest

from modules.errors import ContractViolationError
from modules.gmm_encoder import (STD_FLOOR, ColumnGMM, GMMEncoder, ModeCode, decode_continuous,
                                 encode_continuous, encode_continuous_batch, decode_continuous_batch,
                                 fit_gmm, mode_probs, rerepresent)


def _two_clusters(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.normal(0.2, 0.02, n // 2), rng.normal(0.8, 0.02, n // 2)])


def test_fit_recovers_two_modes():
    gmm = fit_gmm(_two_clusters(), max_modes=4, seed=0)
    gmm.validate(max_modes=4)
    assert np.all(np.diff(gmm.means) >= 0)

    heavy = gmm.weights > 0.05
    for mean in gmm.means[heavy]:
        assert min(abs(mean - 0.2), abs(mean - 0.8)) < 0.05
    near_low = gmm.weights[np.abs(gmm.means - 0.2) < 0.1].sum()
    near_high = gmm.weights[np.abs(gmm.means - 0.8) < 0.1].sum()
    assert abs(near_low - 0.5) < 0.05
    assert abs(near_high - 0.5) < 0.05


def test_fit_empty_column():
    with pytest.raises(ContractViolationError):
        fit_gmm(np.zeros(0))


def test_constant_column_single_mode():
    gmm = fit_gmm(np.full(50, 0.3))
    assert gmm.n_modes == 1
    assert gmm.stds[0] == STD_FLOOR
    code = encode_continuous(0.3, gmm, deterministic=True)
    assert code.v == 0.0
    assert decode_continuous(code, gmm) == pytest.approx(0.3)


def test_deterministic_round_trip():
    gmm = fit_gmm(_two_clusters(seed=1), max_modes=4, seed=1)
    values = np.random.default_rng(2).uniform(0.0, 1.0, 10000)
    v, modes = encode_continuous_batch(values, gmm, deterministic=True)
    inside = np.abs(v) < 1.0
    assert inside.any()
    restored = decode_continuous_batch(v, modes, gmm)
    assert np.max(np.abs(restored[inside] - values[inside])) < 1e-9
    assert np.all((restored >= 0.0) & (restored <= 1.0))


def test_sampled_modes_are_valid():
    gmm = fit_gmm(_two_clusters(seed=3), max_modes=4, seed=3)
    v, modes = encode_continuous_batch(_two_clusters(200, seed=4), gmm, rng=np.random.default_rng(0))
    assert np.all((modes >= 0) & (modes < gmm.n_modes))
    assert np.all(np.abs(v) <= 1.0)


def test_decode_rejects_bad_indicator():
    gmm = ColumnGMM(column=0, weights=[0.5, 0.5], means=[0.2, 0.8], stds=[0.05, 0.05])
    with pytest.raises(ContractViolationError):
        decode_continuous(ModeCode(v=0.0, e=np.array([0.5, 0.5])), gmm)
    with pytest.raises(ContractViolationError):
        decode_continuous(ModeCode(v=0.0, e=np.array([1.0, 1.0])), gmm)


def test_mode_probs_sum_to_one():
    gmm = ColumnGMM(column=0, weights=[0.3, 0.7], means=[0.2, 0.8], stds=[0.05, 0.1])
    for value in (0.0, 0.2, 0.5, 1.0):
        assert mode_probs(value, gmm).sum() == pytest.approx(1.0)


def test_mode_probs_underflow_is_uniform():
    gmm = ColumnGMM(column=0, weights=[0.5, 0.5], means=[0.2, 0.8], stds=[1e-4, 1e-4])
    probs = mode_probs(1e6, gmm)
    assert np.allclose(probs, [0.5, 0.5])


def test_rerepresent_layout(train_ds):
    encoder = GMMEncoder(max_modes=3, seed=0).fit(train_ds)
    row = train_ds.row(0)
    rep = rerepresent(row, encoder.gmms, deterministic=True,
                      discrete_widths=[3, 3], sensitive_widths=[3])
    assert rep.width == encoder.width
    assert rep.width == sum(1 + g.n_modes for g in encoder.gmms) + 6 + 3
    assert np.allclose(rep.vector, encoder.transform(train_ds.subset([0]), deterministic=True)[0])


def test_encoder_inverse(train_ds):
    encoder = GMMEncoder(max_modes=3, seed=0).fit(train_ds)
    matrix = encoder.transform(train_ds, deterministic=True)
    assert matrix.shape == (train_ds.n_rows, encoder.width)
    assert encoder.sensitive_start == encoder.width - 3

    decoded = encoder.inverse_transform(matrix, y=train_ds.y)
    decoded.check_invariants()
    assert np.array_equal(decoded.D, train_ds.D)
    assert np.array_equal(decoded.S, train_ds.S)
    close = np.all(np.abs(decoded.C - train_ds.C) < 1e-6, axis=1)
    assert close.mean() > 0.9


def test_encoder_state_dict(train_ds):
    encoder = GMMEncoder(max_modes=3, seed=0).fit(train_ds)
    restored = GMMEncoder.from_state_dict(encoder.state_dict())
    assert restored.width == encoder.width
    assert [s.name for s in restored.spans] == [s.name for s in encoder.spans]
    assert np.array_equal(restored.transform(train_ds, deterministic=True),
                          encoder.transform(train_ds, deterministic=True))


def test_single_fit_lower_bound_never_decreases():
    gmm = fit_gmm(_two_clusters(seed=5), max_modes=6, seed=5)
    history = np.asarray(gmm.lower_bound_history)
    assert history.shape[0] >= 2
    assert np.all(np.diff(history) >= -1e-9 * np.maximum(1.0, np.abs(history[:-1])))
    assert gmm.n_modes <= 6


def test_mode_probs_far_apart_modes():
    gmm = ColumnGMM(column=0, weights=[0.5, 0.5], means=[0.2, 0.8], stds=[0.05, 0.05])
    assert mode_probs(0.2, gmm)[0] > 0.999
    assert np.allclose(mode_probs(0.5, gmm), [0.5, 0.5], rtol=0.0, atol=1e-9)


def test_sampled_mode_histogram_matches_mode_probs():
    gmm = ColumnGMM(column=0, weights=[0.3, 0.4, 0.3], means=[0.3, 0.45, 0.6], stds=[0.1, 0.1, 0.1])
    value = 0.4
    expected = mode_probs(value, gmm)
    _, modes = encode_continuous_batch(np.full(100000, value), gmm, rng=np.random.default_rng(7))
    observed = np.bincount(modes, minlength=gmm.n_modes) / modes.shape[0]
    assert 0.5 * np.abs(observed - expected).sum() < 0.01

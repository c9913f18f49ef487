"""
测试公用夹具：小规模合成数据集与实验配置
"""

import json
import os

import numpy as np
import pandas as pd
import pytest

from modules.data_processor import (DataProcessor, EncodedDataset, FeatureSchema, _slices_from_widths,
                                    codes_to_onehot, load_dataset)

ADULT_SCHEMA = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data', 'adult.schema.json')


def make_schema() -> FeatureSchema:
    return FeatureSchema(
        sensitive=[('group', ['a', 'b', 'c'])],
        discrete=[('color', ['red', 'green', 'blue']), ('size', ['s', 'm', 'l'])],
        continuous=[('x', 0.0, 10.0), ('w', 0.0, 1.0)],
        label=('y', 'yes'),
    )


def make_frame(n: int, seed: int) -> pd.DataFrame:
    """连续值取在粗网格上，保证存在足够的可比较样本对"""
    rng = np.random.default_rng(seed)
    return pd.DataFrame({
        'x': rng.integers(0, 11, size=n).astype(float),
        'w': rng.integers(0, 5, size=n) / 4.0,
        'color': rng.choice(['red', 'green', 'blue'], size=n),
        'size': rng.choice(['s', 'm', 'l'], size=n),
        'group': rng.choice(['a', 'b', 'c'], size=n),
        'y': rng.choice(['yes', 'no'], size=n),
    })


def random_encoded(rng: np.random.Generator, n: int, d_widths=(3, 2, 4), s_widths=(2, 3),
                   n_c: int = 2, grid: int = 8, split: str = 'train') -> EncodedDataset:
    """直接构造编码数据集（连续值 = 粗网格 + 小扰动）"""
    d_codes = np.column_stack([rng.integers(0, w, size=n) for w in d_widths]) if d_widths else None
    s_codes = np.column_stack([rng.integers(0, w, size=n) for w in s_widths])
    C = rng.integers(0, grid, size=(n, n_c)) / (grid - 1) + rng.uniform(-0.02, 0.02, size=(n, n_c))
    return EncodedDataset(
        C=np.clip(C, 0.0, 1.0),
        D=codes_to_onehot(d_codes, list(d_widths)) if d_widths else np.zeros((n, 0)),
        S=codes_to_onehot(s_codes, list(s_widths)),
        y=rng.integers(0, 2, size=n),
        split=split,
        discrete_slices=_slices_from_widths(list(d_widths)),
        sensitive_slices=_slices_from_widths(list(s_widths)),
    )


@pytest.fixture
def schema() -> FeatureSchema:
    return make_schema()


@pytest.fixture
def train_csv(tmp_path) -> str:
    path = tmp_path / 'train.csv'
    make_frame(240, seed=1).to_csv(path, index=False)
    return str(path)


@pytest.fixture
def test_csv(tmp_path) -> str:
    path = tmp_path / 'test.csv'
    make_frame(120, seed=2).to_csv(path, index=False)
    return str(path)


@pytest.fixture
def processor(schema, train_csv) -> DataProcessor:
    return DataProcessor(schema).fit(load_dataset(train_csv, schema))


@pytest.fixture
def train_ds(schema, train_csv, processor) -> EncodedDataset:
    return processor.encode(load_dataset(train_csv, schema), split='train')


@pytest.fixture
def test_ds(schema, test_csv, processor) -> EncodedDataset:
    return processor.encode(load_dataset(test_csv, schema), split='test')


@pytest.fixture
def experiment_file(tmp_path, schema, train_csv, test_csv) -> str:
    """最小规模的实验配置文件"""
    schema_path = tmp_path / 'schema.json'
    schema_path.write_text(json.dumps(schema.to_dict()), encoding='utf-8')
    config = {
        'config_version': 1,
        'schema': 'schema.json',
        'train_path': train_csv,
        'test_path': test_csv,
        'comparability': {'t_d': 1, 't_c': 0.025},
        'gan': {'batch_size': 64, 'epochs': 2, 'noise_dim': 4, 'hidden_dim': 16, 'monitor_size': 64},
        'regimes': [
            {'regime': 'base', 'classifier': 'logreg'},
            {'regime': 'anti', 'classifier': 'logreg'},
            {'regime': 'base', 'classifier': 'nn', 'nn': {'hidden': [8, 8], 'iterations': 40, 'batch_size': 32}},
            {'regime': 'antidro', 'classifier': 'nn', 'nn': {'hidden': [8, 8], 'iterations': 40, 'batch_size': 32}},
        ],
        'antidote_percentage': 20.0,
        'tradeoff_percentages': [0.0, 20.0],
        'tradeoff_regimes': ['logreg:anti'],
        'seeds': [0, 1],
        'root_seed': 7,
        'output_dir': 'out',
        'max_sampling_iterations': 3,
        'gmm_max_modes': 3,
    }
    path = tmp_path / 'experiment.json'
    path.write_text(json.dumps(config), encoding='utf-8')
    return str(path)

"""
数据处理模块
负责字段定义、CSV读取、编码与缩放，生成三类互斥特征块（敏感/离散/连续）和标签
"""

import io
import itertools
import json
import logging
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.preprocessing import MinMaxScaler, OneHotEncoder, StandardScaler

from .errors import ConfigError, SchemaMismatchError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# 编码数据集二进制格式
ENCODED_MAGIC = b'FENC'
ENCODED_VERSION = 1
_SPLIT_CODES = {'train': 0, 'test': 1, 'antidote': 2, 'synthetic': 3}


@dataclass
class FeatureSchema:
    """数据集字段定义"""

    sensitive: List[Tuple[str, List[str]]]
    discrete: List[Tuple[str, List[str]]]
    continuous: List[Tuple[str, float, float]]
    label: Tuple[str, str]
    file_columns: Optional[List[str]] = None
    na_values: List[str] = field(default_factory=lambda: ['?', ''])
    label_negative: Optional[str] = None

    def __post_init__(self):
        self.sensitive = [(str(n), [str(v) for v in vals]) for n, vals in self.sensitive]
        self.discrete = [(str(n), [str(v) for v in vals]) for n, vals in self.discrete]
        self.continuous = [(str(n), float(lo), float(hi)) for n, lo, hi in self.continuous]
        self.label = (str(self.label[0]), str(self.label[1]))
        if self.label_negative is not None:
            self.label_negative = str(self.label_negative)
        self.validate()

    def validate(self):
        """
        校验字段定义

        Raises:
            ConfigError: 名称重复、取值为空、缺少敏感字段或区间非法
        """
        if not self.sensitive:
            raise ConfigError("字段定义至少需要一个敏感字段")

        names = self.sensitive_names + self.discrete_names + self.continuous_names
        duplicated = sorted({n for n in names if names.count(n) > 1})
        if duplicated:
            raise ConfigError(f"字段名称重复: {', '.join(duplicated)}")
        if self.label[0] in names:
            raise ConfigError(f"标签字段与特征字段重名: {self.label[0]}")
        if self.label_negative == self.label[1]:
            raise ConfigError(f"标签的正类与负类取值相同: {self.label[1]}")

        for name, values in self.sensitive + self.discrete:
            if not values:
                raise ConfigError(f"字段 {name} 的取值集合为空")
            if len(set(values)) != len(values):
                raise ConfigError(f"字段 {name} 的取值集合有重复")

        for name, lo, hi in self.continuous:
            if not lo < hi:
                raise ConfigError(f"连续字段 {name} 的区间不合法: [{lo}, {hi}]")

    # ---- 派生属性 ----

    @property
    def sensitive_names(self) -> List[str]:
        return [n for n, _ in self.sensitive]

    @property
    def discrete_names(self) -> List[str]:
        return [n for n, _ in self.discrete]

    @property
    def continuous_names(self) -> List[str]:
        return [n for n, _, _ in self.continuous]

    @property
    def columns(self) -> List[str]:
        """数据文件中必须出现的全部列"""
        return self.continuous_names + self.discrete_names + self.sensitive_names + [self.label[0]]

    @property
    def sensitive_widths(self) -> List[int]:
        return [len(v) for _, v in self.sensitive]

    @property
    def discrete_widths(self) -> List[int]:
        return [len(v) for _, v in self.discrete]

    @property
    def encoded_width(self) -> int:
        """编码后的总维度 N_c + Σ|d_i| + Σ|s_i|"""
        return len(self.continuous) + sum(self.discrete_widths) + sum(self.sensitive_widths)

    def sensitive_combinations(self) -> List[Tuple[int, ...]]:
        """敏感字段取值的笛卡尔积（按取值下标）"""
        return list(itertools.product(*[range(w) for w in self.sensitive_widths]))

    # ---- 读写 ----

    @classmethod
    def from_dict(cls, data: Dict) -> 'FeatureSchema':
        version = data.get('schema_version')
        if version != SCHEMA_VERSION:
            raise ConfigError(f"不支持的字段定义版本: {version}（期望 {SCHEMA_VERSION}）")
        try:
            return cls(
                sensitive=[(item['name'], item['values']) for item in data['sensitive']],
                discrete=[(item['name'], item['values']) for item in data.get('discrete', [])],
                continuous=[(item['name'], item['min'], item['max'])
                            for item in data.get('continuous', [])],
                label=(data['label']['name'], data['label']['positive']),
                file_columns=data.get('file_columns'),
                na_values=data.get('na_values', ['?', '']),
                label_negative=data['label'].get('negative'),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"字段定义缺少必要项: {e}") from e

    @classmethod
    def from_json(cls, path: str) -> 'FeatureSchema':
        if not os.path.exists(path):
            raise ConfigError(f"字段定义文件不存在: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"字段定义文件解析失败: {path}: {e}") from e
        return cls.from_dict(data)

    def to_dict(self) -> Dict:
        data = {
            'schema_version': SCHEMA_VERSION,
            'sensitive': [{'name': n, 'values': v} for n, v in self.sensitive],
            'discrete': [{'name': n, 'values': v} for n, v in self.discrete],
            'continuous': [{'name': n, 'min': lo, 'max': hi} for n, lo, hi in self.continuous],
            'label': {'name': self.label[0], 'positive': self.label[1]},
            'na_values': list(self.na_values),
        }
        if self.label_negative is not None:
            data['label']['negative'] = self.label_negative
        if self.file_columns:
            data['file_columns'] = list(self.file_columns)
        return data


@dataclass
class RawTable:
    """读取并清洗后的原始表格"""

    frame: pd.DataFrame
    dropped: Dict[str, int] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return len(self.frame)


@dataclass
class EncodedRow:
    """单行编码数据（[0,1] 视图）"""

    c: np.ndarray
    d_codes: np.ndarray
    s_codes: np.ndarray
    y: int


@dataclass
class EncodedDataset:
    """
    编码后的数据集（可比较性/生成视图）

    C 为 [0,1] 区间的连续块，D、S 为 one-hot 块，y 为 0/1 标签。
    """

    C: np.ndarray
    D: np.ndarray
    S: np.ndarray
    y: np.ndarray
    split: str
    discrete_slices: List[Tuple[int, int]]
    sensitive_slices: List[Tuple[int, int]]

    @property
    def n_rows(self) -> int:
        return int(self.y.shape[0])

    @property
    def width(self) -> int:
        return self.C.shape[1] + self.D.shape[1] + self.S.shape[1]

    def matrix(self) -> np.ndarray:
        """拼接 C ⊕ D ⊕ S"""
        return np.hstack([self.C, self.D, self.S])

    def discrete_codes(self) -> np.ndarray:
        return _slice_codes(self.D, self.discrete_slices)

    def sensitive_codes(self) -> np.ndarray:
        return _slice_codes(self.S, self.sensitive_slices)

    def row(self, i: int) -> EncodedRow:
        return EncodedRow(
            c=self.C[i],
            d_codes=_slice_codes(self.D[i:i + 1], self.discrete_slices)[0],
            s_codes=_slice_codes(self.S[i:i + 1], self.sensitive_slices)[0],
            y=int(self.y[i]),
        )

    def subset(self, index: np.ndarray) -> 'EncodedDataset':
        index = np.asarray(index, dtype=np.int64)
        return replace(self, C=self.C[index], D=self.D[index], S=self.S[index], y=self.y[index])

    def concat(self, other: 'EncodedDataset', split: Optional[str] = None) -> 'EncodedDataset':
        """按行拼接两个布局相同的数据集"""
        if (self.C.shape[1], self.D.shape[1], self.S.shape[1]) != \
                (other.C.shape[1], other.D.shape[1], other.S.shape[1]):
            raise SchemaMismatchError("拼接的数据集特征布局不一致")
        return replace(
            self,
            C=np.vstack([self.C, other.C]),
            D=np.vstack([self.D, other.D]),
            S=np.vstack([self.S, other.S]),
            y=np.concatenate([self.y, other.y]),
            split=split or self.split,
        )

    def check_invariants(self):
        """校验 one-hot 与 [0,1] 约束，违反时抛出 AssertionError"""
        n = self.n_rows
        assert self.C.shape[0] == self.D.shape[0] == self.S.shape[0] == n
        assert np.all((self.C >= 0.0) & (self.C <= 1.0)), "连续特征超出 [0,1]"
        for block, slices in ((self.D, self.discrete_slices), (self.S, self.sensitive_slices)):
            assert np.all((block == 0.0) | (block == 1.0)), "one-hot 块存在非 0/1 取值"
            for start, end in slices:
                assert np.all(block[:, start:end].sum(axis=1) == 1.0), "one-hot 切片之和不为 1"


def _slices_from_widths(widths: List[int]) -> List[Tuple[int, int]]:
    slices = []
    start = 0
    for w in widths:
        slices.append((start, start + w))
        start += w
    return slices


def _slice_codes(block: np.ndarray, slices: List[Tuple[int, int]]) -> np.ndarray:
    if not slices:
        return np.zeros((block.shape[0], 0), dtype=np.int64)
    return np.stack([block[:, s:e].argmax(axis=1) for s, e in slices], axis=1).astype(np.int64)


def codes_to_onehot(codes: np.ndarray, widths: List[int]) -> np.ndarray:
    """类别下标矩阵转 one-hot 块"""
    codes = np.asarray(codes, dtype=np.int64).reshape(-1, len(widths))
    block = np.zeros((codes.shape[0], sum(widths)))
    offset = 0
    for k, w in enumerate(widths):
        block[np.arange(codes.shape[0]), offset + codes[:, k]] = 1.0
        offset += w
    return block


# ========== 数据读取 ==========

def load_dataset(path: str, schema: FeatureSchema) -> RawTable:
    """
    读取分隔符文本文件（CSV/TSV）

    Args:
        path: 文件路径
        schema: 字段定义

    Returns:
        RawTable: 只包含字段定义中列的表格，缺失/无法解析/未知类别的行已删除

    Raises:
        ConfigError: 文件不存在
        SchemaMismatchError: 缺少字段定义中的列
    """
    if not os.path.exists(path):
        raise ConfigError(f"数据文件不存在: {path}")

    sep = '\t' if path.lower().endswith(('.tsv', '.tab')) else ','
    read_kwargs = dict(
        sep=sep,
        skipinitialspace=True,
        na_values=schema.na_values,
        keep_default_na=False,
        dtype=str,
        skiprows=_leading_note_lines(path),
    )
    try:
        if schema.file_columns:
            frame = pd.read_csv(path, header=None, names=schema.file_columns, **read_kwargs)
        else:
            frame = pd.read_csv(path, **read_kwargs)
    except pd.errors.EmptyDataError:
        logger.warning(f"⚠ 数据文件为空: {path}")
        frame = pd.DataFrame(columns=schema.file_columns or schema.columns, dtype=str)
    frame.columns = [str(c).strip() for c in frame.columns]

    missing = [c for c in schema.columns if c not in frame.columns]
    if missing:
        raise SchemaMismatchError(f"数据文件 {path} 缺少字段: {', '.join(missing)}")

    frame = frame[schema.columns].copy()
    for col in schema.discrete_names + schema.sensitive_names + [schema.label[0]]:
        frame[col] = frame[col].str.strip()

    return _clean_frame(frame, schema, source=path)


def _leading_note_lines(path: str) -> int:
    """文件开头以 '|' 开始的说明行数（如 adult.test 的首行）"""
    count = 0
    with open(path, 'r', encoding='utf-8', errors='replace') as f:
        for line in f:
            if not line.startswith('|'):
                break
            count += 1
    return count


def normalize_label(values: pd.Series) -> pd.Series:
    """去掉首尾空白和结尾的句点（adult.test 的标签写作 '>50K.'）"""
    return values.astype(str).str.strip().str.rstrip('.')


def _clean_frame(frame: pd.DataFrame, schema: FeatureSchema, source: str = '') -> RawTable:
    """删除缺失、数值无法解析、类别未知、标签未知的行，并分别计数"""
    dropped = {}

    missing_mask = frame.isna().any(axis=1)
    dropped['missing'] = int(missing_mask.sum())
    frame = frame[~missing_mask]

    bad_numeric = pd.Series(False, index=frame.index)
    parsed = {}
    for col in schema.continuous_names:
        parsed[col] = pd.to_numeric(frame[col], errors='coerce')
        bad_numeric |= parsed[col].isna()
    frame = frame.assign(**parsed)
    dropped['unparseable'] = int(bad_numeric.sum())
    frame = frame[~bad_numeric]

    unknown = pd.Series(False, index=frame.index)
    for name, values in schema.discrete + schema.sensitive:
        unknown |= ~frame[name].isin(values)
    dropped['unknown_category'] = int(unknown.sum())
    frame = frame[~unknown]

    labels = normalize_label(frame[schema.label[0]])
    if schema.label_negative is not None:
        bad_label = ~labels.isin([schema.label[1], schema.label_negative])
    else:
        bad_label = pd.Series(False, index=frame.index)
        others = sorted(set(labels[labels != schema.label[1]]))
        if len(others) > 1:
            logger.warning(f"⚠ {source} 标签字段 {schema.label[0]} 有多个非正类取值 {others}，全部按负类处理")
    dropped['unknown_label'] = int(bad_label.sum())
    frame = frame[~bad_label].reset_index(drop=True)

    frame = frame.assign(**{col: frame[col].astype(float) for col in schema.continuous_names})

    total = sum(dropped.values())
    if total:
        logger.warning(f"⚠ {source} 删除 {total} 行（缺失 {dropped['missing']}，"
                       f"数值无法解析 {dropped['unparseable']}，未知类别 {dropped['unknown_category']}，"
                       f"未知标签 {dropped['unknown_label']}）")
    logger.info(f"✓ 已读取 {source}: {len(frame)} 行")
    return RawTable(frame=frame, dropped=dropped)


# ========== 编码 ==========

class DataProcessor:
    """表格数据编码器（缩放统计量只在训练集上计算）"""

    def __init__(self, schema: FeatureSchema):
        """
        初始化编码器

        Args:
            schema: 字段定义
        """
        self.schema = schema
        self.scaler = None
        self.discrete_encoder = self._build_onehot(schema.discrete)
        self.sensitive_encoder = self._build_onehot(schema.sensitive)
        self.constant_columns: List[str] = []

    @staticmethod
    def _build_onehot(features: List[Tuple[str, List[str]]]) -> Optional[OneHotEncoder]:
        if not features:
            return None
        encoder = OneHotEncoder(
            categories=[values for _, values in features],
            handle_unknown='error',
            sparse_output=False,
            dtype=np.float64,
        )
        # 类别已固定，用一行模板完成拟合
        template = pd.DataFrame([[values[0] for _, values in features]],
                                columns=[name for name, _ in features])
        encoder.fit(template)
        return encoder

    @property
    def is_fitted(self) -> bool:
        return self.scaler is not None or not self.schema.continuous

    def fit(self, train: RawTable) -> 'DataProcessor':
        """
        在训练集上计算连续字段的最小/最大值

        Args:
            train: 训练集原始表格

        Returns:
            DataProcessor: self
        """
        names = self.schema.continuous_names
        if not names:
            return self

        self.scaler = MinMaxScaler(clip=True)
        if train.n_rows == 0:
            logger.warning("⚠ 训练集为空，使用字段定义中的区间进行缩放")
            bounds = np.array([[lo for _, lo, _ in self.schema.continuous],
                               [hi for _, _, hi in self.schema.continuous]])
            self.scaler.fit(pd.DataFrame(bounds, columns=names))
        else:
            self.scaler.fit(train.frame[names])

        span = self.scaler.data_max_ - self.scaler.data_min_
        self.constant_columns = [n for n, s in zip(names, span) if s == 0]
        for name in self.constant_columns:
            logger.warning(f"⚠ 连续字段 {name} 在训练集中为常数，编码为全 0")
        return self

    def encode(self, raw: RawTable, split: str = 'train') -> EncodedDataset:
        """
        编码原始表格

        Args:
            raw: 原始表格
            split: 数据来源标记（train/test/...）

        Returns:
            EncodedDataset: [0,1] 连续块 + one-hot 离散块/敏感块 + 标签
        """
        if not self.is_fitted:
            self.fit(raw)

        frame = raw.frame
        n = len(frame)
        schema = self.schema

        if schema.continuous and n:
            C = self.scaler.transform(frame[schema.continuous_names])
            C[:, [schema.continuous_names.index(c) for c in self.constant_columns]] = 0.0
        else:
            C = np.zeros((n, len(schema.continuous)))

        D = self._onehot(self.discrete_encoder, frame, schema.discrete, n)
        S = self._onehot(self.sensitive_encoder, frame, schema.sensitive, n)
        y = (normalize_label(frame[schema.label[0]]) == schema.label[1]).to_numpy(dtype=np.int64)

        return EncodedDataset(
            C=np.asarray(C, dtype=np.float64),
            D=D,
            S=S,
            y=y,
            split=split,
            discrete_slices=_slices_from_widths(schema.discrete_widths),
            sensitive_slices=_slices_from_widths(schema.sensitive_widths),
        )

    @staticmethod
    def _onehot(encoder, frame, features, n) -> np.ndarray:
        width = sum(len(v) for _, v in features)
        if encoder is None or n == 0:
            return np.zeros((n, width))
        return encoder.transform(frame[[name for name, _ in features]])

    def decode_frame(self, dataset: EncodedDataset) -> pd.DataFrame:
        """
        编码数据转回可读表格（类别为字符串，连续字段保持 [0,1] 缩放值）

        Args:
            dataset: 编码数据集

        Returns:
            pd.DataFrame: 按字段定义列名组织的表格
        """
        schema = self.schema
        data = {}
        for k, name in enumerate(schema.continuous_names):
            data[name] = dataset.C[:, k]
        for (name, values), codes in zip(schema.discrete, dataset.discrete_codes().T):
            data[name] = np.asarray(values, dtype=object)[codes]
        if dataset.sensitive_slices:
            for (name, values), codes in zip(schema.sensitive, dataset.sensitive_codes().T):
                data[name] = np.asarray(values, dtype=object)[codes]
        data[schema.label[0]] = dataset.y
        return pd.DataFrame(data, columns=list(data.keys()))

    def encode_scaled_frame(self, frame: pd.DataFrame, split: str) -> EncodedDataset:
        """decode_frame 的逆操作：读取已缩放的表格"""
        schema = self.schema
        missing = [c for c in schema.columns if c not in frame.columns]
        if missing:
            raise SchemaMismatchError(f"表格缺少字段: {', '.join(missing)}")
        n = len(frame)
        C = frame[schema.continuous_names].to_numpy(dtype=np.float64).reshape(n, -1)
        D = self._onehot(self.discrete_encoder, frame.astype({c: str for c in schema.discrete_names}),
                         schema.discrete, n)
        S = self._onehot(self.sensitive_encoder, frame.astype({c: str for c in schema.sensitive_names}),
                         schema.sensitive, n)
        return EncodedDataset(
            C=np.clip(C, 0.0, 1.0),
            D=D,
            S=S,
            y=frame[schema.label[0]].to_numpy(dtype=np.int64),
            split=split,
            discrete_slices=_slices_from_widths(schema.discrete_widths),
            sensitive_slices=_slices_from_widths(schema.sensitive_widths),
        )

    def state_dict(self) -> Dict:
        if self.scaler is None:
            return {}
        return {
            'data_min': self.scaler.data_min_.tolist(),
            'data_max': self.scaler.data_max_.tolist(),
        }

    def load_state_dict(self, state: Dict) -> 'DataProcessor':
        if not state:
            return self
        bounds = np.array([state['data_min'], state['data_max']])
        self.scaler = MinMaxScaler(clip=True)
        self.scaler.fit(pd.DataFrame(bounds, columns=self.schema.continuous_names))
        span = self.scaler.data_max_ - self.scaler.data_min_
        self.constant_columns = [n for n, s in zip(self.schema.continuous_names, span) if s == 0]
        return self


def encode(raw: RawTable, schema: FeatureSchema,
           processor: Optional[DataProcessor] = None, split: str = 'train') -> EncodedDataset:
    """
    编码原始表格；未提供已拟合的编码器时把 raw 当作训练集拟合

    Args:
        raw: 原始表格
        schema: 字段定义
        processor: 已在训练集上拟合的编码器
        split: 数据来源标记

    Returns:
        EncodedDataset: 编码结果
    """
    if processor is None:
        processor = DataProcessor(schema).fit(raw)
    return processor.encode(raw, split=split)


def drop_sensitive(dataset: EncodedDataset) -> EncodedDataset:
    """丢弃敏感特征块，其余块保持不变"""
    return replace(dataset, S=np.zeros((dataset.n_rows, 0)), sensitive_slices=[])


class Standardizer:
    """分类器视图：用训练集均值/方差标准化全部列"""

    def __init__(self):
        self.scaler = StandardScaler()

    def fit(self, train: EncodedDataset) -> 'Standardizer':
        self.scaler.fit(train.matrix())
        return self

    def transform(self, dataset: EncodedDataset) -> np.ndarray:
        if dataset.n_rows == 0:
            return np.zeros((0, dataset.width))
        return self.scaler.transform(dataset.matrix())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {'mean': self.scaler.mean_, 'scale': self.scaler.scale_}

    @classmethod
    def from_state_dict(cls, state: Dict[str, np.ndarray]) -> 'Standardizer':
        standardizer = cls()
        scaler = standardizer.scaler
        scaler.mean_ = np.asarray(state['mean'], dtype=np.float64)
        scaler.scale_ = np.asarray(state['scale'], dtype=np.float64)
        scaler.var_ = scaler.scale_ ** 2
        scaler.n_features_in_ = scaler.mean_.shape[0]
        scaler.n_samples_seen_ = 1
        return standardizer


# ========== 二进制格式 ==========
#
# 小端字节序：
#   magic 'FENC' | u16 版本 | u8 数据来源 | u8 保留
#   u64 行数 | u32 N_c | u32 离散切片数 | u32 敏感切片数
#   u32[离散切片数] 各离散字段宽度 | u32[敏感切片数] 各敏感字段宽度
#   f64[行数 × N_c] C | u8[行数 × ΣD] D | u8[行数 × ΣS] S | u8[行数] y

_HEADER = struct.Struct('<4sHBBQIII')


def save_encoded(dataset: EncodedDataset, path: str):
    """把编码数据集写入二进制文件"""
    d_widths = [e - s for s, e in dataset.discrete_slices]
    s_widths = [e - s for s, e in dataset.sensitive_slices]
    buf = io.BytesIO()
    buf.write(_HEADER.pack(ENCODED_MAGIC, ENCODED_VERSION, _SPLIT_CODES.get(dataset.split, 255), 0,
                           dataset.n_rows, dataset.C.shape[1], len(d_widths), len(s_widths)))
    buf.write(np.asarray(d_widths + s_widths, dtype='<u4').tobytes())
    buf.write(np.ascontiguousarray(dataset.C, dtype='<f8').tobytes())
    buf.write(np.ascontiguousarray(dataset.D, dtype='u1').tobytes())
    buf.write(np.ascontiguousarray(dataset.S, dtype='u1').tobytes())
    buf.write(np.ascontiguousarray(dataset.y, dtype='u1').tobytes())

    from .export_generator import atomic_write_bytes
    atomic_write_bytes(path, buf.getvalue())


def load_encoded(path: str) -> EncodedDataset:
    """读取 save_encoded 写出的文件"""
    from .errors import BundleFormatError

    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise BundleFormatError(f"文件过短: {path}")
    magic, version, split_code, _, n, n_c, n_dslices, n_sslices = _HEADER.unpack_from(raw, 0)
    if magic != ENCODED_MAGIC:
        raise BundleFormatError(f"魔数错误: {magic!r}")
    if version != ENCODED_VERSION:
        raise BundleFormatError(f"不支持的版本: {version}")

    offset = _HEADER.size
    widths = np.frombuffer(raw, dtype='<u4', count=n_dslices + n_sslices, offset=offset).tolist()
    offset += 4 * (n_dslices + n_sslices)
    d_widths, s_widths = widths[:n_dslices], widths[n_dslices:]
    n_d, n_s = sum(d_widths), sum(s_widths)

    def take(dtype, count):
        nonlocal offset
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr

    C = take('<f8', n * n_c).reshape(n, n_c).astype(np.float64)
    D = take('u1', n * n_d).reshape(n, n_d).astype(np.float64)
    S = take('u1', n * n_s).reshape(n, n_s).astype(np.float64)
    y = take('u1', n).astype(np.int64)
    split = {v: k for k, v in _SPLIT_CODES.items()}.get(split_code, 'unknown')
    return EncodedDataset(C=C, D=D, S=S, y=y, split=split,
                          discrete_slices=_slices_from_widths(d_widths),
                          sensitive_slices=_slices_from_widths(s_widths))

"""
可比较样本模块
可比较性判定、分块挖掘全部可比较样本对、敏感属性关系分类
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .data_processor import EncodedDataset, EncodedRow
from .errors import ConfigError

logger = logging.getLogger(__name__)

ALL_DIFFER = 'all-differ'
SOME_DIFFER = 'some-differ'
NONE_DIFFER = 'none-differ'
RELATIONS = [ALL_DIFFER, SOME_DIFFER, NONE_DIFFER]

# 分块组合数超过该值时退化为只按标签分块
MAX_BLOCKING_SUBSETS = 64
# 排序窗口的浮点余量，最终判定仍为精确比较
WINDOW_EPS = 1e-9


@dataclass(frozen=True)
class ComparabilityConfig:
    """可比较性阈值：最多 t_d 个离散特征不同，每个连续特征差值不超过 t_c"""

    t_d: int = 1
    t_c: float = 0.025

    def __post_init__(self):
        if isinstance(self.t_d, bool) or int(self.t_d) != self.t_d or self.t_d < 0:
            raise ConfigError(f"T_d 必须是非负整数: {self.t_d}")
        if not 0.0 <= float(self.t_c) <= 1.0:
            raise ConfigError(f"T_c 必须位于 [0, 1]: {self.t_c}")

    def validate_for(self, n_discrete: int):
        if self.t_d > n_discrete:
            raise ConfigError(f"T_d={self.t_d} 超过离散特征数 {n_discrete}")

    def to_dict(self) -> Dict:
        return {'t_d': int(self.t_d), 't_c': float(self.t_c)}


@dataclass(frozen=True)
class ComparablePair:
    i: int
    j: int
    label: int
    relation: str


class PairSet:
    """可比较样本对集合，按 (i, j) 升序存储"""

    def __init__(self, i: np.ndarray, j: np.ndarray, label: np.ndarray, relation: np.ndarray):
        self.i = np.asarray(i, dtype=np.int64)
        self.j = np.asarray(j, dtype=np.int64)
        self.label = np.asarray(label, dtype=np.int64)
        self.relation = np.asarray(relation, dtype=object)

    @classmethod
    def empty(cls) -> 'PairSet':
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=object))

    def __len__(self) -> int:
        return int(self.i.shape[0])

    def __iter__(self) -> Iterator[ComparablePair]:
        for i, j, y, r in zip(self.i, self.j, self.label, self.relation):
            yield ComparablePair(int(i), int(j), int(y), str(r))

    def as_set(self) -> set:
        return set(zip(self.i.tolist(), self.j.tolist()))

    def select(self, mask: np.ndarray) -> 'PairSet':
        mask = np.asarray(mask, dtype=bool)
        return PairSet(self.i[mask], self.j[mask], self.label[mask], self.relation[mask])

    def with_relation(self, relation: str) -> 'PairSet':
        return self.select(self.relation == relation)

    def sensitive_differing(self) -> 'PairSet':
        """只保留敏感属性至少一个不同的样本对"""
        return self.select(self.relation != NONE_DIFFER)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'i': self.i, 'j': self.j, 'label': self.label, 'relation': self.relation})

    def to_csv(self, path: str):
        from .export_generator import write_csv
        write_csv(self.to_frame(), path)


# ========== 判定 ==========

def is_comparable(a: EncodedRow, b: EncodedRow, cfg: ComparabilityConfig) -> bool:
    """
    判断两行是否可比较（敏感属性不受约束）

    Args:
        a: 第一行
        b: 第二行
        cfg: 阈值

    Returns:
        bool: 离散差异数 ≤ T_d、连续差值 ≤ T_c 且标签相同
    """
    if int(a.y) != int(b.y):
        return False
    if int(np.count_nonzero(np.asarray(a.d_codes) != np.asarray(b.d_codes))) > cfg.t_d:
        return False
    if len(a.c) and float(np.max(np.abs(np.asarray(a.c) - np.asarray(b.c)))) > cfg.t_c:
        return False
    return True


def comparable_mask(a: EncodedDataset, b: EncodedDataset, cfg: ComparabilityConfig,
                    a_index: Optional[np.ndarray] = None, b_index: Optional[np.ndarray] = None) -> np.ndarray:
    """
    逐行比较两组样本，返回可比较掩码

    Args:
        a, b: 数据集
        cfg: 阈值
        a_index, b_index: 参与比较的行下标（默认全部行，两者长度需一致）

    Returns:
        np.ndarray: 布尔数组
    """
    a_index = np.arange(a.n_rows) if a_index is None else np.asarray(a_index, dtype=np.int64)
    b_index = np.arange(b.n_rows) if b_index is None else np.asarray(b_index, dtype=np.int64)
    return _pair_check(a.C[a_index], b.C[b_index], a.discrete_codes()[a_index],
                       b.discrete_codes()[b_index], a.y[a_index], b.y[b_index], cfg)


def _pair_check(c_a, c_b, d_a, d_b, y_a, y_b, cfg: ComparabilityConfig) -> np.ndarray:
    mask = np.asarray(y_a) == np.asarray(y_b)
    if d_a.shape[1]:
        mask &= (d_a != d_b).sum(axis=1) <= cfg.t_d
    if c_a.shape[1]:
        mask &= np.max(np.abs(c_a - c_b), axis=1) <= cfg.t_c
    return mask


def _relation_from_codes(s_a: np.ndarray, s_b: np.ndarray) -> np.ndarray:
    n_s = s_a.shape[1]
    differ = (s_a != s_b).sum(axis=1)
    out = np.full(differ.shape[0], SOME_DIFFER, dtype=object)
    out[differ == 0] = NONE_DIFFER
    if n_s:
        out[differ == n_s] = ALL_DIFFER
    return out


def classify_relation(a: EncodedRow, b: EncodedRow, schema=None) -> str:
    """
    敏感属性关系：全部不同 / 部分不同 / 全部相同

    Args:
        a, b: 两行
        schema: 字段定义（仅用于校验敏感字段个数）

    Returns:
        str: all-differ / some-differ / none-differ
    """
    s_a = np.asarray(a.s_codes).reshape(1, -1)
    s_b = np.asarray(b.s_codes).reshape(1, -1)
    if schema is not None and s_a.shape[1] != len(schema.sensitive):
        raise ConfigError("样本的敏感字段个数与字段定义不一致")
    return str(_relation_from_codes(s_a, s_b)[0])


# ========== 挖掘 ==========

def _window_candidates(order: np.ndarray, key: np.ndarray, t_c: float) -> Tuple[np.ndarray, np.ndarray]:
    """块内按第一个连续特征排序，返回窗口内的候选对"""
    m = order.shape[0]
    sorted_key = key[order]
    hi = np.searchsorted(sorted_key, sorted_key + t_c + WINDOW_EPS, side='right')
    lengths = np.maximum(hi - np.arange(m) - 1, 0)
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    left = np.repeat(np.arange(m), lengths)
    starts = np.repeat(np.cumsum(lengths) - lengths, lengths)
    right = left + 1 + (np.arange(total) - starts)
    return order[left], order[right]


def _mine_subset(subset: Tuple[int, ...], d_codes: np.ndarray, C: np.ndarray, y: np.ndarray,
                 cfg: ComparabilityConfig) -> np.ndarray:
    """对一个"必须相同的离散特征子集"分块，返回通过精确判定的样本对编码 i*n+j"""
    n = y.shape[0]
    keys = np.column_stack([y] + [d_codes[:, k] for k in subset])
    _, block_id = np.unique(keys, axis=0, return_inverse=True)
    block_id = block_id.reshape(-1)
    sort_key = C[:, 0] if C.shape[1] else np.zeros(n)

    # 每个块内按 (块, 排序键) 的顺序排列
    order = np.lexsort((sort_key, block_id))
    boundaries = np.flatnonzero(np.diff(block_id[order])) + 1
    found = []
    for members in np.split(order, boundaries):
        if members.shape[0] < 2:
            continue
        if C.shape[1]:
            left, right = _window_candidates(members, sort_key, cfg.t_c)
        else:
            left, right = (members[idx] for idx in np.triu_indices(members.shape[0], k=1))
        if left.shape[0] == 0:
            continue
        ok = _pair_check(C[left], C[right], d_codes[left], d_codes[right], y[left], y[right], cfg)
        lo = np.minimum(left[ok], right[ok])
        hi = np.maximum(left[ok], right[ok])
        found.append(lo * n + hi)
    return np.concatenate(found) if found else np.zeros(0, dtype=np.int64)


def _blocking_subsets(n_d: int, t_d: int) -> List[Tuple[int, ...]]:
    if t_d >= n_d:
        return [()]
    if math.comb(n_d, t_d) > MAX_BLOCKING_SUBSETS:
        logger.warning(f"⚠ 分块组合数 C({n_d},{t_d}) 过大，只按标签分块")
        return [()]
    return list(itertools.combinations(range(n_d), n_d - t_d))


def _build_pairset(codes: np.ndarray, dataset: EncodedDataset) -> PairSet:
    n = dataset.n_rows
    codes = np.unique(codes)
    i = codes // n
    j = codes % n
    s_codes = dataset.sensitive_codes()
    return PairSet(i, j, dataset.y[i], _relation_from_codes(s_codes[i], s_codes[j]))


def mine_pairs(dataset: EncodedDataset, cfg: ComparabilityConfig, n_jobs: int = 1) -> PairSet:
    """
    挖掘数据集中全部可比较样本对

    按标签和离散特征子集分块（差异不超过 T_d 的两行至少在 N_d - T_d 个离散特征上相同），
    块内按连续特征排序后用 T_c 窗口剪枝，最后对候选对做精确判定并去重。

    Args:
        dataset: 编码数据集（[0,1] 视图）
        cfg: 阈值
        n_jobs: 并行任务数

    Returns:
        PairSet: 按 (i, j) 排序的样本对
    """
    if dataset.n_rows < 2:
        return PairSet.empty()

    d_codes = dataset.discrete_codes()
    cfg.validate_for(d_codes.shape[1])
    subsets = _blocking_subsets(d_codes.shape[1], cfg.t_d)
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_mine_subset)(subset, d_codes, dataset.C, dataset.y, cfg) for subset in subsets
    )
    pairs = _build_pairset(np.concatenate(parts), dataset)
    logger.info(f"✓ {dataset.split} 挖掘到 {len(pairs)} 个可比较样本对")
    return pairs


def brute_force_pairs(dataset: EncodedDataset, cfg: ComparabilityConfig) -> PairSet:
    """O(n²) 逐对判定，作为 mine_pairs 的对照"""
    n = dataset.n_rows
    d_codes = dataset.discrete_codes()
    found = []
    for i in range(n - 1):
        rest = np.arange(i + 1, n)
        ok = _pair_check(np.repeat(dataset.C[i:i + 1], rest.shape[0], axis=0), dataset.C[rest],
                         np.repeat(d_codes[i:i + 1], rest.shape[0], axis=0), d_codes[rest],
                         np.full(rest.shape[0], dataset.y[i]), dataset.y[rest], cfg)
        found.append(i * n + rest[ok])
    if not found:
        return PairSet.empty()
    return _build_pairset(np.concatenate(found), dataset)


def split_pairs(pairs: PairSet, labels: Optional[np.ndarray] = None) -> Tuple[PairSet, PairSet]:
    """
    按共享标签划分正/负样本对

    Args:
        pairs: 样本对
        labels: 数据集标签（默认使用样本对上记录的标签）

    Returns:
        (positive, negative)
    """
    shared = pairs.label if labels is None else np.asarray(labels)[pairs.i]
    return pairs.select(shared == 1), pairs.select(shared == 0)


def pair_statistics(dataset: EncodedDataset, pairs: PairSet) -> Dict:
    """数据集统计：样本数、维度、正/负可比较样本对数（两种计数口径）"""
    pos, neg = split_pairs(pairs)
    return {
        'split': dataset.split,
        'samples': dataset.n_rows,
        'dims': dataset.width,
        'pos_comp': len(pos),
        'neg_comp': len(neg),
        'pos_comp_sensitive_differ': len(pos.sensitive_differing()),
        'neg_comp_sensitive_differ': len(neg.sensitive_differing()),
        'by_relation': {r: len(pairs.with_relation(r)) for r in RELATIONS},
    }

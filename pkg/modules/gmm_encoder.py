"""
连续特征编码模块
按列拟合高斯混合模型（模式归一化），并生成生成器使用的重表示向量
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp
from scipy.stats import norm
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import BayesianGaussianMixture

from .data_processor import EncodedDataset, EncodedRow
from .errors import ContractViolationError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-4
WEIGHT_PRUNE = 1e-3
DEFAULT_MAX_MODES = 10
# 相对值 v = (c - μ) / (4σ)
V_SCALE = 4.0


@dataclass
class ColumnGMM:
    """单列高斯混合（按均值升序排列）"""

    column: int
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    lower_bound_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)

    @property
    def n_modes(self) -> int:
        return int(self.weights.shape[0])

    def validate(self, max_modes: Optional[int] = None):
        if self.n_modes < 1:
            raise ContractViolationError(f"第 {self.column} 列混合模型没有模式")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ContractViolationError(f"第 {self.column} 列混合权重之和不为 1")
        if np.any(self.stds <= 0):
            raise ContractViolationError(f"第 {self.column} 列存在非正标准差")
        if max_modes is not None and self.n_modes > max_modes:
            raise ContractViolationError(f"第 {self.column} 列模式数超过上限 {max_modes}")

    def to_dict(self) -> Dict:
        return {
            'column': self.column,
            'weights': self.weights.tolist(),
            'means': self.means.tolist(),
            'stds': self.stds.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'ColumnGMM':
        return cls(column=int(data['column']), weights=data['weights'],
                   means=data['means'], stds=data['stds'])


@dataclass
class ModeCode:
    """连续值的模式编码：相对值 v 与模式 one-hot 指示 e"""

    v: float
    e: np.ndarray

    @property
    def mode(self) -> int:
        return int(np.argmax(self.e))


@dataclass
class FeatureSpan:
    """重表示向量中一个片段的位置"""

    name: str
    kind: str  # value / mode / discrete / sensitive
    start: int
    end: int

    @property
    def width(self) -> int:
        return self.end - self.start


@dataclass
class ReRepresentation:
    vector: np.ndarray
    spans: List[FeatureSpan]

    @property
    def width(self) -> int:
        return int(self.vector.shape[-1])


# ========== 拟合 ==========

def _fit_bgm(x: np.ndarray, n_components: int, seed: int,
             max_iter: int = 200, tol: float = 1e-3) -> Tuple[BayesianGaussianMixture, List[float]]:
    """逐步运行变分 EM，记录每一步的下界"""
    model = BayesianGaussianMixture(
        n_components=n_components,
        covariance_type='diag',
        weight_concentration_prior_type='dirichlet_distribution',
        weight_concentration_prior=1e-3,
        max_iter=1,
        warm_start=True,
        random_state=seed,
        reg_covar=STD_FLOOR ** 2,
    )
    history = []
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ConvergenceWarning)
        for _ in range(max_iter):
            model.fit(x)
            history.append(float(model.lower_bound_))
            if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
                break
    return model, history


def fit_gmm(values, max_modes: int = DEFAULT_MAX_MODES, seed: int = 0,
            column: int = 0) -> ColumnGMM:
    """
    拟合一列连续值的高斯混合

    用 max_modes 个分量做一次变分贝叶斯拟合（对称 Dirichlet 权重先验），
    再剪除权重低于阈值的模式并重新归一化。

    Args:
        values: 该列在训练集上的取值
        max_modes: 模式数上限
        seed: 随机种子
        column: 列下标

    Returns:
        ColumnGMM: 拟合结果
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ContractViolationError(f"第 {column} 列没有可拟合的取值")

    distinct = np.unique(x)
    if distinct.size < 2:
        logger.warning(f"⚠ 第 {column} 列取值全部相同，使用单一模式")
        return ColumnGMM(column=column, weights=[1.0], means=[float(distinct[0])], stds=[STD_FLOOR])

    model, history = _fit_bgm(x.reshape(-1, 1), min(max_modes, distinct.size), seed)
    weights = model.weights_
    keep = weights >= WEIGHT_PRUNE
    means = model.means_[keep, 0]
    stds = np.maximum(np.sqrt(model.covariances_[keep, 0]), STD_FLOOR)
    weights = weights[keep] / weights[keep].sum()

    order = np.argsort(means, kind='stable')
    gmm = ColumnGMM(column=column, weights=weights[order], means=means[order],
                    stds=stds[order], lower_bound_history=history)
    logger.debug(f"第 {column} 列: {gmm.n_modes} 个模式")
    return gmm


# ========== 编码与解码 ==========

def _log_densities(values: np.ndarray, gmm: ColumnGMM) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    return np.log(gmm.weights + 1e-300) + norm.logpdf(values, loc=gmm.means, scale=gmm.stds)


def mode_probs_batch(values, gmm: ColumnGMM) -> np.ndarray:
    """批量计算每个取值属于各模式的概率（行和为 1）"""
    log_p = _log_densities(values, gmm)
    # 线性空间中全部下溢的行退化为均匀分布
    underflow = np.max(log_p, axis=1) < np.log(np.finfo(np.float64).tiny)
    probs = np.exp(log_p - logsumexp(log_p, axis=1, keepdims=True))
    if np.any(underflow):
        logger.warning(f"⚠ 第 {gmm.column} 列有 {int(underflow.sum())} 个取值的模式密度全部下溢，使用均匀分布")
        probs[underflow] = 1.0 / gmm.n_modes
    return probs


def mode_probs(value: float, gmm: ColumnGMM) -> np.ndarray:
    """
    单个取值在各模式上的概率

    Args:
        value: 连续取值
        gmm: 该列的混合模型

    Returns:
        np.ndarray: 长度为 K 的概率向量
    """
    return mode_probs_batch([value], gmm)[0]


def _select_modes(probs: np.ndarray, rng: Optional[np.random.Generator], deterministic: bool) -> np.ndarray:
    if deterministic or rng is None:
        return probs.argmax(axis=1)
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    modes = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(modes, probs.shape[1] - 1)


def encode_continuous_batch(values, gmm: ColumnGMM, rng: Optional[np.random.Generator] = None,
                            deterministic: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    批量模式编码

    Returns:
        (v, modes): 相对值与模式下标
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    modes = _select_modes(mode_probs_batch(values, gmm), rng, deterministic)
    v = (values - gmm.means[modes]) / (V_SCALE * gmm.stds[modes])
    return np.clip(v, -1.0, 1.0), modes


def encode_continuous(value: float, gmm: ColumnGMM, rng: Optional[np.random.Generator] = None,
                      deterministic: bool = False) -> ModeCode:
    """
    单个连续值的模式编码

    Args:
        value: 连续取值
        gmm: 混合模型
        rng: 随机数发生器，用于按概率抽取模式
        deterministic: 为 True 时取概率最大的模式

    Returns:
        ModeCode: 相对值与模式指示
    """
    v, modes = encode_continuous_batch([value], gmm, rng, deterministic)
    e = np.zeros(gmm.n_modes)
    e[modes[0]] = 1.0
    return ModeCode(v=float(v[0]), e=e)


def decode_continuous(code: ModeCode, gmm: ColumnGMM, clip: bool = True) -> float:
    """
    模式编码解码回连续值 v·4σ_k + μ_k

    Raises:
        ContractViolationError: e 不是合法的 one-hot
    """
    e = np.asarray(code.e, dtype=np.float64)
    if e.shape != (gmm.n_modes,) or not np.all((e == 0.0) | (e == 1.0)) or e.sum() != 1.0:
        raise ContractViolationError(f"模式指示不是合法的 one-hot: {e.tolist()}")
    k = int(np.argmax(e))
    value = code.v * V_SCALE * gmm.stds[k] + gmm.means[k]
    if clip:
        value = min(max(value, 0.0), 1.0)
    return float(value)


def decode_continuous_batch(v: np.ndarray, modes: np.ndarray, gmm: ColumnGMM, clip: bool = True) -> np.ndarray:
    values = np.asarray(v) * V_SCALE * gmm.stds[modes] + gmm.means[modes]
    return np.clip(values, 0.0, 1.0) if clip else values


# ========== 重表示 ==========

def build_spans(gmms: List[ColumnGMM], continuous_names: List[str],
                discrete: List[Tuple[str, int]], sensitive: List[Tuple[str, int]]) -> List[FeatureSpan]:
    """按 v_1 ⊕ e_1 ⊕ … ⊕ d ⊕ s 的顺序记录各片段位置"""
    spans = []
    pos = 0
    for gmm, name in zip(gmms, continuous_names):
        spans.append(FeatureSpan(name, 'value', pos, pos + 1))
        spans.append(FeatureSpan(name, 'mode', pos + 1, pos + 1 + gmm.n_modes))
        pos += 1 + gmm.n_modes
    for kind, features in (('discrete', discrete), ('sensitive', sensitive)):
        for name, width in features:
            spans.append(FeatureSpan(name, kind, pos, pos + width))
            pos += width
    return spans


def rerepresent(row: EncodedRow, gmms: List[ColumnGMM], rng: Optional[np.random.Generator] = None,
                deterministic: bool = False,
                discrete_widths: Optional[List[int]] = None,
                sensitive_widths: Optional[List[int]] = None) -> ReRepresentation:
    """
    单行重表示

    Args:
        row: 编码后的一行（[0,1] 视图）
        gmms: 各连续列的混合模型
        rng: 模式抽样用的随机数发生器
        deterministic: 是否取最大概率模式
        discrete_widths: 各离散字段取值个数
        sensitive_widths: 各敏感字段取值个数

    Returns:
        ReRepresentation: 向量与片段表
    """
    discrete_widths = discrete_widths or []
    sensitive_widths = sensitive_widths or []
    parts = []
    for value, gmm in zip(row.c, gmms):
        code = encode_continuous(value, gmm, rng, deterministic)
        parts.append([code.v])
        parts.append(code.e)
    for codes, widths in ((row.d_codes, discrete_widths), (row.s_codes, sensitive_widths)):
        for code, width in zip(codes, widths):
            onehot = np.zeros(width)
            onehot[code] = 1.0
            parts.append(onehot)

    spans = build_spans(
        gmms,
        [f"c{i}" for i in range(len(gmms))],
        [(f"d{i}", w) for i, w in enumerate(discrete_widths)],
        [(f"s{i}", w) for i, w in enumerate(sensitive_widths)],
    )
    vector = np.concatenate(parts) if parts else np.zeros(0)
    return ReRepresentation(vector=vector, spans=spans)


class GMMEncoder:
    """整表的模式归一化编码器"""

    def __init__(self, max_modes: int = DEFAULT_MAX_MODES, seed: int = 0, n_jobs: int = 1):
        self.max_modes = max_modes
        self.seed = seed
        self.n_jobs = n_jobs
        self.gmms: List[ColumnGMM] = []
        self.spans: List[FeatureSpan] = []
        self.discrete_slices: List[Tuple[int, int]] = []
        self.sensitive_slices: List[Tuple[int, int]] = []

    def fit(self, dataset: EncodedDataset, names: Optional[Dict[str, List[str]]] = None) -> 'GMMEncoder':
        """
        在训练集的连续块上逐列拟合

        Args:
            dataset: 训练集（[0,1] 视图）
            names: 可选的字段名 {'continuous': [...], 'discrete': [...], 'sensitive': [...]}

        Returns:
            GMMEncoder: self
        """
        n_c = dataset.C.shape[1]
        seeds = np.random.SeedSequence(self.seed).generate_state(max(n_c, 1))
        self.gmms = Parallel(n_jobs=self.n_jobs)(
            delayed(fit_gmm)(dataset.C[:, i], self.max_modes, int(seeds[i]), i) for i in range(n_c)
        )
        self.discrete_slices = list(dataset.discrete_slices)
        self.sensitive_slices = list(dataset.sensitive_slices)
        self._build_spans(names)
        logger.info(f"✓ 混合模型拟合完成: {n_c} 列，模式数 {[g.n_modes for g in self.gmms]}")
        return self

    def _build_spans(self, names: Optional[Dict[str, List[str]]] = None):
        names = names or {}
        d_names = names.get('discrete') or [f"d{i}" for i in range(len(self.discrete_slices))]
        s_names = names.get('sensitive') or [f"s{i}" for i in range(len(self.sensitive_slices))]
        self.spans = build_spans(
            self.gmms,
            names.get('continuous') or [f"c{i}" for i in range(len(self.gmms))],
            [(n, e - s) for n, (s, e) in zip(d_names, self.discrete_slices)],
            [(n, e - s) for n, (s, e) in zip(s_names, self.sensitive_slices)],
        )

    @property
    def width(self) -> int:
        return self.spans[-1].end if self.spans else 0

    def spans_of(self, kind: str) -> List[FeatureSpan]:
        return [s for s in self.spans if s.kind == kind]

    @property
    def sensitive_start(self) -> int:
        """重表示向量中敏感块的起点（敏感块位于末尾）"""
        spans = self.spans_of('sensitive')
        return spans[0].start if spans else self.width

    def transform(self, dataset: EncodedDataset, rng: Optional[np.random.Generator] = None,
                  deterministic: bool = False) -> np.ndarray:
        """整表重表示，返回 rows × width 矩阵"""
        n = dataset.n_rows
        out = np.zeros((n, self.width))
        for i, (gmm, v_span, m_span) in enumerate(zip(self.gmms, self.spans_of('value'), self.spans_of('mode'))):
            v, modes = encode_continuous_batch(dataset.C[:, i], gmm, rng, deterministic)
            out[:, v_span.start] = v
            out[np.arange(n), m_span.start + modes] = 1.0
        d_start = self.spans_of('discrete')[0].start if self.discrete_slices else self.sensitive_start
        out[:, d_start:d_start + dataset.D.shape[1]] = dataset.D
        out[:, self.sensitive_start:self.sensitive_start + dataset.S.shape[1]] = dataset.S
        return out

    def inverse_transform(self, matrix: np.ndarray, split: str = 'synthetic',
                          y: Optional[np.ndarray] = None) -> EncodedDataset:
        """
        重表示矩阵解码回 [0,1] 视图（one-hot 片段取 argmax）

        Args:
            matrix: rows × width 矩阵
            split: 数据来源标记
            y: 标签

        Returns:
            EncodedDataset: 解码结果，连续值截断到 [0,1]
        """
        matrix = np.asarray(matrix, dtype=np.float64)
        n = matrix.shape[0]
        C = np.zeros((n, len(self.gmms)))
        for i, (gmm, v_span, m_span) in enumerate(zip(self.gmms, self.spans_of('value'), self.spans_of('mode'))):
            modes = matrix[:, m_span.start:m_span.end].argmax(axis=1)
            C[:, i] = decode_continuous_batch(matrix[:, v_span.start], modes, gmm)

        def onehot_block(kind):
            spans = self.spans_of(kind)
            width = sum(s.width for s in spans)
            block = np.zeros((n, width))
            offset = 0
            for s in spans:
                block[np.arange(n), offset + matrix[:, s.start:s.end].argmax(axis=1)] = 1.0
                offset += s.width
            return block

        return EncodedDataset(
            C=C,
            D=onehot_block('discrete'),
            S=onehot_block('sensitive'),
            y=np.zeros(n, dtype=np.int64) if y is None else np.asarray(y, dtype=np.int64),
            split=split,
            discrete_slices=list(self.discrete_slices),
            sensitive_slices=list(self.sensitive_slices),
        )

    def state_dict(self) -> Dict:
        return {
            'max_modes': self.max_modes,
            'seed': self.seed,
            'gmms': [g.to_dict() for g in self.gmms],
            'discrete_slices': [list(s) for s in self.discrete_slices],
            'sensitive_slices': [list(s) for s in self.sensitive_slices],
            'span_names': {
                'continuous': [s.name for s in self.spans_of('value')],
                'discrete': [s.name for s in self.spans_of('discrete')],
                'sensitive': [s.name for s in self.spans_of('sensitive')],
            },
        }

    @classmethod
    def from_state_dict(cls, state: Dict) -> 'GMMEncoder':
        encoder = cls(max_modes=state['max_modes'], seed=state['seed'])
        encoder.gmms = [ColumnGMM.from_dict(g) for g in state['gmms']]
        encoder.discrete_slices = [tuple(s) for s in state['discrete_slices']]
        encoder.sensitive_slices = [tuple(s) for s in state['sensitive_slices']]
        encoder._build_spans(state.get('span_names'))
        return encoder

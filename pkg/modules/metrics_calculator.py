"""
评估指标计算模块
效用指标（ROC AUC、AP、Acc、Bal. Acc、F1）与个体公平指标（可比较样本对的预测差距均值与上四分位数）
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from sklearn.metrics import (accuracy_score, average_precision_score, balanced_accuracy_score, f1_score,
                             roc_auc_score)

from .comparability import RELATIONS, PairSet, split_pairs
from .data_processor import EncodedDataset
from .errors import UndefinedMetricError

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
# 上四分位数：最近秩之间线性插值
Q3_METHOD = 'linear'


def _as_arrays(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if scores.shape != labels.shape:
        raise UndefinedMetricError(f"得分与标签长度不一致: {scores.shape} vs {labels.shape}")
    return scores, labels


def roc_auc(scores, labels) -> float:
    """
    ROC 曲线下面积（随机正样本排在随机负样本之前的概率，并列计 ½）

    Raises:
        UndefinedMetricError: 标签只有一个类别
    """
    scores, labels = _as_arrays(scores, labels)
    if np.unique(labels).shape[0] < 2:
        raise UndefinedMetricError("标签只有一个类别，ROC AUC 无定义")
    return float(roc_auc_score(labels, scores))


def average_precision(scores, labels) -> float:
    """
    平均精度 Σ (R_k − R_{k−1})·P_k

    Raises:
        UndefinedMetricError: 没有正样本
    """
    scores, labels = _as_arrays(scores, labels)
    if not np.any(labels == 1):
        raise UndefinedMetricError("没有正样本，AP 无定义")
    return float(average_precision_score(labels, scores))


def classification_stats(scores, labels, threshold: float = 0.5) -> Tuple[float, float, float]:
    """
    阈值分类指标（×100）

    Returns:
        (accuracy, balanced accuracy, F1)
    """
    scores, labels = _as_arrays(scores, labels)
    if scores.shape[0] == 0:
        raise UndefinedMetricError("没有样本，分类指标无定义")
    pred = (scores >= threshold).astype(np.int64)
    acc = accuracy_score(labels, pred)
    present = np.unique(labels)
    if present.shape[0] < 2:
        # 单一类别时平衡准确率等于该类召回率
        bal = float(np.mean(pred == labels))
    else:
        bal = balanced_accuracy_score(labels, pred)
    f1 = f1_score(labels, pred, zero_division=0)
    return 100.0 * float(acc), 100.0 * float(bal), 100.0 * float(f1)


@dataclass
class GapStats:
    """一组样本对的预测差距（×100）"""

    mean: float
    q3: float
    count: int

    def to_dict(self) -> Dict:
        return {'mean': self.mean, 'q3': self.q3, 'count': self.count}


def gap_stats(gaps) -> Optional[GapStats]:
    """差距均值与上四分位数；空集合返回 None"""
    gaps = np.asarray(gaps, dtype=np.float64).reshape(-1)
    if gaps.shape[0] == 0:
        return None
    return GapStats(mean=float(gaps.mean()), q3=float(np.percentile(gaps, 75, method=Q3_METHOD)),
                    count=int(gaps.shape[0]))


def pair_gaps(scores: np.ndarray, pairs: PairSet) -> np.ndarray:
    return 100.0 * np.abs(scores[pairs.i] - scores[pairs.j])


def comp_gap_stats(model, pairs: PairSet, dataset: Optional[EncodedDataset] = None,
                   scores: Optional[np.ndarray] = None) -> Dict:
    """
    可比较样本对上的预测差距统计

    Args:
        model: 分类器（提供 score_dataset）；给出 scores 时可为 None
        pairs: 测试集上挖掘的样本对
        dataset: 测试集
        scores: 预先计算的正类概率

    Returns:
        Dict: pos_comp / neg_comp（GapStats 或 None）与 relations 分组统计
    """
    if scores is None:
        scores = model.score_dataset(dataset)
    scores = np.asarray(scores, dtype=np.float64)
    pos, neg = split_pairs(pairs)
    result = {
        'pos_comp': gap_stats(pair_gaps(scores, pos)),
        'neg_comp': gap_stats(pair_gaps(scores, neg)),
        'relations': {},
    }
    for relation in RELATIONS:
        result['relations'][relation] = {
            'pos_comp': gap_stats(pair_gaps(scores, pos.with_relation(relation))),
            'neg_comp': gap_stats(pair_gaps(scores, neg.with_relation(relation))),
        }
    return result


@dataclass
class FairnessReport:
    """一次训练的评估结果；效用与公平指标均为 ×100 尺度"""

    roc: Optional[float]
    ap: Optional[float]
    pos_comp: Optional[GapStats]
    neg_comp: Optional[GapStats]
    relations: Dict[str, Dict[str, Optional[GapStats]]] = field(default_factory=dict)
    accuracy: Optional[float] = None
    balanced_accuracy: Optional[float] = None
    f1: Optional[float] = None
    metadata: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        def stats(s):
            return s.to_dict() if s is not None else None

        return {
            'report_version': REPORT_VERSION,
            'metadata': self.metadata,
            'roc': self.roc,
            'ap': self.ap,
            'pos_comp': stats(self.pos_comp),
            'neg_comp': stats(self.neg_comp),
            'relations': {r: {k: stats(v) for k, v in groups.items()} for r, groups in self.relations.items()},
            'accuracy': self.accuracy,
            'balanced_accuracy': self.balanced_accuracy,
            'f1': self.f1,
        }

    def flat(self) -> Dict[str, Optional[float]]:
        """扁平指标（用于表格与多次运行汇总）"""
        row = {
            'roc': self.roc,
            'ap': self.ap,
            'pos_mean': self.pos_comp.mean if self.pos_comp else None,
            'pos_q3': self.pos_comp.q3 if self.pos_comp else None,
            'neg_mean': self.neg_comp.mean if self.neg_comp else None,
            'neg_q3': self.neg_comp.q3 if self.neg_comp else None,
            'accuracy': self.accuracy,
            'balanced_accuracy': self.balanced_accuracy,
            'f1': self.f1,
        }
        for relation, groups in self.relations.items():
            for side, s in groups.items():
                key = f"{relation}:{side.split('_')[0]}"
                row[f"{key}_mean"] = s.mean if s else None
                row[f"{key}_q3"] = s.q3 if s else None
        return row


METRIC_KEYS = ['roc', 'ap', 'pos_mean', 'pos_q3', 'neg_mean', 'neg_q3', 'accuracy', 'balanced_accuracy', 'f1']


class MetricsCalculator:
    """在固定测试集与样本对上评估分类器"""

    def __init__(self, test: EncodedDataset, pairs: PairSet):
        """
        初始化

        Args:
            test: 测试集（[0,1] 视图）
            pairs: 测试集上的可比较样本对
        """
        self.test = test
        self.pairs = pairs

    def evaluate(self, model, metadata: Optional[Dict] = None) -> FairnessReport:
        """
        计算全部指标

        Args:
            model: 分类器
            metadata: 附加信息（训练方式、种子、解毒比例等）

        Returns:
            FairnessReport: 评估结果；无定义的指标记为 None
        """
        scores = model.score_dataset(self.test)
        labels = self.test.y

        def safe(fn):
            try:
                return 100.0 * fn(scores, labels)
            except UndefinedMetricError as e:
                logger.warning(f"⚠ {e}")
                return None

        try:
            acc, bal, f1 = classification_stats(scores, labels)
        except UndefinedMetricError as e:
            logger.warning(f"⚠ {e}")
            acc = bal = f1 = None

        gaps = comp_gap_stats(None, self.pairs, scores=scores)
        return FairnessReport(
            roc=safe(roc_auc),
            ap=safe(average_precision),
            pos_comp=gaps['pos_comp'],
            neg_comp=gaps['neg_comp'],
            relations=gaps['relations'],
            accuracy=acc,
            balanced_accuracy=bal,
            f1=f1,
            metadata=dict(metadata or {}),
        )


def aggregate(reports: List[FairnessReport]) -> Dict[str, Dict[str, Optional[float]]]:
    """
    多个种子结果的均值与方差

    Returns:
        Dict: {指标: {'mean': 均值, 'var': 方差}}，全部缺失的指标为 None
    """
    result = {}
    if not reports:
        return result
    keys = list(reports[0].flat().keys())
    for key in keys:
        values = [r.flat().get(key) for r in reports]
        values = np.array([v for v in values if v is not None], dtype=np.float64)
        if values.shape[0] == 0:
            result[key] = {'mean': None, 'var': None}
        else:
            result[key] = {'mean': float(values.mean()), 'var': float(values.var())}
    return result


def percent_delta(value: Optional[float], base: Optional[float]) -> Optional[float]:
    """相对基线的变化百分比"""
    if value is None or base is None or base == 0:
        return None
    return 100.0 * (value - base) / base

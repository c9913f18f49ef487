"""
公平训练模块
逻辑回归与三层神经网络分类器，以及各训练方式：
base / dis / anti / anti+dis / antidro / anti-only / random-comparable / random-data
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, solve
from scipy.special import expit

from .antidote_generator import AntidoteSet
from .comparability import ComparabilityConfig
from .data_processor import EncodedDataset, Standardizer, codes_to_onehot, drop_sensitive
from .errors import ConfigError, ContractViolationError, NonFiniteError
from .nn_core import LayerSpec, NetSpec, Network, Tensor, bce_with_logits, make_sgd, mul, sgd_step, sum_

logger = logging.getLogger(__name__)

REGIMES = ('base', 'dis', 'anti', 'anti+dis', 'antidro', 'anti-only', 'random-comparable', 'random-data')
ANTIDOTE_REGIMES = ('anti', 'anti+dis', 'antidro', 'anti-only')
CLASSIFIERS = ('logreg', 'nn')


@dataclass
class LogRegConfig:
    C: float = 1.0
    max_iter: int = 2048
    tol: float = 1e-6


@dataclass
class NNConfig:
    hidden: Tuple[int, ...] = (100, 100)
    iterations: int = 10000
    lr: float = 0.1
    weight_decay: float = 1e-2
    halving_period: int = 2500
    batch_size: int = 1000

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class RegimeConfig:
    """一种训练方式的配置"""

    regime: str = 'base'
    classifier: str = 'logreg'
    name: Optional[str] = None
    antidote_percentage: Optional[float] = None
    random_percentage: float = 500.0
    max_candidates: Optional[int] = None
    repetitions: Optional[int] = None
    logreg: LogRegConfig = field(default_factory=LogRegConfig)
    nn: NNConfig = field(default_factory=NNConfig)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"未知的训练方式: {self.regime}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"未知的分类器: {self.classifier}")
        if self.regime == 'antidro' and self.classifier != 'nn':
            raise ConfigError("antidro 只支持 nn 分类器")
        if self.antidote_percentage is not None and self.antidote_percentage < 0:
            raise ConfigError("解毒数据比例不能为负")
        if self.random_percentage < 0:
            raise ConfigError("随机样本比例不能为负")
        if self.max_candidates is not None and self.max_candidates < 1:
            raise ConfigError("max_candidates 必须为正")
        if isinstance(self.logreg, dict):
            self.logreg = LogRegConfig(**self.logreg)
        if isinstance(self.nn, dict):
            self.nn = NNConfig(**self.nn)
        if self.name is None:
            self.name = f"{self.classifier}:{self.regime}"

    @property
    def needs_antidote(self) -> bool:
        return self.regime in ANTIDOTE_REGIMES

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['nn']['hidden'] = list(self.nn.hidden)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'RegimeConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"未知的训练方式配置项: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"训练方式配置不合法: {e}") from e


# ========== 分类器 ==========

class ClassifierModel:
    """训练好的分类器；view 为分类器视图（是否丢弃敏感块 + 标准化）"""

    def __init__(self, kind: str, params: Dict[str, np.ndarray], metadata: Optional[Dict] = None,
                 network: Optional[Network] = None):
        self.kind = kind
        self.params = params
        self.metadata = metadata or {}
        self.network = network
        self.standardizer: Optional[Standardizer] = None
        self.dis = False

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == 'logreg':
            return X @ self.params['coef'] + self.params['intercept'][0]
        return self.network.forward(Tensor(X), mode='eval').data.reshape(-1)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """正类概率，取值 [0,1]"""
        if X.shape[0] == 0:
            return np.zeros(0)
        return expit(self.decision_function(X))

    def with_view(self, standardizer: Standardizer, dis: bool) -> 'ClassifierModel':
        self.standardizer = standardizer
        self.dis = dis
        return self

    def view(self, dataset: EncodedDataset) -> np.ndarray:
        data = drop_sensitive(dataset) if self.dis else dataset
        return self.standardizer.transform(data) if self.standardizer is not None else data.matrix()

    def score_dataset(self, dataset: EncodedDataset) -> np.ndarray:
        return self.predict_proba(self.view(dataset))

    def state_dict(self) -> Dict[str, np.ndarray]:
        if self.kind == 'logreg':
            return {k: np.asarray(v) for k, v in self.params.items()}
        return self.network.state_dict()


def nn_spec(input_dim: int, cfg: NNConfig) -> NetSpec:
    layers = []
    for width in cfg.hidden:
        layers += [LayerSpec('linear', {'out_dim': width}), LayerSpec('relu')]
    layers.append(LayerSpec('linear', {'out_dim': 1}))
    return NetSpec(input_dim=input_dim, layers=layers)


# ========== 逻辑回归 ==========

def _logreg_objective(w: np.ndarray, Xb: np.ndarray, y: np.ndarray, C: float, reg: np.ndarray) -> float:
    z = Xb @ w
    return C * float(np.sum(np.logaddexp(0.0, z) - y * z)) + 0.5 * float(np.sum(reg * w * w))


def _logreg_gradient(w: np.ndarray, Xb: np.ndarray, y: np.ndarray, C: float, reg: np.ndarray) -> np.ndarray:
    return C * (Xb.T @ (expit(Xb @ w) - y)) + reg * w


def _armijo(f, w, step, f0, g0, alpha=1.0, c1=1e-4, tau=0.5, max_bt=30) -> float:
    """回溯线搜索：f(w + αp) ≤ f(w) + c1·α·gᵀp"""
    slope = float(g0 @ step)
    for _ in range(max_bt):
        if f(w + alpha * step) <= f0 + c1 * alpha * slope:
            return alpha
        alpha *= tau
    return alpha


def logreg_gradient(model: ClassifierModel, X: np.ndarray, y: np.ndarray, C: float = 1.0) -> np.ndarray:
    """目标函数在模型参数处的梯度（截距不正则化）"""
    w = np.concatenate([model.params['coef'], model.params['intercept']])
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    reg = np.ones(w.shape[0])
    reg[-1] = 0.0
    return _logreg_gradient(w, Xb, np.asarray(y, dtype=np.float64), C, reg)


def train_logreg(X: np.ndarray, y: np.ndarray, cfg: Optional[LogRegConfig] = None) -> ClassifierModel:
    """
    L2 正则逻辑回归：牛顿法 + Armijo 回溯

    目标为 C·Σ logloss + ½‖w‖²，截距不参与正则。

    Args:
        X: 特征矩阵
        y: 0/1 标签
        cfg: 正则强度、迭代上限与梯度范数阈值

    Returns:
        ClassifierModel: kind='logreg'
    """
    cfg = cfg or LogRegConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    reg = np.ones(d + 1)
    reg[-1] = 0.0
    w = np.zeros(d + 1)

    def f(v):
        return _logreg_objective(v, Xb, y, cfg.C, reg)

    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        g = _logreg_gradient(w, Xb, y, cfg.C, reg)
        if np.linalg.norm(g) < cfg.tol:
            break
        p = expit(Xb @ w)
        H = cfg.C * (Xb.T * (p * (1.0 - p))) @ Xb + np.diag(reg) + 1e-10 * np.eye(d + 1)
        try:
            step = -solve(H, g, assume_a='pos')
        except LinAlgError:
            step = -g
        w = w + _armijo(f, w, step, f(w), g) * step

    logger.debug(f"逻辑回归迭代 {iterations} 次，梯度范数 {np.linalg.norm(_logreg_gradient(w, Xb, y, cfg.C, reg)):.2e}")
    return ClassifierModel('logreg', {'coef': w[:-1], 'intercept': w[-1:]},
                           metadata={'iterations': iterations})


# ========== 神经网络 ==========

class _BatchSampler:
    """逐轮随机排列后按批切分"""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n, self.batch_size, self.rng = n, min(batch_size, n), rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch_size > self.n:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        batch = self.perm[self.pos:self.pos + self.batch_size]
        self.pos += self.batch_size
        return batch


# adversary(net, batch) -> (输入行, 标签)，为空时退化为普通经验风险
Adversary = Callable[[Network, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def train_nn(X: np.ndarray, y: np.ndarray, cfg: Optional[NNConfig] = None, seed: int = 0,
             adversary: Optional[Adversary] = None) -> ClassifierModel:
    """
    三层神经网络：小批量 SGD，学习率按周期减半，L2 权重衰减

    Args:
        X: 特征矩阵
        y: 0/1 标签
        cfg: 网络与优化配置
        seed: 随机种子（初始化与批次抽样）
        adversary: 可选的对抗项，返回每个批次附加的最坏样本

    Returns:
        ClassifierModel: kind='nn'

    Raises:
        NonFiniteError: 损失出现非有限值
    """
    cfg = cfg or NNConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ContractViolationError("训练集为空")

    net = Network(nn_spec(X.shape[1], cfg), seed=seed)
    params = net.parameters()
    state = make_sgd(cfg.lr, cfg.weight_decay, cfg.halving_period)
    sampler = _BatchSampler(X.shape[0], cfg.batch_size, np.random.default_rng([seed, 0]))

    loss_value = float('nan')
    for step in range(cfg.iterations):
        batch = sampler.next()
        try:
            loss = bce_with_logits(net.forward(Tensor(X[batch]), mode='train'), y[batch])
            if adversary is not None:
                X_adv, y_adv = adversary(net, batch)
                if X_adv.shape[0]:
                    extra = sum_(bce_with_logits(net.forward(Tensor(X_adv), mode='train'), y_adv, reduction='none'))
                    loss = loss + mul(extra, 1.0 / batch.shape[0])
        except NonFiniteError as e:
            raise NonFiniteError("神经网络训练出现非有限值", diagnostic=f"step={step}: {e}") from e
        net.zero_grad()
        loss.backward()
        sgd_step(params, None, state)
        loss_value = loss.item()
        if step % 1000 == 0:
            logger.debug(f"step {step}: loss={loss_value:.4f} lr={state.current_lr():.4g}")

    return ClassifierModel('nn', {}, metadata={'final_loss': loss_value, 'seed': seed}, network=net)


# ========== 训练方式 ==========

def classifier_view(train: EncodedDataset, dis: bool = False) -> Standardizer:
    """在训练集上拟合分类器视图的标准化"""
    return Standardizer().fit(drop_sensitive(train) if dis else train)


def _fit(kind: str, X: np.ndarray, y: np.ndarray, cfg: RegimeConfig, seed: int) -> ClassifierModel:
    if kind == 'logreg':
        return train_logreg(X, y, cfg.logreg)
    return train_nn(X, y, cfg.nn, seed)


def train_base(train: EncodedDataset, cfg: RegimeConfig, seed: int = 0, dis: bool = False) -> ClassifierModel:
    data = drop_sensitive(train) if dis else train
    view = classifier_view(data)
    model = _fit(cfg.classifier, view.transform(data), data.y, cfg, seed)
    return model.with_view(view, dis)


def train_anti(train: EncodedDataset, antidote: AntidoteSet, cfg: RegimeConfig, seed: int = 0,
               dis: bool = False) -> ClassifierModel:
    """
    原始数据与解毒数据合并后训练（标签复制自源行）

    Args:
        train: 训练集
        antidote: 解毒数据
        cfg: 训练方式配置
        seed: 随机种子
        dis: 为 True 时两者都先丢弃敏感块

    Returns:
        ClassifierModel: 分类器
    """
    original = drop_sensitive(train) if dis else train
    extra = drop_sensitive(antidote.data) if dis else antidote.data
    view = classifier_view(original)
    augmented = original.concat(replace(extra, y=train.y[antidote.source_index]))
    logger.debug(f"合并后训练集 {augmented.n_rows} 行（原始 {train.n_rows}，解毒 {len(antidote)}）")
    model = _fit(cfg.classifier, view.transform(augmented), augmented.y, cfg, seed)
    return model.with_view(view, dis)


def _candidate_selector(X_anti: np.ndarray, y: np.ndarray, indptr: np.ndarray, rows: np.ndarray,
                        max_candidates: Optional[int], rng: np.random.Generator) -> Adversary:
    """为每个批次挑出各源行损失最大的解毒样本"""

    def adversary(net: Network, batch: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        lengths = indptr[batch + 1] - indptr[batch]
        total = int(lengths.sum())
        if total == 0:
            return np.zeros((0, X_anti.shape[1])), np.zeros(0)
        owner = np.repeat(np.arange(batch.shape[0]), lengths)
        offsets = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
        cand = rows[np.repeat(indptr[batch], lengths) + offsets]

        if max_candidates is not None and np.any(lengths > max_candidates):
            keys = rng.random(total)
            order = np.lexsort((keys, owner))
            rank = np.empty(total, dtype=np.int64)
            rank[order] = offsets
            keep = rank < max_candidates
            owner, cand = owner[keep], cand[keep]

        labels = y[batch][owner]
        z = net.forward(Tensor(X_anti[cand]), mode='train').data.reshape(-1)
        losses = np.logaddexp(0.0, z) - labels * z
        # 每个源行取损失最大的候选
        order = np.lexsort((-losses, owner))
        first = np.concatenate([[True], owner[order][1:] != owner[order][:-1]])
        chosen = order[first]
        return X_anti[cand[chosen]], labels[chosen]

    return adversary


def train_antidro(train: EncodedDataset, antidote: AntidoteSet, cfg: RegimeConfig, seed: int = 0) -> ClassifierModel:
    """
    分布鲁棒训练：每步最小化批内 ℓ(x,y) 与其可比较解毒样本最大损失之和的均值

    批次只从原始数据中抽取；没有解毒样本的行只贡献 ℓ(x,y)。

    Args:
        train: 训练集
        antidote: 解毒数据（按 source_index 关联源行）
        cfg: 训练方式配置（max_candidates 为每行候选上限 M）
        seed: 随机种子

    Returns:
        ClassifierModel: kind='nn'
    """
    if cfg.classifier != 'nn':
        raise ConfigError("antidro 只支持 nn 分类器")
    view = classifier_view(train)
    X = view.transform(train)
    X_anti = view.transform(antidote.data) if len(antidote) else np.zeros((0, X.shape[1]))
    indptr, rows = antidote.partners(train.n_rows)
    adversary = _candidate_selector(X_anti, train.y.astype(np.float64), indptr, rows,
                                    cfg.max_candidates, np.random.default_rng([seed, 1]))
    model = train_nn(X, train.y, cfg.nn, seed, adversary=adversary)
    return model.with_view(view, False)


def dro_objective(model: ClassifierModel, X: np.ndarray, y: np.ndarray, X_anti: np.ndarray,
                  owner: np.ndarray) -> Tuple[float, float]:
    """
    一个批次上的经验风险与鲁棒目标

    Returns:
        (erm, dro): mean ℓ(x,y) 与 mean[ℓ(x,y) + max ℓ(x̂,y)]
    """
    z = model.decision_function(X)
    base = np.logaddexp(0.0, z) - y * z
    worst = np.zeros(X.shape[0])
    if X_anti.shape[0]:
        za = model.decision_function(X_anti)
        la = np.logaddexp(0.0, za) - y[owner] * za
        np.maximum.at(worst, owner, la)
    return float(base.mean()), float((base + worst).mean())


def random_comparable(dataset: EncodedDataset, cfg: ComparabilityConfig, count: int,
                      rng: np.random.Generator) -> AntidoteSet:
    """
    随机可比较样本：在阈值范围内随机扰动源行

    对每个随机抽取的源行：随机选 0..T_d 个离散特征改为均匀随机取值；
    每个连续特征加 [−T_c, T_c] 均匀噪声并截断到 [0,1]；
    随机选 1..N_s 个敏感特征改为其他取值；标签复制。

    Args:
        dataset: 源数据集
        cfg: 阈值
        count: 生成行数
        rng: 随机数发生器

    Returns:
        AntidoteSet: 随机样本（requested 为改动后的敏感取值）
    """
    if count <= 0 or dataset.n_rows == 0:
        return AntidoteSet.empty_like(dataset)
    src = rng.integers(0, dataset.n_rows, size=count)

    d_widths = [e - s for s, e in dataset.discrete_slices]
    d_codes = dataset.discrete_codes()[src].copy()
    n_d = len(d_widths)
    if n_d and cfg.t_d > 0:
        k_d = rng.integers(0, min(cfg.t_d, n_d) + 1, size=count)
        for r in range(count):
            for feat in rng.choice(n_d, size=k_d[r], replace=False):
                d_codes[r, feat] = rng.integers(0, d_widths[feat])

    C = dataset.C[src]
    noisy = np.clip(C + rng.uniform(-cfg.t_c, cfg.t_c, size=C.shape), 0.0, 1.0)
    C_new = np.where(np.abs(noisy - C) <= cfg.t_c, noisy, C)

    s_widths = [e - s for s, e in dataset.sensitive_slices]
    s_codes = dataset.sensitive_codes()[src].copy()
    n_s = len(s_widths)
    k_s = rng.integers(1, n_s + 1, size=count)
    for r in range(count):
        for feat in rng.choice(n_s, size=k_s[r], replace=False):
            if s_widths[feat] > 1:
                # 改为与当前不同的取值
                shift = rng.integers(1, s_widths[feat])
                s_codes[r, feat] = (s_codes[r, feat] + shift) % s_widths[feat]

    data = EncodedDataset(
        C=C_new,
        D=codes_to_onehot(d_codes, d_widths) if n_d else np.zeros((count, 0)),
        S=codes_to_onehot(s_codes, s_widths),
        y=dataset.y[src].copy(),
        split='antidote',
        discrete_slices=list(dataset.discrete_slices),
        sensitive_slices=list(dataset.sensitive_slices),
    )
    return AntidoteSet(data, src, s_codes)


def random_synthetic(dataset: EncodedDataset, count: int, rng: np.random.Generator) -> EncodedDataset:
    """均匀随机的合成数据：类别均匀抽取，连续值 [0,1] 均匀，标签从真实标签中抽取"""
    d_widths = [e - s for s, e in dataset.discrete_slices]
    s_widths = [e - s for s, e in dataset.sensitive_slices]
    C = rng.uniform(0.0, 1.0, size=(count, dataset.C.shape[1]))
    d_codes = np.column_stack([rng.integers(0, w, size=count) for w in d_widths]) if d_widths else None
    s_codes = np.column_stack([rng.integers(0, w, size=count) for w in s_widths]) if s_widths else None
    return EncodedDataset(
        C=C,
        D=codes_to_onehot(d_codes, d_widths) if d_widths else np.zeros((count, 0)),
        S=codes_to_onehot(s_codes, s_widths) if s_widths else np.zeros((count, 0)),
        y=rng.choice(dataset.y, size=count, replace=True).astype(np.int64),
        split='synthetic',
        discrete_slices=list(dataset.discrete_slices),
        sensitive_slices=list(dataset.sensitive_slices),
    )


def train_anti_only(data: EncodedDataset, cfg: RegimeConfig, seed: int = 0) -> ClassifierModel:
    """只在给定（生成或随机）数据上训练，之后在真实测试集上评估"""
    if data.n_rows == 0:
        raise ContractViolationError("用于训练的生成数据为空")
    return train_base(data, cfg, seed)


@dataclass
class RegimeResult:
    config: RegimeConfig
    seed: int
    model: ClassifierModel
    antidote_rows: int = 0
    train_rows: int = 0


class FairTrainer:
    """按训练方式组织分类器训练"""

    def __init__(self, train: EncodedDataset, comparability: Optional[ComparabilityConfig] = None):
        """
        初始化

        Args:
            train: 训练集（[0,1] 视图）
            comparability: 随机可比较样本使用的阈值
        """
        self.train = train
        self.comparability = comparability or ComparabilityConfig()

    def run_regime(self, cfg: RegimeConfig, seed: int, antidote: Optional[AntidoteSet] = None,
                   rng: Optional[np.random.Generator] = None) -> RegimeResult:
        """
        训练一种方式

        Args:
            cfg: 训练方式配置
            seed: 随机种子
            antidote: 解毒数据（anti 系列必需）
            rng: random-comparable / random-data 使用的随机数发生器

        Returns:
            RegimeResult: 模型与训练规模
        """
        if cfg.needs_antidote and antidote is None:
            raise ConfigError(f"{cfg.name} 需要解毒数据")
        rng = rng or np.random.default_rng(seed)
        train = self.train
        regime = cfg.regime
        extra = 0

        if regime == 'base':
            model = train_base(train, cfg, seed)
        elif regime == 'dis':
            model = train_base(train, cfg, seed, dis=True)
        elif regime == 'anti':
            model = train_anti(train, antidote, cfg, seed)
            extra = len(antidote)
        elif regime == 'anti+dis':
            model = train_anti(train, antidote, cfg, seed, dis=True)
            extra = len(antidote)
        elif regime == 'antidro':
            model = train_antidro(train, antidote, cfg, seed)
            extra = len(antidote)
        elif regime == 'anti-only':
            model = train_anti_only(antidote.data, cfg, seed)
            extra = len(antidote)
        elif regime == 'random-comparable':
            count = int(np.ceil(cfg.random_percentage / 100.0 * train.n_rows))
            randoms = random_comparable(train, self.comparability, count, rng)
            model = train_anti(train, randoms, cfg, seed)
            extra = len(randoms)
        else:
            synthetic = random_synthetic(train, train.n_rows, rng)
            model = train_anti_only(synthetic, cfg, seed)
            extra = synthetic.n_rows

        model.metadata.update({'regime': regime, 'classifier': cfg.classifier, 'seed': seed,
                               'antidote_percentage': 100.0 * extra / train.n_rows if train.n_rows else 0.0})
        return RegimeResult(config=cfg, seed=seed, model=model, antidote_rows=extra, train_rows=train.n_rows)

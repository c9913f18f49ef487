"""
解毒数据生成模块
条件生成器/判别器的结构、带梯度惩罚的对抗训练、原始采样与可比较性后处理过滤
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .comparability import ComparabilityConfig, PairSet, comparable_mask
from .data_processor import EncodedDataset, codes_to_onehot
from .errors import ConfigError, ContractViolationError, EmptyPairsError, NonFiniteError
from .gmm_encoder import GMMEncoder
from .nn_core import (ForwardContext, LayerSpec, NetSpec, Network, Tensor, concat, cross_entropy,
                      make_adam, mean, mul, optimizer_step, sqrt, sub, sum_)

logger = logging.getLogger(__name__)


@dataclass
class GanHyperparams:
    """生成器训练超参数"""

    lr_g: float = 2e-4
    lr_d: float = 2e-4
    weight_decay_g: float = 1e-6
    weight_decay_d: float = 0.0
    batch_size: int = 4096
    epochs: int = 500
    temperature: float = 0.2
    noise_dim: int = 128
    gp_lambda: float = 10.0
    hidden_dim: int = 256
    d_steps: int = 1
    monitor_size: int = 2048
    seed: int = 0

    def __post_init__(self):
        for name in ('lr_g', 'lr_d', 'temperature', 'gp_lambda'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"GAN 超参数 {name} 必须为正: {getattr(self, name)}")
        for name in ('batch_size', 'epochs', 'noise_dim', 'hidden_dim', 'd_steps', 'monitor_size'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"GAN 超参数 {name} 必须为正整数: {getattr(self, name)}")
        if self.weight_decay_g < 0 or self.weight_decay_d < 0:
            raise ConfigError("权重衰减不能为负")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'GanHyperparams':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"未知的 GAN 超参数: {', '.join(sorted(unknown))}")
        return cls(**data)


# ========== 网络结构 ==========

def generator_spec(encoder: GMMEncoder, sensitive_width: int, hp: GanHyperparams) -> NetSpec:
    """生成器：两个带输入拼接的 [Linear→BN→ReLU] 块，主干 Linear→Dim(x̃)，再按片段输出"""
    width = encoder.width

    def block():
        return LayerSpec('concat_skip', layers=[
            LayerSpec('linear', {'out_dim': hp.hidden_dim}),
            LayerSpec('batchnorm1d'),
            LayerSpec('relu'),
        ])

    spans = [(s.name, s.kind, s.start, s.end) for s in encoder.spans]
    return NetSpec(
        input_dim=width + sensitive_width + hp.noise_dim,
        layers=[
            block(),
            block(),
            LayerSpec('linear', {'out_dim': width}),
            LayerSpec('batchnorm1d'),
            LayerSpec('relu'),
            LayerSpec('slice_heads', {'spans': spans, 'temperature': hp.temperature}),
        ],
    )


def discriminator_spec(width: int, hp: GanHyperparams) -> NetSpec:
    """判别器：输入 x̂ ⊕ x̃ ⊕ (x̂ − x̃)，两个 [Linear→LeakyReLU→Dropout] 块后输出标量"""
    return NetSpec(
        input_dim=3 * width,
        layers=[
            LayerSpec('linear', {'out_dim': hp.hidden_dim}),
            LayerSpec('leakyrelu', {'slope': 0.2}),
            LayerSpec('dropout', {'rate': 0.5}),
            LayerSpec('linear', {'out_dim': hp.hidden_dim}),
            LayerSpec('leakyrelu', {'slope': 0.2}),
            LayerSpec('dropout', {'rate': 0.5}),
            LayerSpec('linear', {'out_dim': 1}),
        ],
    )


class GeneratorNet:
    """条件生成器 g(x̃ ⊕ s̄ ⊕ z)"""

    def __init__(self, encoder: GMMEncoder, sensitive_widths: List[int], hp: GanHyperparams, seed: int = 0):
        self.encoder = encoder
        self.sensitive_widths = list(sensitive_widths)
        self.hp = hp
        self.network = Network(generator_spec(encoder, sum(sensitive_widths), hp), seed=seed)
        if self.network.output_dim != encoder.width:
            raise ContractViolationError("生成器输出片段与重表示片段不一致")

    def __call__(self, x_tilde: np.ndarray, s_target: np.ndarray, z: np.ndarray,
                 mode: str = 'train', rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, Dict[str, Tensor]]:
        ctx = ForwardContext(mode=mode, rng=rng)
        out = self.network.forward(Tensor(np.hstack([x_tilde, s_target, z])), ctx=ctx)
        return out, ctx.extras

    def sensitive_logits(self, extras: Dict[str, Tensor]) -> List[Tensor]:
        return [extras[f"sensitive:{s.name}"] for s in self.encoder.spans_of('sensitive')]


class DiscriminatorNet:
    def __init__(self, width: int, hp: GanHyperparams, seed: int = 0):
        self.width = width
        self.network = Network(discriminator_spec(width, hp), seed=seed)

    def __call__(self, inputs, mode: str = 'train', rng: Optional[np.random.Generator] = None) -> Tensor:
        return self.network.forward(inputs, mode=mode, rng=rng)


def pair_input(x_hat, x_tilde: np.ndarray):
    """x̂ ⊕ x̃ ⊕ (x̂ − x̃)；x̂ 为张量时保留计算图"""
    if isinstance(x_hat, Tensor):
        return concat([x_hat, Tensor(x_tilde), sub(x_hat, x_tilde)], axis=1)
    return np.hstack([x_hat, x_tilde, x_hat - x_tilde])


def gradient_penalty(disc: DiscriminatorNet, real: np.ndarray, fake: np.ndarray,
                     rng: np.random.Generator, mode: str = 'train') -> Tensor:
    """在真实/生成输入的随机插值点上惩罚判别器输入梯度范数偏离 1"""
    alpha = rng.uniform(0.0, 1.0, size=(real.shape[0], 1))
    interp = alpha * real + (1.0 - alpha) * fake
    _, grad = disc.network.input_gradient(interp, mode=mode, rng=rng)
    norm = sqrt(sum_(mul(grad, grad), axis=1) + 1e-12)
    deviation = norm - 1.0
    return mean(mul(deviation, deviation))


# ========== 训练 ==========

@dataclass
class TrainingTrace:
    """逐轮记录：各特征组的可比较率与损失"""

    rows: List[Dict] = field(default_factory=list)

    RATIO_COLUMNS = ('sensitive', 'discrete', 'continuous', 'all')

    def append(self, row: Dict):
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def last(self) -> Dict:
        return self.rows[-1] if self.rows else {}

    def to_frame(self) -> pd.DataFrame:
        columns = ['epoch', *self.RATIO_COLUMNS, 'loss_g', 'loss_d', 'gradient_penalty']
        return pd.DataFrame(self.rows, columns=columns)


def group_ratios(generated: EncodedDataset, sources: EncodedDataset, requested: np.ndarray,
                 cfg: ComparabilityConfig) -> Dict[str, float]:
    """
    生成样本相对于源样本的可比较率（按特征组）

    Args:
        generated: 解码后的生成样本
        sources: 对应的源样本（逐行对齐）
        requested: 请求的敏感属性取值下标
        cfg: 阈值

    Returns:
        Dict: sensitive/discrete/continuous/all 四个比例
    """
    n = generated.n_rows
    if n == 0:
        return {k: 0.0 for k in TrainingTrace.RATIO_COLUMNS}
    sens_ok = np.all(generated.sensitive_codes() == requested, axis=1)
    if generated.D.shape[1]:
        disc_ok = (generated.discrete_codes() != sources.discrete_codes()).sum(axis=1) <= cfg.t_d
    else:
        disc_ok = np.ones(n, dtype=bool)
    if generated.C.shape[1]:
        cont_ok = np.max(np.abs(generated.C - sources.C), axis=1) <= cfg.t_c
    else:
        cont_ok = np.ones(n, dtype=bool)
    return {
        'sensitive': float(sens_ok.mean()),
        'discrete': float(disc_ok.mean()),
        'continuous': float(cont_ok.mean()),
        'all': float((sens_ok & disc_ok & cont_ok).mean()),
    }


class AntidoteTrainer:
    """按可比较样本对交替更新生成器与判别器"""

    def __init__(self, dataset: EncodedDataset, pairs: PairSet, hp: GanHyperparams,
                 encoder: Optional[GMMEncoder] = None, cfg: Optional[ComparabilityConfig] = None,
                 max_modes: int = 10, n_jobs: int = 1):
        """
        初始化训练器

        Args:
            dataset: 训练集（[0,1] 视图）
            pairs: 训练集上挖掘到的可比较样本对
            hp: 超参数
            encoder: 已拟合的模式归一化编码器（为空时在 dataset 上拟合）
            cfg: 可比较性阈值，用于记录逐轮可比较率
            max_modes: 拟合编码器时的模式数上限
            n_jobs: 编码器拟合的并行数
        """
        if len(pairs) == 0:
            raise EmptyPairsError("没有可比较样本对，无法训练生成器")
        if not dataset.sensitive_slices:
            raise ContractViolationError("训练生成器需要敏感特征块")

        self.dataset = dataset
        self.pairs = pairs
        self.hp = hp
        self.cfg = cfg or ComparabilityConfig()
        self.encoder = encoder or GMMEncoder(max_modes=max_modes, seed=hp.seed, n_jobs=n_jobs).fit(dataset)
        self.sensitive_widths = [e - s for s, e in dataset.sensitive_slices]

        seeds = np.random.SeedSequence(hp.seed).spawn(4)
        self.rng = np.random.default_rng(seeds[0])
        self.monitor_rng_seed = seeds[1]
        self.generator = GeneratorNet(self.encoder, self.sensitive_widths, hp,
                                      seed=int(seeds[2].generate_state(1)[0]))
        self.discriminator = DiscriminatorNet(self.encoder.width, hp,
                                              seed=int(seeds[3].generate_state(1)[0]))
        self.opt_g = make_adam(hp.lr_g, hp.weight_decay_g)
        self.opt_d = make_adam(hp.lr_d, hp.weight_decay_d)

        # 训练时 x̃ 只编码一次（按概率抽取模式）
        self.x_tilde = self.encoder.transform(dataset, rng=self.rng)
        self.trace = TrainingTrace()

        monitor = np.arange(len(pairs))
        if monitor.shape[0] > hp.monitor_size:
            monitor = np.sort(np.random.default_rng(self.monitor_rng_seed).choice(
                monitor.shape[0], size=hp.monitor_size, replace=False))
        self.monitor = monitor

    def _d_step(self, src: np.ndarray, tgt: np.ndarray) -> Tuple[float, float]:
        x_src, x_tgt = self.x_tilde[src], self.x_tilde[tgt]
        s_tgt = self.dataset.S[tgt]
        z = self.rng.standard_normal((src.shape[0], self.hp.noise_dim))
        fake, _ = self.generator(x_src, s_tgt, z, mode='train', rng=self.rng)

        fake_in = pair_input(fake.data, x_src)
        real_in = pair_input(x_tgt, x_src)
        d = self.discriminator
        gp = gradient_penalty(d, real_in, fake_in, self.rng)
        loss = mean(d(fake_in, rng=self.rng)) - mean(d(real_in, rng=self.rng)) + mul(gp, self.hp.gp_lambda)

        d.network.zero_grad()
        loss.backward()
        optimizer_step(d.network.parameters(), self.opt_d)
        return loss.item(), gp.item()

    def _g_step(self, src: np.ndarray, tgt: np.ndarray) -> float:
        x_src = self.x_tilde[src]
        s_tgt = self.dataset.S[tgt]
        z = self.rng.standard_normal((src.shape[0], self.hp.noise_dim))
        fake, extras = self.generator(x_src, s_tgt, z, mode='train', rng=self.rng)

        score = self.discriminator(pair_input(fake, x_src), rng=self.rng)
        loss = mul(mean(score), -1.0)
        # 每个敏感属性一个交叉熵项
        targets = self.dataset.sensitive_codes()[tgt]
        for k, logits in enumerate(self.generator.sensitive_logits(extras)):
            loss = loss + cross_entropy(logits, targets[:, k])

        self.generator.network.zero_grad()
        self.discriminator.network.zero_grad()
        loss.backward()
        optimizer_step(self.generator.network.parameters(), self.opt_g)
        return loss.item()

    def _epoch_batches(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        order = self.rng.permutation(len(self.pairs))
        i, j = self.pairs.i[order], self.pairs.j[order]
        flip = self.rng.random(order.shape[0]) < 0.5
        src = np.where(flip, j, i)
        tgt = np.where(flip, i, j)
        n_batches = max(1, int(np.ceil(order.shape[0] / self.hp.batch_size)))
        return list(zip(np.array_split(src, n_batches), np.array_split(tgt, n_batches)))

    def monitor_ratios(self) -> Dict[str, float]:
        """在固定的样本对子集上评估当前生成器"""
        rng = np.random.default_rng(self.monitor_rng_seed)
        src = self.pairs.i[self.monitor]
        tgt = self.pairs.j[self.monitor]
        requested = self.dataset.sensitive_codes()[tgt]
        generated = generate(self.generator, self.encoder.transform(self.dataset.subset(src), deterministic=True),
                             self.dataset.S[tgt], rng)
        return group_ratios(generated, self.dataset.subset(src), requested, self.cfg)

    def train(self) -> TrainingTrace:
        """运行全部轮次，返回逐轮记录"""
        hp = self.hp
        logger.info(f"→ 开始训练生成器: {len(self.pairs)} 个样本对，{hp.epochs} 轮，批大小 {hp.batch_size}")
        for epoch in range(hp.epochs):
            losses_g, losses_d, gps = [], [], []
            for step, (src, tgt) in enumerate(self._epoch_batches()):
                try:
                    for _ in range(hp.d_steps):
                        loss_d, gp = self._d_step(src, tgt)
                    loss_g = self._g_step(src, tgt)
                except NonFiniteError as e:
                    raise NonFiniteError("生成器训练出现非有限值",
                                         diagnostic=f"epoch={epoch} step={step}: {e}") from e
                if not np.isfinite([loss_d, loss_g, gp]).all():
                    raise NonFiniteError("生成器训练损失非有限",
                                         diagnostic=f"epoch={epoch} step={step} loss_g={loss_g} loss_d={loss_d}")
                losses_g.append(loss_g)
                losses_d.append(loss_d)
                gps.append(gp)
                logger.debug(f"epoch {epoch} step {step}: loss_g={loss_g:.4f} loss_d={loss_d:.4f} gp={gp:.4f}")

            row = {'epoch': epoch + 1, **self.monitor_ratios(),
                   'loss_g': float(np.mean(losses_g)), 'loss_d': float(np.mean(losses_d)),
                   'gradient_penalty': float(np.mean(gps))}
            self.trace.append(row)
            logger.info(f"  epoch {epoch + 1}/{hp.epochs}: 敏感 {row['sensitive']:.3f} 离散 {row['discrete']:.3f} "
                        f"连续 {row['continuous']:.3f} 全部 {row['all']:.3f} "
                        f"loss_g={row['loss_g']:.4f} loss_d={row['loss_d']:.4f}")
        logger.info("✓ 生成器训练完成")
        return self.trace


def train_generator(dataset: EncodedDataset, pairs: PairSet, hp: GanHyperparams,
                    encoder: Optional[GMMEncoder] = None, cfg: Optional[ComparabilityConfig] = None,
                    max_modes: int = 10, n_jobs: int = 1) -> Tuple[GeneratorNet, DiscriminatorNet, TrainingTrace]:
    """
    训练条件生成器

    Args:
        dataset: 训练集
        pairs: 可比较样本对
        hp: 超参数
        encoder: 已拟合的编码器
        cfg: 可比较性阈值
        max_modes: 模式数上限
        n_jobs: 并行数

    Returns:
        (生成器, 判别器, 逐轮记录)

    Raises:
        EmptyPairsError: 没有可比较样本对
        NonFiniteError: 训练中出现非有限值
    """
    trainer = AntidoteTrainer(dataset, pairs, hp, encoder=encoder, cfg=cfg, max_modes=max_modes, n_jobs=n_jobs)
    trace = trainer.train()
    return trainer.generator, trainer.discriminator, trace


# ========== 采样 ==========

def generate(gen: GeneratorNet, x_tilde: np.ndarray, s_target: np.ndarray, rng: np.random.Generator,
             batch_size: int = 4096) -> EncodedDataset:
    """eval 模式分批生成，并解码回 [0,1] 视图"""
    n = x_tilde.shape[0]
    outputs = []
    for start in range(0, n, batch_size):
        end = min(start + batch_size, n)
        z = rng.standard_normal((end - start, gen.hp.noise_dim))
        out, _ = gen(x_tilde[start:end], s_target[start:end], z, mode='eval', rng=rng)
        outputs.append(out.data)
    matrix = np.vstack(outputs) if outputs else np.zeros((0, gen.encoder.width))
    return gen.encoder.inverse_transform(matrix)


@dataclass
class RawGeneration:
    """未过滤的生成结果"""

    data: EncodedDataset
    source_index: np.ndarray
    requested: np.ndarray

    def __len__(self) -> int:
        return int(self.source_index.shape[0])


def sample_raw(gen: GeneratorNet, dataset: EncodedDataset, iterations: int, rng: np.random.Generator,
               batch_size: int = 4096) -> RawGeneration:
    """
    对每一行、每个与其自身不同的敏感属性组合各生成一行

    Args:
        gen: 训练好的生成器
        dataset: 源数据集
        iterations: 重复次数
        rng: 噪声 z 的随机数发生器
        batch_size: 生成批大小

    Returns:
        RawGeneration: 解码后的生成行，附源行下标与请求的敏感取值
    """
    widths = gen.sensitive_widths
    combos = np.array(np.meshgrid(*[np.arange(w) for w in widths], indexing='ij')).reshape(len(widths), -1).T
    own = dataset.sensitive_codes()
    # 源行 × 组合，排除与源行敏感取值完全相同的组合
    keep = ~np.all(own[:, None, :] == combos[None, :, :], axis=2)
    src_once, combo_once = np.nonzero(keep)

    # 模式取最大概率，x̃ 只依赖源行
    x_tilde = gen.encoder.transform(dataset, deterministic=True)
    src = np.tile(src_once, iterations)
    requested = combos[np.tile(combo_once, iterations)]

    generated = generate(gen, x_tilde[src], codes_to_onehot(requested, widths), rng, batch_size)
    generated = replace(generated, y=dataset.y[src].copy(), split='synthetic')
    logger.info(f"✓ 原始采样 {len(src)} 行（{iterations} 次迭代）")
    return RawGeneration(data=generated, source_index=src, requested=requested)


# ========== 过滤与解毒数据集 ==========

class AntidoteSet:
    """通过可比较性过滤的生成数据，标签复制自源行"""

    def __init__(self, data: EncodedDataset, source_index: np.ndarray, requested: np.ndarray):
        self.data = replace(data, split='antidote')
        self.source_index = np.asarray(source_index, dtype=np.int64)
        # 宽度取敏感特征数，空集合时 reshape(0, -1) 无法推断
        self.requested = np.asarray(requested, dtype=np.int64).reshape(
            self.source_index.shape[0], len(data.sensitive_slices))

    def __len__(self) -> int:
        return int(self.source_index.shape[0])

    @classmethod
    def empty_like(cls, dataset: EncodedDataset) -> 'AntidoteSet':
        return cls(dataset.subset(np.zeros(0, dtype=np.int64)), np.zeros(0, dtype=np.int64),
                   np.zeros((0, len(dataset.sensitive_slices)), dtype=np.int64))

    def percentage(self, n_train: int) -> float:
        """解毒数据占训练集的百分比"""
        return 100.0 * len(self) / n_train if n_train else 0.0

    def subset(self, index: np.ndarray) -> 'AntidoteSet':
        index = np.asarray(index, dtype=np.int64)
        return AntidoteSet(self.data.subset(index), self.source_index[index], self.requested[index])

    def concat(self, other: 'AntidoteSet') -> 'AntidoteSet':
        return AntidoteSet(self.data.concat(other.data), np.concatenate([self.source_index, other.source_index]),
                           np.vstack([self.requested, other.requested]))

    def truncate(self, count: int, rng: np.random.Generator) -> 'AntidoteSet':
        """均匀随机保留 count 行（保持原有顺序）"""
        if count >= len(self):
            return self
        return self.subset(np.sort(rng.choice(len(self), size=count, replace=False)))

    def partners(self, n_sources: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        按源行分组的解毒行下标（CSR 形式）

        Returns:
            (indptr, rows): 源行 k 的解毒行为 rows[indptr[k]:indptr[k+1]]
        """
        order = np.argsort(self.source_index, kind='stable')
        counts = np.bincount(self.source_index, minlength=n_sources)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return indptr, order

    def to_frame(self, processor) -> pd.DataFrame:
        """可读表格：source_index、requested_sensitive 及各字段（连续字段为 [0,1] 值）"""
        frame = processor.decode_frame(self.data)
        names = processor.schema.sensitive_names
        requested = ['|'.join(str(processor.schema.sensitive[k][1][c]) for k, c in enumerate(row))
                     for row in self.requested]
        frame.insert(0, 'requested_sensitive', requested)
        frame.insert(0, 'source_index', self.source_index)
        frame = frame.rename(columns={processor.schema.label[0]: 'label'})
        return frame[['source_index', 'requested_sensitive', 'label']
                     + [c for c in frame.columns if c not in ('source_index', 'requested_sensitive', 'label')]]

    def to_csv(self, path: str, processor):
        from .export_generator import write_csv
        write_csv(self.to_frame(processor), path)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, processor) -> 'AntidoteSet':
        schema = processor.schema
        table = frame.rename(columns={'label': schema.label[0]})
        data = processor.encode_scaled_frame(table, split='antidote')
        requested = []
        for text in frame['requested_sensitive'].astype(str):
            parts = text.split('|')
            requested.append([schema.sensitive[k][1].index(v) for k, v in enumerate(parts)])
        requested = np.asarray(requested, dtype=np.int64).reshape(len(frame), len(schema.sensitive))
        return cls(data, frame['source_index'].to_numpy(dtype=np.int64), requested)

    @classmethod
    def from_csv(cls, path: str, processor) -> 'AntidoteSet':
        return cls.from_frame(pd.read_csv(path, dtype={'requested_sensitive': str}, keep_default_na=False),
                              processor)


def post_filter(raw: RawGeneration, dataset: EncodedDataset, cfg: ComparabilityConfig,
                require_requested_sensitive: bool = False) -> AntidoteSet:
    """
    只保留与源行可比较的生成行

    Args:
        raw: 原始生成结果
        dataset: 源数据集
        cfg: 阈值
        require_requested_sensitive: 是否额外要求生成的敏感取值等于请求值

    Returns:
        AntidoteSet: 过滤后的解毒数据
    """
    if len(raw) == 0:
        return AntidoteSet.empty_like(dataset)
    data = replace(raw.data, y=dataset.y[raw.source_index].copy())
    mask = comparable_mask(data, dataset, cfg, b_index=raw.source_index)
    if require_requested_sensitive:
        mask &= np.all(data.sensitive_codes() == raw.requested, axis=1)
    kept = np.flatnonzero(mask)
    logger.info(f"✓ 过滤后保留 {kept.shape[0]}/{len(raw)} 行（可比较率 {kept.shape[0] / len(raw):.3f}）")
    return AntidoteSet(data.subset(kept), raw.source_index[kept], raw.requested[kept])


def count_violations(antidote: AntidoteSet, dataset: EncodedDataset, cfg: ComparabilityConfig) -> int:
    """逐行检查解毒数据与源行的可比较性，返回违反的行数"""
    if len(antidote) == 0:
        return 0
    mask = comparable_mask(antidote.data, dataset, cfg, b_index=antidote.source_index)
    return int((~mask).sum())

"""
实验编排模块
负责整合数据读取、样本对挖掘、生成器训练、解毒数据采样、各训练方式的训练与评估，并输出结果表
"""

import logging
import re
import zlib
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .antidote_generator import AntidoteSet, GeneratorNet, count_violations, post_filter, sample_raw, train_generator
from .chart_generator import ChartGenerator
from .comparability import PairSet, mine_pairs, pair_statistics
from .data_processor import DataProcessor, EncodedDataset, FeatureSchema, load_dataset, save_encoded
from .errors import BundleFormatError, ConfigError, ContractViolationError, FairGenError
from .export_generator import (ArtifactBundle, ExportGenerator, classifier_entry, generator_bundle,
                               generator_from_bundle, load_bundle, save_bundle)
from .fair_trainer import FairTrainer, RegimeConfig
from .metrics_calculator import METRIC_KEYS, FairnessReport, MetricsCalculator, aggregate, percent_delta

logger = logging.getLogger(__name__)


# ========== 随机数流 ==========

def seed_stream(root: int, name: str, *ints: int) -> np.random.SeedSequence:
    """由根种子与流名称派生独立的随机数流"""
    return np.random.SeedSequence(root, spawn_key=(zlib.crc32(name.encode('utf-8')), *ints))


def stream_seed(root: int, name: str, *ints: int) -> int:
    return int(seed_stream(root, name, *ints).generate_state(1)[0])


def stream_rng(root: int, name: str, *ints: int) -> np.random.Generator:
    return np.random.default_rng(seed_stream(root, name, *ints))


def target_count(percentage: float, n_train: int) -> int:
    """解毒数据行数 = ⌈比例 × 训练集行数⌉"""
    return int(np.ceil(round(percentage / 100.0 * n_train, 9)))


def safe_name(name: str) -> str:
    return re.sub(r'[^A-Za-z0-9_.-]', '_', name)


@dataclass
class PreparedData:
    schema: FeatureSchema
    processor: DataProcessor
    train: EncodedDataset
    test: EncodedDataset
    dropped: Dict[str, Dict[str, int]]


def _run_job(trainer: FairTrainer, calculator: MetricsCalculator, cfg: RegimeConfig, seed_index: int,
             seed: int, antidote: Optional[AntidoteSet], rng: np.random.Generator) -> Dict:
    """训练并评估一个 (训练方式, 种子)；失败只影响本任务"""
    logger.info(f"→ 开始 {cfg.name} seed={seed_index}")
    try:
        result = trainer.run_regime(cfg, seed, antidote=antidote, rng=rng)
        metadata = {'name': cfg.name, 'regime': cfg.regime, 'classifier': cfg.classifier,
                    'seed_index': seed_index, 'seed': seed, 'antidote_rows': result.antidote_rows,
                    'train_rows': result.train_rows,
                    'antidote_percentage': result.model.metadata.get('antidote_percentage', 0.0)}
        report = calculator.evaluate(result.model, metadata=metadata)
        logger.info(f"✓ 完成 {cfg.name} seed={seed_index}: ROC={report.roc} Pos.Mean="
                    f"{report.pos_comp.mean if report.pos_comp else None}")
        return {'status': 'ok', 'config': cfg, 'seed_index': seed_index, 'report': report, 'model': result.model}
    except Exception as e:
        logger.error(f"✗ {cfg.name} seed={seed_index} 失败: {str(e)}")
        return {'status': 'failed', 'config': cfg, 'seed_index': seed_index, 'error': str(e)}


class ExperimentRunner:
    """实验编排器：每个命令对应一个 run_* 方法"""

    def __init__(self, config):
        """
        初始化编排器

        Args:
            config: 已校验的 ExperimentConfig
        """
        self.config = config
        self.exporter = ExportGenerator(config.output_dir)
        self.charts = ChartGenerator(config.output_dir)
        self._data: Optional[PreparedData] = None
        self._pairs: Dict[str, PairSet] = {}

    # ========== 数据 ==========

    def prepare(self) -> PreparedData:
        """读取并编码训练集与测试集（缩放统计只用训练集）"""
        if self._data is not None:
            return self._data
        cfg = self.config

        # 1. 字段定义
        schema = FeatureSchema.from_json(cfg.schema)
        cfg.comparability.validate_for(len(schema.discrete))

        # 2. 读取数据
        train_raw = load_dataset(cfg.train_path, schema)
        test_raw = load_dataset(cfg.test_path, schema)

        # 3. 编码
        processor = DataProcessor(schema).fit(train_raw)
        train = processor.encode(train_raw, split='train')
        test = processor.encode(test_raw, split='test')
        logger.info(f"✓ 数据准备完成: 训练 {train.n_rows} 行，测试 {test.n_rows} 行，维度 {train.width}")

        self._data = PreparedData(schema=schema, processor=processor, train=train, test=test,
                                  dropped={'train': train_raw.dropped, 'test': test_raw.dropped})
        return self._data

    def pairs(self, split: str) -> PairSet:
        if split not in self._pairs:
            data = self.prepare()
            dataset = data.train if split == 'train' else data.test
            self._pairs[split] = mine_pairs(dataset, self.config.comparability, n_jobs=self.config.threads)
        return self._pairs[split]

    # ========== 命令: pairs ==========

    def run_pairs(self) -> pd.DataFrame:
        """
        挖掘训练集与测试集上的可比较样本对

        Returns:
            pd.DataFrame: 数据集统计（样本数、维度、敏感属性、正/负可比较样本对数）
        """
        data = self.prepare()
        rows = []
        for split, dataset in (('train', data.train), ('test', data.test)):
            pairs = self.pairs(split)
            self.exporter.export_csv(pairs.to_frame(), f'pairs_{split}.csv')
            stats = pair_statistics(dataset, pairs)
            rows.append({
                'split': split,
                'samples': stats['samples'],
                'dims': stats['dims'],
                'sensitive': '|'.join(data.schema.sensitive_names),
                'pos_comp': stats['pos_comp'],
                'neg_comp': stats['neg_comp'],
                'pos_comp_sensitive_differ': stats['pos_comp_sensitive_differ'],
                'neg_comp_sensitive_differ': stats['neg_comp_sensitive_differ'],
                **{f'relation:{k}': v for k, v in stats['by_relation'].items()},
            })
        table = pd.DataFrame(rows)
        self.exporter.export_csv(table, 'pair_stats.csv')
        return table

    # ========== 命令: train-generator ==========

    def gan_hyperparams(self):
        hp = self.config.gan
        return replace(hp, seed=stream_seed(self.config.root_seed, 'gan', hp.seed))

    def run_train_generator(self) -> Tuple[GeneratorNet, str]:
        """
        训练生成器，写出模型包、收敛记录与收敛曲线

        Returns:
            (生成器, 模型包 sha256)
        """
        cfg = self.config
        data = self.prepare()
        pairs = self.pairs('train')
        hp = self.gan_hyperparams()

        gen, disc, trace = train_generator(data.train, pairs, hp, cfg=cfg.comparability,
                                           max_modes=cfg.gmm_max_modes, n_jobs=cfg.threads)
        frame = trace.to_frame()
        self.exporter.export_csv(frame, 'generator_trace.csv')
        self.charts.plot_trace(frame)

        bundle = generator_bundle(
            data.processor, (gen, disc),
            seeds={'root_seed': cfg.root_seed, 'gan_seed': hp.seed},
            metadata={'command': 'train-generator', 'train_rows': data.train.n_rows, 'pairs': len(pairs),
                      'comparability': cfg.comparability.to_dict()},
        )
        digest = save_bundle(bundle, cfg.resolved_bundle_path)
        return gen, digest

    def load_generator(self) -> GeneratorNet:
        """读取模型包中的生成器；字段定义必须与当前配置一致"""
        data = self.prepare()
        bundle = load_bundle(self.config.resolved_bundle_path)
        if bundle.schema != data.schema.to_dict():
            raise ConfigError("模型包中的字段定义与当前配置不一致")
        gen, _ = generator_from_bundle(bundle)
        return gen

    def generator(self) -> GeneratorNet:
        """已有模型包时读取，否则现场训练"""
        try:
            return self.load_generator()
        except BundleFormatError as e:
            logger.info(f"→ 未能读取模型包（{str(e)}），开始训练生成器")
            gen, _ = self.run_train_generator()
            return gen

    # ========== 命令: sample ==========

    def sample_antidote(self, gen: GeneratorNet, percentage: float,
                        rng: Optional[np.random.Generator] = None) -> AntidoteSet:
        """
        反复采样并过滤，直到数量达到目标比例或达到最大迭代次数，再均匀随机截断到目标数量

        Args:
            gen: 生成器
            percentage: 目标比例（解毒数据行数 ÷ 训练集行数 × 100）
            rng: 随机数发生器

        Returns:
            AntidoteSet: 解毒数据
        """
        cfg = self.config
        train = self.prepare().train
        rng = rng or stream_rng(cfg.root_seed, 'sample')
        target = target_count(percentage, train.n_rows)
        pool = AntidoteSet.empty_like(train)
        if target == 0:
            logger.info("✓ 目标比例为 0，解毒数据为空")
            return pool

        for iteration in range(cfg.max_sampling_iterations):
            raw = sample_raw(gen, train, 1, rng, batch_size=cfg.gan.batch_size)
            pool = pool.concat(post_filter(raw, train, cfg.comparability,
                                           require_requested_sensitive=cfg.require_requested_sensitive))
            logger.info(f"→ 第 {iteration + 1} 次采样: 累计 {len(pool)}/{target} 行")
            if len(pool) >= target:
                break
        if len(pool) < target:
            logger.warning(f"⚠ 达到最大迭代次数 {cfg.max_sampling_iterations}，只得到 {len(pool)}/{target} 行")

        antidote = pool.truncate(target, rng)
        violations = count_violations(antidote, train, cfg.comparability)
        if violations:
            raise ContractViolationError(f"过滤后仍有 {violations} 行与源行不可比较")
        logger.info(f"✓ 解毒数据 {len(antidote)} 行（{antidote.percentage(train.n_rows):.2f}%）")
        return antidote

    def run_sample(self, percentage: Optional[float] = None) -> AntidoteSet:
        """读取模型包并采样，写出 antidote.csv"""
        cfg = self.config
        percentage = cfg.antidote_percentage if percentage is None else percentage
        if percentage < 0:
            raise ConfigError("解毒数据比例不能为负")
        antidote = self.sample_antidote(self.load_generator(), percentage)
        self.exporter.export_csv(antidote.to_frame(self.prepare().processor), 'antidote.csv')
        return antidote

    def antidote_pool(self, percentage: float) -> AntidoteSet:
        """实验使用的解毒数据池：优先读取 antidote_path，否则采样"""
        data = self.prepare()
        if self.config.antidote_path:
            pool = AntidoteSet.from_csv(self.config.antidote_path, data.processor)
            logger.info(f"✓ 已读取解毒数据 {self.config.antidote_path}: {len(pool)} 行")
            return pool
        if target_count(percentage, data.train.n_rows) == 0:
            return AntidoteSet.empty_like(data.train)
        return self.sample_antidote(self.generator(), percentage)

    def try_antidote_pool(self, percentage: float) -> Tuple[Optional[AntidoteSet], Optional[str]]:
        """
        准备解毒数据池；生成器训练或采样失败时只返回错误信息，不中断整个命令

        Returns:
            (解毒数据池, 错误信息)：成功时错误信息为 None

        Raises:
            ConfigError: 配置错误仍然直接抛出
        """
        try:
            return self.antidote_pool(percentage), None
        except ConfigError:
            raise
        except FairGenError as e:
            logger.error(f"✗ 解毒数据准备失败，依赖解毒数据的训练方式将标记为失败: {str(e)}")
            return None, str(e)

    def _failed(self, regime: RegimeConfig, error: str) -> List[Dict]:
        return [{'status': 'failed', 'config': regime, 'seed_index': seed_index, 'error': error}
                for seed_index in self.config.seeds]

    # ========== 命令: experiment ==========

    def regime_percentage(self, regime: RegimeConfig) -> float:
        if regime.antidote_percentage is not None:
            return regime.antidote_percentage
        if regime.regime == 'antidro':
            return self.config.regime_antidro_percentage
        return self.config.antidote_percentage

    def _jobs(self, plan: List[Tuple[RegimeConfig, Optional[AntidoteSet], str]]) -> List[Dict]:
        """并行运行 (训练方式, 种子) 任务；plan 中每项为 (配置, 解毒数据, 流名称)"""
        cfg = self.config
        data = self.prepare()
        trainer = FairTrainer(data.train, cfg.comparability)
        calculator = MetricsCalculator(data.test, self.pairs('test'))
        tasks = []
        for regime, antidote, stream in plan:
            for seed_index in cfg.seeds:
                seed = stream_seed(cfg.root_seed, 'classifier', seed_index)
                rng = stream_rng(cfg.root_seed, f'random:{stream}', seed_index)
                tasks.append(delayed(_run_job)(trainer, calculator, regime, seed_index, seed, antidote, rng))
        return Parallel(n_jobs=cfg.threads, prefer='threads')(tasks)

    def _antidote_for(self, pool: Optional[AntidoteSet], name: str, percentage: float) -> AntidoteSet:
        n_train = self.prepare().train.n_rows
        if pool is None:
            return AntidoteSet.empty_like(self.prepare().train)
        return pool.truncate(target_count(percentage, n_train), stream_rng(self.config.root_seed, f'truncate:{name}'))

    def run_experiment(self) -> pd.DataFrame:
        """
        运行全部训练方式 × 种子，写出每次运行的报告与汇总表

        Returns:
            pd.DataFrame: 汇总表（每个 (训练方式, 指标) 一行，含相对同分类器 base 的变化百分比）
        """
        cfg = self.config
        data = self.prepare()

        # 1. 解毒数据
        needed = [self.regime_percentage(r) for r in cfg.regimes if r.needs_antidote]
        pool, pool_error = self.try_antidote_pool(max(needed)) if needed else (None, None)

        # 2. 训练与评估（解毒数据不可用时，只有依赖它的训练方式失败）
        plan, failed = [], []
        for regime in cfg.regimes:
            if not regime.needs_antidote:
                plan.append((regime, None, regime.name))
                continue
            percentage = self.regime_percentage(regime)
            if pool_error is not None and target_count(percentage, data.train.n_rows) > 0:
                failed += self._failed(regime, pool_error)
                continue
            plan.append((regime, self._antidote_for(pool, regime.name, percentage), regime.name))
        outcomes = self._jobs(plan) + failed

        # 3. 每次运行的报告
        runs = []
        for outcome in outcomes:
            regime, seed_index = outcome['config'], outcome['seed_index']
            row = {'name': regime.name, 'regime': regime.regime, 'classifier': regime.classifier,
                   'seed_index': seed_index, 'status': outcome['status'], 'error': outcome.get('error', '')}
            if outcome['status'] == 'ok':
                report: FairnessReport = outcome['report']
                self.exporter.export_json(report.to_dict(),
                                          f"reports/{safe_name(regime.name)}_seed{seed_index}.json")
                row.update(report.flat())
                row['antidote_rows'] = report.metadata['antidote_rows']
            runs.append(row)
        runs_frame = pd.DataFrame(runs)

        # 4. 汇总表
        table = self.consolidate(outcomes)
        self.exporter.export_csv(runs_frame, 'experiment_runs.csv')
        self.exporter.export_csv(table, 'experiment_table.csv')
        self.exporter.export_to_excel({'table': table, 'runs': runs_frame}, 'experiment_table.xlsx')

        # 5. 分类器参数
        classifiers = {f"{o['config'].name}@{o['seed_index']}": classifier_entry(o['model'], o['config'])
                       for o in outcomes if o['status'] == 'ok'}
        bundle = ArtifactBundle(
            schema=data.schema.to_dict(),
            processor=data.processor.state_dict(),
            classifiers=classifiers,
            seeds={'root_seed': cfg.root_seed, 'seeds': list(cfg.seeds)},
            metadata={'command': 'experiment', 'train_rows': data.train.n_rows},
        )
        save_bundle(bundle, cfg.output('classifiers.afgb'))
        return table

    def consolidate(self, outcomes: List[Dict]) -> pd.DataFrame:
        """按训练方式汇总多个种子，计算相对同分类器 base 的变化百分比"""
        by_name: Dict[str, Dict] = {}
        for regime in self.config.regimes:
            by_name[regime.name] = {'config': regime, 'reports': [], 'failed': 0}
        for outcome in outcomes:
            entry = by_name[outcome['config'].name]
            if outcome['status'] == 'ok':
                entry['reports'].append(outcome['report'])
            else:
                entry['failed'] += 1

        summaries = {name: aggregate(e['reports']) for name, e in by_name.items()}
        base_of = {e['config'].classifier: name for name, e in by_name.items()
                   if e['config'].regime == 'base' and e['reports']}

        rows = []
        for name, entry in by_name.items():
            regime = entry['config']
            status = 'failed' if not entry['reports'] else ('partial' if entry['failed'] else 'ok')
            base = summaries.get(base_of.get(regime.classifier), {})
            for metric in METRIC_KEYS:
                stats = summaries[name].get(metric, {'mean': None, 'var': None})
                base_mean = base.get(metric, {}).get('mean')
                rows.append({
                    'name': name,
                    'regime': regime.regime,
                    'classifier': regime.classifier,
                    'metric': metric,
                    'mean': stats['mean'],
                    'var': stats['var'],
                    'base_mean': base_mean,
                    'delta_pct': percent_delta(stats['mean'], base_mean),
                    'seeds': len(entry['reports']),
                    'status': status,
                })
        return pd.DataFrame(rows)

    # ========== 命令: tradeoff ==========

    def run_tradeoff(self, percentages: Optional[List[float]] = None) -> pd.DataFrame:
        """
        在不同解毒数据比例下运行 anti / antidro，输出权衡表与权衡曲线

        Args:
            percentages: 比例列表（默认取配置中的 tradeoff_percentages）

        Returns:
            pd.DataFrame: 每个 (训练方式, 比例) 一行：roc、pos_mean、neg_mean 及其方差
        """
        cfg = self.config
        percentages = list(cfg.tradeoff_percentages if percentages is None else percentages)
        if any(p < 0 for p in percentages):
            raise ConfigError("解毒数据比例不能为负")
        regimes = cfg.tradeoff_configs()
        pool, pool_error = self.try_antidote_pool(max(percentages)) if percentages else (None, None)
        n_train = self.prepare().train.n_rows

        plan, failed = [], []
        for regime in regimes:
            for pct in percentages:
                point = replace(regime, name=f"{regime.name}@{pct:g}")
                if pool_error is not None and target_count(pct, n_train) > 0:
                    failed += self._failed(point, pool_error)
                    continue
                plan.append((point, self._antidote_for(pool, regime.name, pct), regime.name))
        outcomes = self._jobs(plan) + failed

        grouped: Dict[str, List[Dict]] = {}
        for outcome in outcomes:
            grouped.setdefault(outcome['config'].name, []).append(outcome)

        rows = []
        for regime in regimes:
            for pct in percentages:
                group = grouped.get(f"{regime.name}@{pct:g}", [])
                reports = [o['report'] for o in group if o['status'] == 'ok']
                summary = aggregate(reports)
                row = {'regime': regime.name, 'percentage': pct,
                       'antidote_rows': reports[0].metadata['antidote_rows'] if reports else None,
                       'seeds': len(reports), 'status': 'ok' if reports else 'failed'}
                for key in ('roc', 'pos_mean', 'neg_mean'):
                    stats = summary.get(key, {'mean': None, 'var': None})
                    row[key] = stats['mean']
                    row[f'{key}_var'] = stats['var']
                rows.append(row)
        sweep = pd.DataFrame(rows)
        self.exporter.export_csv(sweep, 'tradeoff.csv')
        self.charts.plot_tradeoff(sweep)
        return sweep

    # ========== 命令: encode ==========

    def run_encode(self) -> Dict[str, str]:
        """把编码后的训练集与测试集写成二进制文件"""
        data = self.prepare()
        paths = {}
        for split, dataset in (('train', data.train), ('test', data.test)):
            path = self.exporter.path(f'{split}.fenc')
            save_encoded(dataset, path)
            logger.info(f"✓ 已写出 {path}（{dataset.n_rows} 行）")
            paths[split] = path
        return paths

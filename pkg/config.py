import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional

from dotenv import load_dotenv

from modules.antidote_generator import GanHyperparams
from modules.comparability import ComparabilityConfig
from modules.errors import ConfigError
from modules.fair_trainer import RegimeConfig

load_dotenv()

CONFIG_VERSION = 1


class Config:
    # 数据与输出目录
    DATA_DIR = os.getenv('FAIRGEN_DATA_DIR', '')
    OUTPUT_DIR = os.getenv('FAIRGEN_OUTPUT_DIR', 'outputs')

    # 运行配置
    LOG_LEVEL = os.getenv('FAIRGEN_LOG_LEVEL', 'INFO')
    THREADS = int(os.getenv('FAIRGEN_THREADS', '1'))

    # 确保必要的目录存在
    @staticmethod
    def init_app(output_dir: Optional[str] = None):
        for folder in [output_dir or Config.OUTPUT_DIR]:
            if not os.path.exists(folder):
                os.makedirs(folder)


def _default_regimes() -> List[RegimeConfig]:
    return [RegimeConfig('base', 'logreg'), RegimeConfig('anti', 'logreg'),
            RegimeConfig('base', 'nn'), RegimeConfig('antidro', 'nn')]


@dataclass
class ExperimentConfig:
    """实验配置（JSON 文件，config_version = 1）"""

    schema: str
    train_path: str
    test_path: str
    comparability: ComparabilityConfig = field(default_factory=ComparabilityConfig)
    gan: GanHyperparams = field(default_factory=GanHyperparams)
    regimes: List[RegimeConfig] = field(default_factory=_default_regimes)
    antidote_percentage: float = 45.25
    antidro_percentage: Optional[float] = None
    tradeoff_percentages: List[float] = field(default_factory=lambda: [0.0, 45.0, 90.0])
    tradeoff_regimes: List[str] = field(default_factory=lambda: ['logreg:anti', 'nn:antidro'])
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    root_seed: int = 0
    output_dir: str = field(default_factory=lambda: Config.OUTPUT_DIR)
    bundle_path: Optional[str] = None
    antidote_path: Optional[str] = None
    max_sampling_iterations: int = 10
    gmm_max_modes: int = 10
    require_requested_sensitive: bool = False
    threads: int = field(default_factory=lambda: Config.THREADS)

    def __post_init__(self):
        if isinstance(self.comparability, dict):
            try:
                self.comparability = ComparabilityConfig(**self.comparability)
            except TypeError as e:
                raise ConfigError(f"comparability 配置不合法: {e}") from e
        if isinstance(self.gan, dict):
            self.gan = GanHyperparams.from_dict(self.gan)
        self.regimes = [RegimeConfig.from_dict(r) if isinstance(r, dict) else r for r in self.regimes]
        self.validate()

    def validate(self):
        """计算开始前检查全部配置项"""
        for name in ('schema', 'train_path', 'test_path'):
            path = getattr(self, name)
            if not path or not os.path.exists(path):
                raise ConfigError(f"{name} 指向的文件不存在: {path}")
        if self.antidote_path and not os.path.exists(self.antidote_path):
            raise ConfigError(f"antidote_path 指向的文件不存在: {self.antidote_path}")

        percentages = [self.antidote_percentage] + list(self.tradeoff_percentages)
        if self.antidro_percentage is not None:
            percentages.append(self.antidro_percentage)
        if any(p is None or p < 0 for p in percentages):
            raise ConfigError("解毒数据比例不能为负")
        if not self.seeds:
            raise ConfigError("seeds 不能为空")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds 中有重复值")
        if self.root_seed < 0:
            raise ConfigError("root_seed 必须为非负整数")
        if self.max_sampling_iterations < 1:
            raise ConfigError("max_sampling_iterations 必须为正")
        if self.gmm_max_modes < 1:
            raise ConfigError("gmm_max_modes 必须为正")
        if self.threads < 1:
            raise ConfigError("threads 必须为正")

        names = [r.name for r in self.regimes]
        if len(set(names)) != len(names):
            raise ConfigError(f"训练方式名称重复: {names}")
        for name in self.tradeoff_regimes:
            parts = name.split(':')
            if len(parts) != 2 or parts[1] not in ('anti', 'anti+dis', 'antidro'):
                raise ConfigError(f"权衡曲线项应为 分类器:anti|anti+dis|antidro，实际为: {name}")
            RegimeConfig(parts[1], parts[0])

    def tradeoff_configs(self) -> List[RegimeConfig]:
        """权衡曲线使用的训练方式（沿用 regimes 中同名项的分类器超参数）"""
        by_name = {r.name: r for r in self.regimes}
        result = []
        for name in self.tradeoff_regimes:
            classifier, regime = name.split(':')
            base = by_name.get(name)
            if base is not None:
                result.append(replace(base, antidote_percentage=None))
            else:
                result.append(RegimeConfig(regime, classifier))
        return result

    @property
    def regime_antidro_percentage(self) -> float:
        return self.antidote_percentage if self.antidro_percentage is None else self.antidro_percentage

    def output(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    @property
    def resolved_bundle_path(self) -> str:
        return self.bundle_path or self.output('generator.afgb')

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       threads: Optional[int] = None) -> 'ExperimentConfig':
        """命令行参数覆盖文件中的值"""
        changes = {}
        if seed is not None:
            changes['root_seed'] = seed
        if out is not None:
            changes['output_dir'] = out
        if threads is not None:
            changes['threads'] = threads
        return replace(self, **changes) if changes else self

    def to_dict(self) -> Dict:
        return {
            'config_version': CONFIG_VERSION,
            'schema': self.schema,
            'train_path': self.train_path,
            'test_path': self.test_path,
            'comparability': self.comparability.to_dict(),
            'gan': self.gan.to_dict(),
            'regimes': [r.to_dict() for r in self.regimes],
            'antidote_percentage': self.antidote_percentage,
            'antidro_percentage': self.antidro_percentage,
            'tradeoff_percentages': list(self.tradeoff_percentages),
            'tradeoff_regimes': list(self.tradeoff_regimes),
            'seeds': list(self.seeds),
            'root_seed': self.root_seed,
            'output_dir': self.output_dir,
            'bundle_path': self.bundle_path,
            'antidote_path': self.antidote_path,
            'max_sampling_iterations': self.max_sampling_iterations,
            'gmm_max_modes': self.gmm_max_modes,
            'require_requested_sensitive': self.require_requested_sensitive,
            'threads': self.threads,
        }

    @classmethod
    def from_dict(cls, data: Dict, base_dir: str = '.') -> 'ExperimentConfig':
        """
        由字典构造配置

        Args:
            data: 配置内容
            base_dir: 相对路径的基准目录（配置文件所在目录）

        Returns:
            ExperimentConfig: 已校验的配置
        """
        data = dict(data)
        version = data.pop('config_version', None)
        if version != CONFIG_VERSION:
            raise ConfigError(f"不支持的配置版本: {version}（应为 {CONFIG_VERSION}）")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"未知的配置项: {', '.join(sorted(unknown))}")
        for name in ('schema', 'train_path', 'test_path'):
            if name not in data:
                raise ConfigError(f"缺少配置项: {name}")

        data['schema'] = resolve_path(data['schema'], base_dir)
        for name in ('train_path', 'test_path'):
            data[name] = resolve_path(data[name], Config.DATA_DIR or base_dir)
        for name in ('output_dir', 'bundle_path', 'antidote_path'):
            if data.get(name):
                data[name] = resolve_path(data[name], base_dir)
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"配置不合法: {e}") from e

    @classmethod
    def from_json(cls, path: str) -> 'ExperimentConfig':
        if not os.path.exists(path):
            raise ConfigError(f"配置文件不存在: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"配置文件不是合法的 JSON: {e}") from e
        return cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


def resolve_path(path: str, base_dir: str) -> str:
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base_dir, path))

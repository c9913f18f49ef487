"""
核心模块包
"""

from .data_processor import DataProcessor, EncodedDataset, FeatureSchema, RawTable, load_dataset
from .gmm_encoder import ColumnGMM, GMMEncoder, fit_gmm
from .comparability import ComparabilityConfig, PairSet, mine_pairs
from .nn_core import Network, Tensor, grad_check
from .antidote_generator import AntidoteSet, AntidoteTrainer, GanHyperparams, post_filter, sample_raw
from .fair_trainer import ClassifierModel, FairTrainer, RegimeConfig
from .metrics_calculator import FairnessReport, MetricsCalculator
from .export_generator import ArtifactBundle, ExportGenerator
from .chart_generator import ChartGenerator
from .report_generator import ExperimentRunner

__all__ = [
    'DataProcessor',
    'EncodedDataset',
    'FeatureSchema',
    'RawTable',
    'load_dataset',
    'ColumnGMM',
    'GMMEncoder',
    'fit_gmm',
    'ComparabilityConfig',
    'PairSet',
    'mine_pairs',
    'Network',
    'Tensor',
    'grad_check',
    'AntidoteSet',
    'AntidoteTrainer',
    'GanHyperparams',
    'post_filter',
    'sample_raw',
    'ClassifierModel',
    'FairTrainer',
    'RegimeConfig',
    'FairnessReport',
    'MetricsCalculator',
    'ArtifactBundle',
    'ExportGenerator',
    'ChartGenerator',
    'ExperimentRunner',
]

"""
实验图表生成模块
生成器收敛曲线（各特征组可比较率）与效用/公平权衡曲线
"""

import logging
import os
from typing import Dict, List, Optional

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams['axes.unicode_minus'] = False


class ChartGenerator:
    """实验图表生成器"""

    def __init__(self, output_dir: str = "outputs"):
        """
        初始化图表生成器

        Args:
            output_dir: 图片存储目录
        """
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

        self.color_palette = [
            '#3b82f6',  # 蓝色
            '#8b5cf6',  # 紫色
            '#06b6d4',  # 青色
            '#10b981',  # 绿色
            '#f59e0b',  # 橙色
            '#ef4444',  # 红色
        ]
        self.group_labels = {
            'sensitive': 'sensitive',
            'discrete': 'discrete',
            'continuous': 'continuous',
            'all': 'all features',
        }

    def _save(self, fig, name: str) -> Optional[str]:
        path = os.path.join(self.output_dir, name)
        try:
            fig.savefig(path, dpi=200, bbox_inches='tight', facecolor='white')
            logger.info(f"✓ 已生成图表 {path}")
            return path
        except Exception as e:
            logger.error(f"✗ 图表保存失败 {name}: {str(e)}")
            return None
        finally:
            plt.close(fig)

    def plot_trace(self, trace: pd.DataFrame, name: str = 'generator_trace.png') -> Optional[str]:
        """
        生成器收敛曲线：每轮各特征组的可比较率

        Args:
            trace: 逐轮记录（epoch 与 sensitive/discrete/continuous/all 列）
            name: 文件名

        Returns:
            Optional[str]: 图片路径，失败时为 None
        """
        if trace.empty:
            logger.warning("⚠ 收敛记录为空，跳过绘图")
            return None
        fig, ax = plt.subplots(figsize=(8, 5))
        for color, (col, label) in zip(self.color_palette, self.group_labels.items()):
            ax.plot(trace['epoch'], trace[col], label=label, color=color, linewidth=2)
        ax.set_xlabel('epoch')
        ax.set_ylabel('comparability ratio')
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, color='#f1f5f9')
        ax.legend(loc='lower right')
        return self._save(fig, name)

    def plot_tradeoff(self, sweep: pd.DataFrame, name: str = 'tradeoff.png') -> Optional[str]:
        """
        效用/公平权衡：每个训练方式一条曲线，横轴 ROC，纵轴 Pos./Neg. Comp. Mean（误差棒为标准差）

        Args:
            sweep: 权衡表（regime、percentage、roc、pos_mean、neg_mean 及 *_var 列）
            name: 文件名

        Returns:
            Optional[str]: 图片路径，失败时为 None
        """
        sweep = sweep[sweep['status'] == 'ok'] if 'status' in sweep.columns else sweep
        if sweep.empty:
            logger.warning("⚠ 权衡表为空，跳过绘图")
            return None
        fig, axes = plt.subplots(1, 2, figsize=(12, 5))
        panels: List[Dict] = [
            {'key': 'pos_mean', 'title': 'Pos. Comp.'},
            {'key': 'neg_mean', 'title': 'Neg. Comp.'},
        ]
        for ax, panel in zip(axes, panels):
            key = panel['key']
            for color, (regime, group) in zip(self.color_palette, sweep.groupby('regime', sort=True)):
                group = group.sort_values('percentage')
                yerr = group[f'{key}_var'].clip(lower=0) ** 0.5 if f'{key}_var' in group else None
                xerr = group['roc_var'].clip(lower=0) ** 0.5 if 'roc_var' in group else None
                ax.errorbar(group['roc'], group[key], xerr=xerr, yerr=yerr, label=regime, color=color,
                            marker='o', capsize=3)
                for _, row in group.iterrows():
                    ax.annotate(f"{row['percentage']:g}%", (row['roc'], row[key]), fontsize=8,
                                textcoords='offset points', xytext=(4, 4))
            ax.set_xlabel('ROC AUC')
            ax.set_ylabel(f"{panel['title']} Mean")
            ax.set_title(panel['title'])
            ax.grid(True, color='#f1f5f9')
            ax.legend()
        return self._save(fig, name)

"""
fairgen 命令行入口
pairs / train-generator / sample / experiment / tradeoff / encode
"""

import logging
import sys
from functools import wraps

import click

from config import Config, ExperimentConfig
from modules.errors import ConfigError
from modules.report_generator import ExperimentRunner

logger = logging.getLogger('fairgen')

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def setup_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else getattr(logging, str(Config.LOG_LEVEL).upper(), logging.INFO)
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s',
                        stream=sys.stderr, force=True)


# 错误处理装饰器：配置错误退出码 1，其他失败退出码 2
def handle_errors(f):
    @wraps(f)
    def decorated_function(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return f(*args, **kwargs)
        except ConfigError as e:
            logger.error(f"✗ 配置错误: {str(e)}")
            ctx.exit(EXIT_CONFIG)
        except click.exceptions.Exit:
            raise
        except Exception as e:
            logger.error(f"✗ 运行失败: {str(e)}")
            logger.debug("详细错误", exc_info=True)
            ctx.exit(EXIT_RUNTIME)
    return decorated_function


def build_runner(ctx: click.Context) -> ExperimentRunner:
    """读取配置文件并应用命令行覆盖"""
    opts = ctx.obj
    if not opts.get('config'):
        raise ConfigError("缺少 --config 参数")
    cfg = ExperimentConfig.from_json(opts['config']).with_overrides(
        seed=opts.get('seed'), out=opts.get('out'), threads=opts.get('threads'))
    Config.init_app(cfg.output_dir)
    return ExperimentRunner(cfg)


# ========== 命令组 ==========

@click.group()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='实验配置文件（JSON）')
@click.option('--seed', type=click.IntRange(min=0), default=None, help='根种子，覆盖配置中的 root_seed')
@click.option('--threads', type=click.IntRange(min=1), default=None, help='并行数，覆盖配置中的 threads')
@click.option('--out', type=click.Path(file_okay=False), default=None, help='输出目录，覆盖配置中的 output_dir')
@click.option('--verbose', '-v', is_flag=True, help='输出调试日志')
@click.pass_context
def cli(ctx, config_path, seed, threads, out, verbose):
    """个体公平：可比较样本对、解毒数据生成与公平训练实验"""
    setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj.update({'config': config_path, 'seed': seed, 'threads': threads, 'out': out})


@cli.command('pairs')
@click.pass_context
@handle_errors
def pairs_command(ctx):
    """挖掘训练集与测试集上的可比较样本对"""
    table = build_runner(ctx).run_pairs()
    click.echo(table.to_string(index=False))


@cli.command('train-generator')
@click.pass_context
@handle_errors
def train_generator_command(ctx):
    """训练生成器并写出模型包与收敛记录"""
    runner = build_runner(ctx)
    _, digest = runner.run_train_generator()
    click.echo(f"✓ 模型包: {runner.config.resolved_bundle_path}")
    click.echo(f"  sha256: {digest}")


@cli.command('sample')
@click.option('--percentage', type=click.FloatRange(min=0), default=None,
              help='目标解毒数据比例（%），默认取配置中的 antidote_percentage')
@click.pass_context
@handle_errors
def sample_command(ctx, percentage):
    """用已训练的生成器采样并过滤解毒数据"""
    runner = build_runner(ctx)
    antidote = runner.run_sample(percentage)
    click.echo(f"✓ 解毒数据 {len(antidote)} 行 → {runner.config.output('antidote.csv')}")


@cli.command('experiment')
@click.pass_context
@handle_errors
def experiment_command(ctx):
    """运行全部训练方式 × 种子并输出汇总表"""
    table = build_runner(ctx).run_experiment()
    click.echo(table.to_string(index=False))


@cli.command('tradeoff')
@click.option('--percentage', '-p', 'percentages', type=click.FloatRange(min=0), multiple=True,
              help='解毒数据比例，可重复；默认取配置中的 tradeoff_percentages')
@click.pass_context
@handle_errors
def tradeoff_command(ctx, percentages):
    """不同解毒数据比例下的效用/公平权衡"""
    sweep = build_runner(ctx).run_tradeoff(list(percentages) or None)
    click.echo(sweep.to_string(index=False))


@cli.command('encode')
@click.pass_context
@handle_errors
def encode_command(ctx):
    """把编码后的训练集与测试集写成二进制文件"""
    paths = build_runner(ctx).run_encode()
    for split, path in paths.items():
        click.echo(f"✓ {split}: {path}")


if __name__ == '__main__':
    cli()

"""
异常定义模块
统一的错误类型，CLI 依据类型映射退出码
"""


class FairGenError(Exception):
    """所有业务错误的基类"""


class ConfigError(FairGenError):
    """配置或数据结构定义不合法（退出码 1）"""


class SchemaMismatchError(ConfigError):
    """数据文件与字段定义不一致"""


class ContractViolationError(FairGenError):
    """调用方违反了输入约定（形状、one-hot 等）"""


class NonFiniteError(FairGenError):
    """计算中出现 NaN 或 Inf"""

    def __init__(self, message: str, diagnostic: str = ''):
        super().__init__(f"{message} {diagnostic}".strip())
        self.diagnostic = diagnostic


class EmptyPairsError(FairGenError):
    """没有可比较样本对，无法估计可比较样本的分布"""


class UndefinedMetricError(FairGenError):
    """指标在当前输入上没有定义（如只有单一类别）"""


class BundleFormatError(FairGenError):
    """模型包文件格式错误（魔数、版本或校验和）"""

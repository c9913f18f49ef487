"""
结果导出模块
原子写入 CSV/JSON/Excel，以及模型包（ArtifactBundle）的保存与读取
"""

import hashlib
import io
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

from .errors import BundleFormatError

logger = logging.getLogger(__name__)

BUNDLE_MAGIC = b'AFGB'
BUNDLE_VERSION = 1
# magic | u16 版本 | u16 保留 | sha256(payload) | u64 payload 长度
_BUNDLE_HEADER = struct.Struct('<4sHH32sQ')


# ========== 原子写入 ==========

def atomic_write_bytes(path: str, data: bytes):
    """先写临时文件再重命名"""
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_csv(frame: pd.DataFrame, path: str):
    """逗号分隔、带表头、UTF-8"""
    text = frame.to_csv(index=False, lineterminator='\n')
    atomic_write_bytes(path, text.encode('utf-8'))


def _to_builtin(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"无法序列化的类型: {type(value).__name__}")


def write_json(data: Dict, path: str):
    text = json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True, default=_to_builtin)
    atomic_write_bytes(path, (text + '\n').encode('utf-8'))


def write_xlsx(sheets: Dict[str, pd.DataFrame], path: str):
    buf = io.BytesIO()
    with pd.ExcelWriter(buf, engine='openpyxl') as writer:
        for name, frame in sheets.items():
            frame.to_excel(writer, sheet_name=name[:31], index=False)
    atomic_write_bytes(path, buf.getvalue())


class ExportGenerator:
    """实验结果导出"""

    def __init__(self, output_dir: str):
        """
        初始化导出器

        Args:
            output_dir: 输出目录
        """
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def export_csv(self, frame: pd.DataFrame, name: str) -> str:
        path = self.path(name)
        write_csv(frame, path)
        logger.info(f"✓ 已写出 {path}（{len(frame)} 行）")
        return path

    def export_json(self, data: Dict, name: str) -> str:
        path = self.path(name)
        write_json(data, path)
        logger.info(f"✓ 已写出 {path}")
        return path

    def export_to_excel(self, sheets: Dict[str, pd.DataFrame], name: str) -> bool:
        """
        导出 Excel 汇总表

        Args:
            sheets: {工作表名: 表格}
            name: 文件名

        Returns:
            bool: 是否成功
        """
        path = self.path(name)
        try:
            write_xlsx(sheets, path)
            logger.info(f"✓ 已写出 {path}")
            return True
        except Exception as e:
            logger.error(f"✗ Excel 导出失败: {str(e)}")
            return False


# ========== 模型包 ==========

@dataclass
class ArtifactBundle:
    """
    模型包：字段定义、缩放统计、各列混合模型、生成器/判别器参数、分类器参数、种子与创建信息

    二进制布局（小端）：
        magic 'AFGB' | u16 版本 | u16 保留 | 32 字节 sha256(payload) | u64 payload 长度 | payload
        payload = u64 头部长度 | 头部 JSON（键排序）| 按头部记录顺序拼接的 float64 数组
    """

    schema: Dict
    processor: Dict = field(default_factory=dict)
    encoder: Dict = field(default_factory=dict)
    gan: Dict = field(default_factory=dict)
    generator: Dict[str, np.ndarray] = field(default_factory=dict)
    discriminator: Dict[str, np.ndarray] = field(default_factory=dict)
    classifiers: Dict[str, Dict] = field(default_factory=dict)
    seeds: Dict = field(default_factory=dict)
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.metadata.setdefault('format_version', BUNDLE_VERSION)

    def _array_groups(self) -> Dict[str, Dict[str, np.ndarray]]:
        groups = {'generator': self.generator, 'discriminator': self.discriminator}
        for name, entry in self.classifiers.items():
            groups[f"classifier:{name}"] = entry.get('arrays', {})
        return groups

    def to_bytes(self) -> bytes:
        arrays, index = [], []
        offset = 0
        for group, values in sorted(self._array_groups().items()):
            for key in sorted(values):
                arr = np.ascontiguousarray(values[key], dtype='<f8')
                index.append({'group': group, 'name': key, 'shape': list(arr.shape), 'offset': offset})
                arrays.append(arr.tobytes())
                offset += arr.nbytes
        header = {
            'schema': self.schema,
            'processor': self.processor,
            'encoder': self.encoder,
            'gan': self.gan,
            'classifiers': {k: {kk: vv for kk, vv in v.items() if kk != 'arrays'}
                            for k, v in self.classifiers.items()},
            'seeds': self.seeds,
            'metadata': self.metadata,
            'arrays': index,
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':'), ensure_ascii=False,
                                  default=_to_builtin).encode('utf-8')
        payload = struct.pack('<Q', len(header_bytes)) + header_bytes + b''.join(arrays)
        digest = hashlib.sha256(payload).digest()
        return _BUNDLE_HEADER.pack(BUNDLE_MAGIC, BUNDLE_VERSION, 0, digest, len(payload)) + payload

    @classmethod
    def from_bytes(cls, raw: bytes) -> 'ArtifactBundle':
        if len(raw) < _BUNDLE_HEADER.size:
            raise BundleFormatError("模型包文件过短")
        magic, version, _, digest, length = _BUNDLE_HEADER.unpack_from(raw, 0)
        if magic != BUNDLE_MAGIC:
            raise BundleFormatError(f"模型包魔数错误: {magic!r}")
        if version != BUNDLE_VERSION:
            raise BundleFormatError(f"不支持的模型包版本: {version}")
        payload = raw[_BUNDLE_HEADER.size:]
        if len(payload) != length:
            raise BundleFormatError("模型包长度不一致")
        if hashlib.sha256(payload).digest() != digest:
            raise BundleFormatError("模型包校验和不匹配")

        (header_len,) = struct.unpack_from('<Q', payload, 0)
        try:
            header = json.loads(payload[8:8 + header_len].decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise BundleFormatError(f"模型包头部解析失败: {e}") from e
        data_start = 8 + header_len

        groups: Dict[str, Dict[str, np.ndarray]] = {}
        for item in header['arrays']:
            count = int(np.prod(item['shape'])) if item['shape'] else 1
            arr = np.frombuffer(payload, dtype='<f8', count=count, offset=data_start + item['offset'])
            groups.setdefault(item['group'], {})[item['name']] = arr.reshape(item['shape']).astype(np.float64)

        classifiers = {}
        for name, entry in header['classifiers'].items():
            classifiers[name] = dict(entry, arrays=groups.get(f"classifier:{name}", {}))
        return cls(
            schema=header['schema'],
            processor=header['processor'],
            encoder=header['encoder'],
            gan=header['gan'],
            generator=groups.get('generator', {}),
            discriminator=groups.get('discriminator', {}),
            classifiers=classifiers,
            seeds=header['seeds'],
            metadata=header['metadata'],
        )

    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def save_bundle(bundle: ArtifactBundle, path: str) -> str:
    """写出模型包，返回文件的 sha256"""
    data = bundle.to_bytes()
    atomic_write_bytes(path, data)
    logger.info(f"✓ 模型包已保存: {path}")
    return hashlib.sha256(data).hexdigest()


def load_bundle(path: str) -> ArtifactBundle:
    if not os.path.exists(path):
        raise BundleFormatError(f"模型包不存在: {path}")
    with open(path, 'rb') as f:
        return ArtifactBundle.from_bytes(f.read())


# ========== 模型包 ↔ 对象 ==========

def generator_bundle(processor, trainer_or_parts, seeds: Optional[Dict] = None,
                     metadata: Optional[Dict] = None) -> ArtifactBundle:
    """
    由训练结果组装模型包

    Args:
        processor: 已拟合的 DataProcessor
        trainer_or_parts: (生成器, 判别器) 二元组
        seeds: 种子记录
        metadata: 附加信息
    """
    gen, disc = trainer_or_parts
    return ArtifactBundle(
        schema=processor.schema.to_dict(),
        processor=processor.state_dict(),
        encoder=gen.encoder.state_dict(),
        gan={'hp': gen.hp.to_dict(), 'sensitive_widths': gen.sensitive_widths},
        generator=gen.network.state_dict(),
        discriminator=disc.network.state_dict(),
        seeds=seeds or {},
        metadata=dict(metadata or {}),
    )


def processor_from_bundle(bundle: ArtifactBundle):
    from .data_processor import DataProcessor, FeatureSchema
    return DataProcessor(FeatureSchema.from_dict(bundle.schema)).load_state_dict(bundle.processor)


def generator_from_bundle(bundle: ArtifactBundle):
    """由模型包重建生成器与判别器"""
    from .antidote_generator import DiscriminatorNet, GanHyperparams, GeneratorNet
    from .gmm_encoder import GMMEncoder

    if not bundle.generator:
        raise BundleFormatError("模型包中没有生成器参数")
    encoder = GMMEncoder.from_state_dict(bundle.encoder)
    hp = GanHyperparams.from_dict(bundle.gan['hp'])
    gen = GeneratorNet(encoder, bundle.gan['sensitive_widths'], hp)
    gen.network.load_state_dict(bundle.generator)
    disc = DiscriminatorNet(encoder.width, hp)
    if bundle.discriminator:
        disc.network.load_state_dict(bundle.discriminator)
    return gen, disc


def classifier_entry(model, regime_config) -> Dict:
    """分类器写入模型包的条目"""
    return {
        'kind': model.kind,
        'dis': model.dis,
        'metadata': model.metadata,
        'config': regime_config.to_dict(),
        'standardizer': {k: np.asarray(v).tolist() for k, v in model.standardizer.state_dict().items()},
        'arrays': model.state_dict(),
    }


def classifier_from_entry(entry: Dict):
    from .data_processor import Standardizer
    from .fair_trainer import ClassifierModel, RegimeConfig, nn_spec
    from .nn_core import Network

    cfg = RegimeConfig.from_dict(entry['config'])
    arrays = entry['arrays']
    standardizer = Standardizer.from_state_dict(entry['standardizer'])
    if entry['kind'] == 'logreg':
        model = ClassifierModel('logreg', {'coef': arrays['coef'], 'intercept': arrays['intercept']},
                                metadata=entry['metadata'])
    else:
        net = Network(nn_spec(len(entry['standardizer']['mean']), cfg.nn))
        net.load_state_dict(arrays)
        model = ClassifierModel('nn', {}, metadata=entry['metadata'], network=net)
    return model.with_view(standardizer, entry['dis'])

"""
导出与模型包测试
"""

import json

import numpy as np
import pandas as pd
import pytest

from modules.errors import BundleFormatError
from modules.export_generator import (ArtifactBundle, ExportGenerator, classifier_entry, classifier_from_entry,
                                      load_bundle, processor_from_bundle, save_bundle, write_json)
from modules.fair_trainer import RegimeConfig, train_base


def _bundle(schema):
    return ArtifactBundle(
        schema=schema.to_dict(),
        processor={'data_min': [0.0, 0.0], 'data_max': [10.0, 1.0]},
        generator={'param:w': np.arange(6, dtype=float).reshape(2, 3), 'param:b': np.array([0.5])},
        seeds={'root_seed': 3},
        metadata={'command': 'test'},
    )


def test_bundle_bytes_are_stable(schema, tmp_path):
    first = str(tmp_path / 'a.afgb')
    second = str(tmp_path / 'b.afgb')
    digest = save_bundle(_bundle(schema), first)
    save_bundle(load_bundle(first), second)
    with open(first, 'rb') as f1, open(second, 'rb') as f2:
        assert f1.read() == f2.read()
    assert digest == _bundle(schema).checksum()

    loaded = load_bundle(first)
    assert np.array_equal(loaded.generator['param:w'], np.arange(6, dtype=float).reshape(2, 3))
    assert loaded.metadata['format_version'] == 1


def test_bundle_rejects_corruption(schema, tmp_path):
    raw = bytearray(_bundle(schema).to_bytes())
    with pytest.raises(BundleFormatError):
        ArtifactBundle.from_bytes(b'XXXX' + bytes(raw[4:]))
    raw[-1] ^= 0xFF
    with pytest.raises(BundleFormatError):
        ArtifactBundle.from_bytes(bytes(raw))
    with pytest.raises(BundleFormatError):
        ArtifactBundle.from_bytes(b'AFGB')
    with pytest.raises(BundleFormatError):
        load_bundle(str(tmp_path / 'missing.afgb'))


def test_processor_from_bundle(schema, processor):
    bundle = ArtifactBundle(schema=schema.to_dict(), processor=processor.state_dict())
    restored = processor_from_bundle(bundle)
    assert restored.state_dict() == processor.state_dict()


def test_classifier_entry_round_trip(schema, train_ds, test_ds, tmp_path):
    for classifier in ('logreg', 'nn'):
        cfg = RegimeConfig('dis', classifier, nn={'hidden': [4, 4], 'iterations': 20, 'batch_size': 32})
        model = train_base(train_ds, cfg, seed=0, dis=True)
        bundle = ArtifactBundle(schema=schema.to_dict(), classifiers={cfg.name: classifier_entry(model, cfg)})
        path = str(tmp_path / f'{classifier}.afgb')
        save_bundle(bundle, path)
        restored = classifier_from_entry(load_bundle(path).classifiers[cfg.name])
        assert restored.dis
        assert np.allclose(restored.score_dataset(test_ds), model.score_dataset(test_ds))


def test_write_json_handles_numpy(tmp_path):
    path = str(tmp_path / 'out.json')
    write_json({'b': np.float64(1.5), 'a': np.arange(3), 'c': np.int64(2)}, path)
    with open(path, encoding='utf-8') as f:
        assert json.load(f) == {'a': [0, 1, 2], 'b': 1.5, 'c': 2}


def test_exporter_files(tmp_path):
    exporter = ExportGenerator(str(tmp_path / 'out'))
    frame = pd.DataFrame({'metric': ['roc'], 'mean': [0.8]})
    path = exporter.export_csv(frame, 'table.csv')
    assert pd.read_csv(path).equals(frame)
    assert exporter.export_to_excel({'table': frame}, 'table.xlsx')
    assert pd.read_excel(exporter.path('table.xlsx'), sheet_name='table').equals(frame)

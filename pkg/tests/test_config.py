import json
import math
import pytest
from pydantic import ValidationError

from logvec.config import EngineConfig, load_config, save_config
from logvec.models import rules


def test_defaults_come_from_rules():
    config = EngineConfig()
    assert config.segments.seal_rows == rules.SEAL_ROWS
    assert config.log.tick_interval_ms == rules.TICK_INTERVAL_VIRTUAL_MS
    assert config.consistency.default_tau_ms == rules.DEFAULT_TAU_MS
    assert config.index.rebuild_threshold == rules.REBUILD_THRESHOLD
    assert config.bucket.cap_bytes == 4096
    assert config.coordination.autoscale_low_ms == 100.0
    assert config.coordination.autoscale_high_ms == 150.0
    assert math.isinf(config.checkpoint.expiration_ms)


def test_partial_file_keeps_other_defaults(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"segments": {"seal_rows": 128}, "index": {"kind": "hnsw"}}), encoding="utf-8")
    config = load_config(p)
    assert config.segments.seal_rows == 128
    assert config.index.kind == "hnsw"
    assert config.segments.slice_rows == rules.SLICE_ROWS


def test_save_and_load_roundtrip(tmp_path):
    config = EngineConfig()
    config.nodes.query_nodes = 3
    config.log.tick_interval_ms = 20
    p = tmp_path / "config.json"
    save_config(p, config)
    assert load_config(p) == config


def test_unknown_key_is_rejected(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"segments": {"seal_rowz": 1}}), encoding="utf-8")
    with pytest.raises(ValidationError):
        load_config(p)


def test_negative_tau_is_rejected():
    with pytest.raises(ValidationError):
        EngineConfig.model_validate({"consistency": {"default_tau_ms": -1}})


def test_nprobe_above_nlist_is_rejected():
    with pytest.raises(ValidationError):
        EngineConfig.model_validate({"index": {"nlist": 4, "nprobe": 8}})


def test_inverted_autoscale_band_is_rejected():
    with pytest.raises(ValidationError):
        EngineConfig.model_validate({"coordination": {"autoscale_low_ms": 200, "autoscale_high_ms": 100}})


def test_assignment_is_validated():
    config = EngineConfig()
    with pytest.raises(ValidationError):
        config.segments.seal_rows = 0

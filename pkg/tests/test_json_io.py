import json
import pytest

from logvec.storage.json_io import canonical_json, load_json, parse_json, save_json


def test_save_and_load_roundtrip(tmp_path):
    data = {"segments": {"seal_rows": 512}, "log": {"tick_interval_ms": 20}, "names": ["a", "b"]}
    p = tmp_path / "config.json"
    save_json(p, data)
    assert load_json(p) == data


def test_save_creates_parent_directories(tmp_path):
    p = tmp_path / "nested" / "dir" / "config.json"
    save_json(p, {"a": 1})
    assert load_json(p) == {"a": 1}


def test_save_rejects_non_json_extension(tmp_path):
    with pytest.raises(ValueError):
        save_json(tmp_path / "config.txt", {"a": 1})


def test_load_rejects_non_json_extension(tmp_path):
    p = tmp_path / "config.txt"
    p.write_text("{}", encoding="utf-8")
    with pytest.raises(ValueError):
        load_json(p)


def test_load_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_json(tmp_path / "missing.json")


def test_load_invalid_json_raises(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not valid json", encoding="utf-8")
    with pytest.raises(ValueError):
        load_json(p)


def test_load_non_dict_root_raises(tmp_path):
    p = tmp_path / "list.json"
    p.write_text(json.dumps([1, 2, 3]), encoding="utf-8")
    with pytest.raises(ValueError):
        load_json(p)


def test_save_requires_data(tmp_path):
    with pytest.raises(ValueError):
        save_json(tmp_path / "config.json", None)


def test_save_requires_mapping(tmp_path):
    with pytest.raises(TypeError):
        save_json(tmp_path / "config.json", [1, 2, 3])


def test_save_is_atomic_tmp_removed_on_error(tmp_path):
    p = tmp_path / "config.json"
    tmp = tmp_path / "config.json.tmp"

    with pytest.raises(TypeError):
        save_json(p, {"bad": {1, 2, 3}})

    assert not tmp.exists()
    assert not p.exists()


def test_canonical_json_is_key_order_independent():
    a = canonical_json({"b": 1, "a": [1, 2], "c": {"y": 1, "x": 2}})
    b = canonical_json({"c": {"x": 2, "y": 1}, "a": [1, 2], "b": 1})
    assert a == b
    assert b" " not in a
    assert parse_json(a) == {"a": [1, 2], "b": 1, "c": {"x": 2, "y": 1}}

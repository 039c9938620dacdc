"""Run manifest reading and writing."""

import hashlib
import json

import pytest

from protoadapt.errors import FormatError
from protoadapt.manifest import RunManifest, file_digest, load_manifest, write_manifest


def test_round_trip(tmp_path):
    manifest = RunManifest(
        command="finetune",
        config={"lr": 0.002, "epochs": 40},
        seeds={"seed": 0},
        inputs={"pack": "abc123"},
    )
    path = tmp_path / "manifest.json"
    write_manifest(path, manifest)
    loaded = load_manifest(path)
    assert loaded.command == "finetune"
    assert loaded.config == {"lr": 0.002, "epochs": 40}
    assert loaded.seeds == {"seed": 0}
    assert loaded.inputs == {"pack": "abc123"}
    assert loaded.artifact_version == manifest.artifact_version


def test_serialization_is_stable(tmp_path):
    manifest = RunManifest(command="eval", config={"b": 1, "a": 2}, seeds={"seed": 1})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_manifest(a, manifest)
    write_manifest(b, manifest)
    assert a.read_bytes() == b.read_bytes()
    payload = json.loads(a.read_text())
    assert list(payload) == sorted(payload)


def test_file_digest_matches_sha256(tmp_path):
    path = tmp_path / "input.bin"
    path.write_bytes(b"hello world")
    assert file_digest(path) == hashlib.sha256(b"hello world").hexdigest()


def test_invalid_json_rejected(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(FormatError, match="JSON"):
        load_manifest(path)


def test_missing_keys_rejected(tmp_path):
    path = tmp_path / "partial.json"
    path.write_text(json.dumps({"command": "eval", "config": {}}))
    with pytest.raises(FormatError, match="seeds"):
        load_manifest(path)


def test_missing_optional_fields_default(tmp_path):
    path = tmp_path / "minimal.json"
    path.write_text(json.dumps({"command": "eval", "config": {}, "seeds": {}}))
    loaded = load_manifest(path)
    assert loaded.inputs == {}
    assert loaded.artifact_version == "unknown"

import json

import numpy as np
import pytest

from weather_experts.checkpoint import (
    CheckpointError,
    UnsupportedVersionError,
    load_checkpoint,
    save_checkpoint,
    verify_checkpoint,
)
from weather_experts.harness import RunConfig, run_continual
from weather_experts.tensor import digest


@pytest.fixture(scope="module")
def saved(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    cfg = RunConfig(task_sequence=["haze", "snow"], steps_per_task=3, image_size=16, eval_samples=2,
                    replay_size=4, signature_batches=4, use_valve=False).validate()
    run = run_continual(cfg, root / "run")
    return run, root / "run" / "checkpoint"


def _files(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def _copy(src, dst):
    for name, data in _files(src).items():
        (dst / name).parent.mkdir(parents=True, exist_ok=True)
        (dst / name).write_bytes(data)
    return dst


def test_layout(saved):
    _, path = saved
    meta = json.loads((path / "meta.json").read_text())
    assert meta["format_version"] == 1
    assert set(meta) >= {"config", "backbone", "library", "valve", "tasks", "matrix", "counters", "rng", "blobs"}
    for name in meta["blobs"]:
        assert (path / "tensors" / f"{name}.dlt").read_bytes()[:4] == b"DLT1"


def test_round_trip_state(saved):
    run, path = saved
    back = load_checkpoint(path)
    assert digest(back.backbone.parameters()) == digest(run.backbone.parameters()) == back.backbone_digest
    assert back.library.metadata() == run.library.metadata()
    assert back.valve.to_dict() == run.valve.to_dict()
    assert back.matrix.rows() == run.matrix.rows()
    assert back.global_step == run.global_step
    for a, b in zip(run.library.experts, back.library.experts):
        for x, y in zip(a.adapter.parameters(), b.adapter.parameters()):
            assert x.data.tobytes() == y.data.tobytes()


def test_restored_outputs_identical(saved):
    run, path = saved
    back = load_checkpoint(path)
    x = np.random.default_rng(3).uniform(size=(2, 3, 16, 16))
    from weather_experts.tensor import Tensor
    for task in run.tasks:
        a = run.model.predict(Tensor(x), task.expert_ids, task.weights).data
        b = back.model.predict(Tensor(x), task.expert_ids, task.weights).data
        assert a.tobytes() == b.tobytes()


def test_save_load_save_is_byte_identical(saved, tmp_path):
    _, path = saved
    save_checkpoint(load_checkpoint(path), tmp_path / "again")
    assert _files(tmp_path / "again") == _files(path)


def test_verify_reports(saved):
    _, path = saved
    report = verify_checkpoint(path)
    assert report == {"tasks": 2, "experts": 2, "frozen_ok": True, "outputs_match": True}


def test_truncated_blob(saved, tmp_path):
    path = _copy(saved[1], tmp_path / "c")
    meta = json.loads((path / "meta.json").read_text())
    name = sorted(meta["blobs"])[0]
    blob = path / "tensors" / f"{name}.dlt"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="digest mismatch"):
        load_checkpoint(path)


def test_truncated_blob_with_matching_digest(saved, tmp_path):
    import hashlib
    path = _copy(saved[1], tmp_path / "c")
    meta = json.loads((path / "meta.json").read_text())
    name = sorted(meta["blobs"])[0]
    blob = path / "tensors" / f"{name}.dlt"
    data = blob.read_bytes()[:-8]
    blob.write_bytes(data)
    meta["blobs"][name] = hashlib.sha256(data).hexdigest()
    (path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(CheckpointError, match="corrupt"):
        load_checkpoint(path)


def test_missing_blob(saved, tmp_path):
    path = _copy(saved[1], tmp_path / "c")
    next((path / "tensors").iterdir()).unlink()
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_version_mismatch(saved, tmp_path):
    path = _copy(saved[1], tmp_path / "c")
    meta = json.loads((path / "meta.json").read_text())
    meta["format_version"] = 2
    (path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(UnsupportedVersionError):
        load_checkpoint(path)


def test_frozen_parameter_tamper_detected(saved, tmp_path):
    path = _copy(saved[1], tmp_path / "c")
    meta = json.loads((path / "meta.json").read_text())
    meta["library"]["experts"][0]["digest"] = "0" * 64
    (path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(CheckpointError):
        verify_checkpoint(path)


def test_missing_directory(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nothing")


def test_garbled_metadata(saved, tmp_path):
    path = _copy(saved[1], tmp_path / "c")
    (path / "meta.json").write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)

"""Checkpoint directories: ``meta.json`` plus one DLT1 blob per tensor.

Blobs are listed in the metadata with their SHA-256, and everything is
written in a fixed order, so saving a loaded checkpoint reproduces the
original bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .library import ExpertLibrary
from .metrics import ForgettingMatrix
from .tensor import Tensor, dlt_bytes, from_dlt_bytes
from .valve import JudgingValve, TaskVector

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


def _probe(run):
    """First validation batch of task 0 and the model's unclamped output for it."""
    if not run.tasks:
        return None, None
    task = run.tasks[0]
    x, _ = run.batch(task.family, list(run._val_indices(task.episode))[: run.config.batch_size])
    return x.data, run.model.predict(x, task.expert_ids, task.weights).data


def save_checkpoint(run, path) -> Path:
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    blobs: dict[str, np.ndarray] = {}
    for name, arr in run.backbone.state_arrays().items():
        blobs[f"backbone.{name}"] = arr
    for name, arr in run.projector.state_arrays().items():
        blobs[f"projector.{name}"] = arr
    for rec in run.library.experts:
        for name, arr in rec.adapter.state_arrays().items():
            blobs[f"expert.{rec.id}.{name}"] = arr
    for task in run.tasks:
        blobs[f"task.{task.task_id}.signature_x"] = task.signature_x
        blobs[f"task.{task.task_id}.replay_x"] = task.replay_x
        blobs[f"task.{task.task_id}.replay_gt"] = task.replay_gt
    probe_x, probe_y = _probe(run)
    if probe_x is not None:
        blobs["probe.input"] = probe_x
        blobs["probe.output"] = probe_y

    hashes = {}
    for name in sorted(blobs):
        data = dlt_bytes(blobs[name])
        (path / "tensors" / f"{name}.dlt").write_bytes(data)
        hashes[name] = hashlib.sha256(data).hexdigest()

    meta = {
        "format_version": FORMAT_VERSION,
        "config": run.config.to_dict(),
        "backbone": {"trainable": run.backbone.trainable, "digest": run.backbone_digest},
        "library": run.library.metadata(),
        "valve": run.valve.to_dict(),
        "tasks": [t.meta() for t in run.tasks],
        "matrix": [list(r) for r in run.matrix.rows()],
        "counters": {"global_step": run.global_step, "episodes_done": run.episodes_done},
        "rng": {"kind": "philox-counter", "init_seed": run.config.seed, "data_seed": run.config.data_seed},
        "blobs": hashes,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def _read_blobs(path: Path, hashes: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, expected in sorted(hashes.items()):
        f = path / "tensors" / f"{name}.dlt"
        try:
            data = f.read_bytes()
        except OSError as exc:
            raise CheckpointError(f"missing tensor blob {name}") from exc
        if hashlib.sha256(data).hexdigest() != expected:
            raise CheckpointError(f"digest mismatch for tensor blob {name}")
        try:
            out[name] = from_dlt_bytes(data)
        except ValueError as exc:
            raise CheckpointError(f"corrupt tensor blob {name}: {exc}") from exc
    return out


def load_checkpoint(path):
    """Rebuild a ``ContinualRun`` from a checkpoint directory."""
    from .harness import ContinualRun, RunConfig, TaskEpisode

    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"no checkpoint at {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint metadata: {exc}") from exc
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version!r} (expected {FORMAT_VERSION})")
    try:
        blobs = _read_blobs(path, meta["blobs"])
        run = ContinualRun(RunConfig.from_dict(meta["config"]))
        run.backbone.load_arrays({k.split(".", 1)[1]: v for k, v in blobs.items() if k.startswith("backbone.")})
        run.backbone.set_trainable(meta["backbone"]["trainable"])
        run.backbone_digest = meta["backbone"]["digest"]
        run.projector.load_arrays({k.split(".", 1)[1]: v for k, v in blobs.items() if k.startswith("projector.")})
        run.projector.set_trainable(False)
        expert_arrays = {}
        for k, v in blobs.items():
            if k.startswith("expert."):
                _, eid, pname = k.split(".")
                expert_arrays.setdefault(int(eid), {})[pname] = v
        run.library = ExpertLibrary.from_metadata(meta["library"], expert_arrays)
        run.model.library = run.library
        run.valve = JudgingValve.from_dict(meta["valve"])
        for tm in meta["tasks"]:
            tid = tm["task_id"]
            task = TaskEpisode(tid, tm["family"], tm["episode"], TaskVector(tuple(tm["vector"])),
                               list(tm["expert_ids"]), list(tm["weights"]),
                               blobs[f"task.{tid}.signature_x"], blobs[f"task.{tid}.replay_x"],
                               blobs[f"task.{tid}.replay_gt"], tm["input_psnr"], tm["input_ssim"],
                               [tuple(e) for e in tm["eval_history"]])
            run.tasks.append(task)
        run.matrix = ForgettingMatrix()
        for i, j, p, s in meta["matrix"]:
            run.matrix.set(int(i), int(j), p, s)
        run.global_step = meta["counters"]["global_step"]
        run.episodes_done = meta["counters"]["episodes_done"]
    except CheckpointError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    run._probe = (blobs.get("probe.input"), blobs.get("probe.output"))
    return run


def verify_checkpoint(path) -> dict:
    """Reload, rerun the stored probe batch and compare outputs bit for bit."""
    run = load_checkpoint(path)
    probe_x, probe_y = run._probe
    report = {"tasks": len(run.tasks), "experts": len(run.library), "frozen_ok": not run.library.verify_frozen()}
    if probe_x is None:
        report["outputs_match"] = None
    else:
        task = run.tasks[0]
        y = run.model.predict(Tensor(probe_x), task.expert_ids, task.weights).data
        report["outputs_match"] = y.tobytes() == probe_y.tobytes()
    if report["frozen_ok"] is False or report["outputs_match"] is False:
        raise CheckpointError(f"checkpoint verification failed: {report}")
    return report

"""Continual-learning driver: task stream, training, evaluation, sweeps."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .backbone import MiniBackbone
from .library import ExpertLibrary, ema_update, fuse_outputs, fusion_weights, FREEZE_POLICIES
from .losses import (
    LOSS_TERMS,
    Projector,
    adapter_regularization,
    contrast_loss,
    diversity_loss,
    l1,
    projection_loss,
    total_loss,
)
from .metrics import ForgettingMatrix, psnr, ssim
from .synth import Family, make_batch
from .tensor import Adam, NonFiniteError, Tensor, digest
from .valve import JudgingValve, TaskVector, extract_task_vector, mean_task_vector

log = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "task", "l_sw", "l_c", "l_kd", "l_p", "l_reg", "l_div", "beta", "total"]
EVAL_COLUMNS = ["after_task", "eval_task", "psnr", "ssim", "n_samples"]
TASK_COLUMNS = ["task", "family", "episode", "input_psnr", "input_ssim", "end_psnr", "end_ssim", "experts", "weights"]
EPISODE_COLUMNS = ["episode", "family", "decision", "task", "matched_family", "similarity", "threshold",
                   "psnr", "ssim"]

# index layout inside one episode's sample space
EPISODE_STRIDE = 10 ** 7
REPLAY_OFFSET = 8 * 10 ** 6
VAL_OFFSET = 9 * 10 ** 6

TASK_ORDERS = [
    ("rain", "snow", "haze"),
    ("rain", "haze", "snow"),
    ("haze", "snow", "rain"),
    ("haze", "rain", "snow"),
    ("snow", "rain", "haze"),
    ("snow", "haze", "rain"),
]
EXPERT_COUNTS = [15, 20, 25, 30, 35]
# cumulative loss rows: C5 reconstruction only ... C9 everything
LOSS_ROWS = [
    ("C5", {"l_kd": False, "l_p": False, "l_reg": False, "l_c": False}),
    ("C6", {"l_kd": True, "l_p": False, "l_reg": False, "l_c": False}),
    ("C7", {"l_kd": True, "l_p": True, "l_reg": False, "l_c": False}),
    ("C8", {"l_kd": True, "l_p": True, "l_reg": True, "l_c": False}),
    ("C9", {"l_kd": True, "l_p": True, "l_reg": True, "l_c": True}),
]
COMPONENT_ROWS = [
    ("baseline", None),
    ("backbone", {"use_valve": False, "use_library": False}),
    ("backbone+valve", {"use_valve": True, "use_library": False}),
    ("backbone+valve+library", {"use_valve": True, "use_library": True}),
]
SWEEP_AXES = ("experts", "losses", "components", "order")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task_sequence: list = field(default_factory=lambda: ["haze", "rain", "snow"])
    steps_per_task: int = 2000
    batch_size: int = 2
    image_size: int = 32
    width: int = 16
    reduction: int = 4
    capacity: int = 30
    k_transfer: int = 3
    k_new: int = 1
    freeze_policy: str = "blending"
    threshold_update_mode: str = "delta"
    signature_normalization: str = "registry_z"
    signature_batches: int = 32
    l_c: bool = True
    l_kd: bool = True
    l_p: bool = True
    l_reg: bool = True
    l_div: bool = True
    beta1: float = 0.1
    beta2: float = 0.1
    lr: float = 1e-3
    seed: int = 0
    data_seed: int = 0
    replay_size: int = 16
    eval_samples: int = 16
    use_valve: bool = True
    use_library: bool = True
    update_frozen_scores: bool = True
    refresh_old_scores: bool = False
    output_dir: Optional[str] = None

    def __post_init__(self):
        if _families_ok(self.task_sequence):
            self.task_sequence = [Family(f).value for f in self.task_sequence]

    def validate(self) -> "RunConfig":
        if not self.task_sequence:
            raise ConfigError("task_sequence must not be empty")
        if not _families_ok(self.task_sequence):
            raise ConfigError(f"unknown family in task_sequence {self.task_sequence}")
        for name in ("steps_per_task", "batch_size", "image_size", "width", "reduction", "capacity",
                     "k_transfer", "k_new", "signature_batches", "replay_size", "eval_samples"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("beta1", "beta2", "lr"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{name} must be positive, got {v!r}")
        for name in ("seed", "data_seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.image_size < 11:
            raise ConfigError("image_size must be at least 11 for SSIM")
        if self.width < 4 or self.width % 4:
            raise ConfigError("width must be a positive multiple of 4")
        if self.freeze_policy not in FREEZE_POLICIES:
            raise ConfigError(f"freeze_policy must be one of {FREEZE_POLICIES}")
        if self.threshold_update_mode not in ("delta", "literal"):
            raise ConfigError("threshold_update_mode must be 'delta' or 'literal'")
        if self.signature_normalization not in ("registry_z", "raw"):
            raise ConfigError("signature_normalization must be 'registry_z' or 'raw'")
        for name in LOSS_TERMS + ("use_valve", "use_library", "update_frozen_scores", "refresh_old_scores"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a boolean")
        return self

    @property
    def toggles(self) -> dict:
        return {name: getattr(self, name) for name in LOSS_TERMS}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()


def _families_ok(seq) -> bool:
    try:
        [Family(f) for f in seq]
    except (ValueError, TypeError):
        return False
    return True


@dataclass
class TaskEpisode:
    task_id: int
    family: str
    episode: int
    vector: TaskVector
    expert_ids: list
    weights: list
    signature_x: np.ndarray
    replay_x: np.ndarray
    replay_gt: np.ndarray
    input_psnr: float = 0.0
    input_ssim: float = 0.0
    eval_history: list = field(default_factory=list)

    def meta(self) -> dict:
        return {
            "task_id": self.task_id, "family": self.family, "episode": self.episode,
            "vector": list(self.vector.stats), "expert_ids": list(self.expert_ids),
            "weights": [float(w) for w in self.weights], "input_psnr": self.input_psnr,
            "input_ssim": self.input_ssim, "eval_history": [list(e) for e in self.eval_history],
        }


class RestorationModel:
    """Backbone plus expert library; a task route is (expert ids, fusion weights)."""

    def __init__(self, backbone: MiniBackbone, library: ExpertLibrary):
        self.backbone = backbone
        self.library = library

    def features(self, x: Tensor, expert_ids, weights) -> Tensor:
        f = self.backbone.encode(x)
        if not expert_ids:
            return f
        return fuse_outputs([self.library.get(i).adapter(f) for i in expert_ids], weights)

    def predict(self, x: Tensor, expert_ids, weights) -> Tensor:
        return self.backbone.decode(self.features(x, expert_ids, weights), x)

    def snapshot(self) -> "RestorationModel":
        bb = self.backbone.clone()
        bb.set_trainable(False)
        lib = ExpertLibrary.__new__(ExpertLibrary)
        lib.__dict__.update({k: v for k, v in self.library.__dict__.items() if k != "experts"})
        lib.experts = [dataclasses.replace(r, adapter=r.adapter.clone(), owner_tasks=set(r.owner_tasks))
                       for r in self.library.experts]
        return RestorationModel(bb, lib)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


class ContinualRun:
    """All mutable state of one continual-learning run."""

    def __init__(self, config: RunConfig):
        self.config = config.validate()
        c = self.config
        self.backbone = MiniBackbone(c.width, seed=c.seed)
        # frozen copy of the initial encoder: feature extractor for contrastive terms
        self.phi_net = self.backbone.clone()
        self.phi_net.set_trainable(False)
        self.projector = Projector(c.width, seed=[c.seed, 2])
        self.library = ExpertLibrary(c.width, c.reduction, c.capacity, c.k_transfer, c.k_new,
                                     freeze_policy=c.freeze_policy, seed=c.seed)
        self.model = RestorationModel(self.backbone, self.library)
        self.valve = JudgingValve(c.signature_normalization, c.threshold_update_mode)
        self.tasks: list[TaskEpisode] = []
        self.matrix = ForgettingMatrix()
        self.backbone_digest: Optional[str] = None
        self.loss_rows: list[dict] = []
        self.eval_rows: list[dict] = []
        self.episode_rows: list[dict] = []
        self.global_step = 0
        self.episodes_done = 0

    # -- data ---------------------------------------------------------------------
    def batch(self, family: str, indices) -> tuple[Tensor, Tensor]:
        x, gt = make_batch(family, self.config.data_seed, indices, self.config.image_size)
        return Tensor(x), Tensor(gt)

    def _train_indices(self, episode: int, step: int) -> range:
        b = self.config.batch_size
        start = episode * EPISODE_STRIDE + step * b
        return range(start, start + b)

    def _val_indices(self, episode: int) -> range:
        base = episode * EPISODE_STRIDE + VAL_OFFSET
        return range(base, base + self.config.eval_samples)

    def phi(self, image: Tensor) -> Tensor:
        return self.phi_net.encode(image)

    # -- signatures -----------------------------------------------------------
    def batch_signatures(self, sig_x: np.ndarray) -> list[TaskVector]:
        """One task vector per batch, taken from the frozen initial encoder.

        Using the untrained copy keeps every stored signature comparable with
        later candidates no matter how the live backbone has been trained.
        """
        b = self.config.batch_size
        return [extract_task_vector(self.phi_net.encode(Tensor(sig_x[i:i + b])))
                for i in range(0, len(sig_x), b)]

    def signature(self, sig_x: np.ndarray) -> TaskVector:
        return mean_task_vector(self.batch_signatures(sig_x))

    # -- evaluation -----------------------------------------------------------
    def evaluate(self, task: TaskEpisode, indices, family: Optional[str] = None) -> tuple[float, float, float, float]:
        """Mean PSNR/SSIM of the task's route and of the raw input over ``indices``."""
        family = family or task.family
        b = self.config.batch_size
        idx = list(indices)
        ps, ss, ip, isim = [], [], [], []
        for i in range(0, len(idx), b):
            x, gt = self.batch(family, idx[i:i + b])
            pred = np.clip(self.model.predict(x, task.expert_ids, task.weights).data, 0.0, 1.0)
            for k in range(pred.shape[0]):
                ps.append(psnr(pred[k], gt.data[k]))
                ss.append(ssim(pred[k], gt.data[k]))
                ip.append(psnr(x.data[k], gt.data[k]))
                isim.append(ssim(x.data[k], gt.data[k]))
        return float(np.mean(ps)), float(np.mean(ss)), float(np.mean(ip)), float(np.mean(isim))

    # -- episodes -------------------------------------------------------------------
    def run_episode(self, family: str) -> dict:
        c = self.config
        episode = self.episodes_done
        self.episodes_done += 1
        first = episode * EPISODE_STRIDE
        sig_x, _ = make_batch(family, c.data_seed, range(first, first + c.signature_batches * c.batch_size),
                              c.image_size)
        candidate = self.signature(sig_x)

        if c.use_valve:
            decision, report = self.valve.classify(candidate)
            is_new, matched = decision.is_new, decision.task_id
            similarity = decision.similarity
        else:
            is_new, matched, similarity = True, None, float("nan")

        if not is_new:
            task = self.tasks[matched]
            if c.use_library:
                self.library.handle_task(False, matched)
            p, s, _, _ = self.evaluate(task, self._val_indices(episode), family)
            if c.refresh_old_scores and c.use_library:
                self._refresh_scores(task, family, episode)
            row = {"episode": episode, "family": family, "decision": "old", "task": matched,
                   "matched_family": task.family, "similarity": similarity,
                   "threshold": self.valve.state.current, "psnr": p, "ssim": s}
            self.episode_rows.append(row)
            log.info("episode %d (%s): old task %d, psnr %.2f", episode, family, matched, p)
            return row

        task_id = len(self.tasks)
        task = self.train_task(task_id, family, episode, sig_x)
        p, s = self.matrix.get(task_id, task_id)
        row = {"episode": episode, "family": family, "decision": "new", "task": task_id,
               "matched_family": "", "similarity": similarity, "threshold": self.valve.state.current,
               "psnr": p, "ssim": s}
        self.episode_rows.append(row)
        return row

    def _refresh_scores(self, task: TaskEpisode, family: str, episode: int) -> None:
        x, gt = self.batch(family, list(self._val_indices(episode))[: self.config.batch_size])
        f = self.backbone.encode(x)
        for eid in task.expert_ids:
            rec = self.library.get(eid)
            loss = l1(self.backbone.decode(rec.adapter(f), x), gt).item()
            rec.performance = 0.9 * rec.performance + 0.1 / (loss + 1e-6)

    def _backbone_trainable(self, task_id: int) -> bool:
        c = self.config
        return (not c.use_library) or c.freeze_policy == "all_trainable" or task_id == 0

    def train_task(self, task_id: int, family: str, episode: int, sig_x: np.ndarray) -> TaskEpisode:
        c = self.config
        teacher = self.model.snapshot() if self.tasks else None
        if c.use_library:
            active = self.library.handle_task(True, task_id)
            expert_ids = active.expert_ids
        else:
            expert_ids = []
        train_backbone = self._backbone_trainable(task_id)
        self.backbone.set_trainable(train_backbone)

        experts = [self.library.get(i) for i in expert_ids]
        trainable = [r for r in experts if not r.frozen]
        params = list(self.backbone.parameters()) if train_backbone else []
        for r in trainable:
            params += r.adapter.parameters()
        use_teacher = teacher is not None and (c.l_kd or c.l_p)
        if use_teacher and c.l_p and (params or trainable):
            self.projector.set_trainable(True)
            params += self.projector.parameters()
        else:
            self.projector.set_trainable(False)

        replay = self._teacher_cache(teacher) if use_teacher and params else None
        opt = Adam(params, lr=c.lr, total_steps=c.steps_per_task) if params else None
        t0 = time.perf_counter()
        if opt is not None:
            for step in range(c.steps_per_task):
                self._train_step(task_id, episode, step, family, experts, opt, replay)
        log.info("task %d (%s) trained %d steps in %.1fs", task_id, family, c.steps_per_task if opt else 0,
                 time.perf_counter() - t0)

        return self._finish_task(task_id, family, episode, sig_x, expert_ids)

    def _teacher_cache(self, teacher: RestorationModel) -> list:
        """Teacher outputs for every replayed sample, fixed for the whole task."""
        cache = []
        for old in self.tasks:
            x = Tensor(old.replay_x)
            f_old = teacher.features(x, old.expert_ids, old.weights)
            pred_old = teacher.backbone.decode(f_old, x)
            cache.append({
                "x": old.replay_x, "f_old": f_old.data, "pred_old": pred_old.data,
                "phi_pred_old": self.phi(pred_old).data, "phi_x": self.phi(x).data,
            })
        return cache

    def _train_step(self, task_id, episode, step, family, experts, opt, replay) -> None:
        c = self.config
        x, gt = self.batch(family, self._train_indices(episode, step))
        f = self.backbone.encode(x)
        if experts:
            outs = [r.adapter(f) for r in experts]
            if len(outs) == 1:
                solo_losses = None
                weights = np.ones(1)
                y = outs[0]
                pred = self.backbone.decode(y, x)
            else:
                need_graph = c.l_div
                solo_losses = []
                for o in outs:
                    src = o if need_graph else Tensor(o.data)
                    solo_losses.append(l1(self.backbone.decode(src, x), gt))
                weights = fusion_weights([s.item() for s in solo_losses])
                y = fuse_outputs(outs, weights)
                pred = self.backbone.decode(y, x)
        else:
            weights, solo_losses, y = np.ones(0), None, f
            pred = self.backbone.decode(f, x)

        l_sw0 = l1(pred, gt)
        l_c = contrast_loss(pred, gt, x, self.phi) if c.l_c else None

        l_kd0 = l_kd_c = l_p = None
        if replay:
            cache = replay[step % len(replay)]
            n = len(cache["x"])
            sel = [(step * c.batch_size + k) % n for k in range(c.batch_size)]
            xo = Tensor(cache["x"][sel])
            fo = self.backbone.encode(xo)
            y_new = fuse_outputs([r.adapter(fo) for r in experts], weights) if experts else fo
            pred_new = self.backbone.decode(y_new, xo)
            pred_old = Tensor(cache["pred_old"][sel])
            if c.l_kd:
                l_kd0 = l1(pred_old, pred_new)
                if c.l_c:
                    l_kd_c = contrast_loss(pred_new, pred_old, xo, self.phi,
                                           pos_feat=Tensor(cache["phi_pred_old"][sel]),
                                           neg_feat=Tensor(cache["phi_x"][sel]))
            if c.l_p:
                l_p = projection_loss(Tensor(cache["f_old"][sel]), y_new, self.projector)

        trainable = [r.adapter for r in experts if not r.frozen]
        l_reg = adapter_regularization(trainable) if trainable else None
        l_div = diversity_loss(solo_losses) if solo_losses is not None else None

        total, parts = total_loss(l_sw0, l_c, l_kd0, l_kd_c, l_p, l_reg, l_div, step=step,
                                  total_steps=c.steps_per_task, beta1=c.beta1, beta2=c.beta2,
                                  toggles=c.toggles)
        if not math.isfinite(parts.total):
            raise NonFiniteError(f"non-finite loss at task {task_id} step {step}")
        if total.requires_grad:
            total.backward()
            opt.step()
            opt.zero_grad()

        solo_vals = [s.item() for s in solo_losses] if solo_losses is not None else [l_sw0.item()] * len(experts)
        for r, loss in zip(experts, solo_vals):
            if r.frozen and not c.update_frozen_scores:
                r.usage_count += 1
            else:
                ema_update(r, loss)

        self.loss_rows.append({
            "step": self.global_step, "task": task_id, "l_sw": parts.l_sw, "l_c": parts.l_c,
            "l_kd": parts.l_kd, "l_p": parts.l_p, "l_reg": parts.l_reg, "l_div": parts.l_div,
            "beta": parts.beta_dynamic, "total": parts.total,
        })
        self.global_step += 1

    def _route_weights(self, expert_ids, replay_x, replay_gt) -> list:
        if len(expert_ids) <= 1:
            return [1.0] * len(expert_ids)
        x, gt = Tensor(replay_x), Tensor(replay_gt)
        f = self.backbone.encode(x)
        losses = [l1(self.backbone.decode(self.library.get(i).adapter(f), x), gt).item() for i in expert_ids]
        return [float(w) for w in fusion_weights(losses, self.library.tau)]

    def _finish_task(self, task_id, family, episode, sig_x, expert_ids) -> TaskEpisode:
        c = self.config
        base = episode * EPISODE_STRIDE + REPLAY_OFFSET
        replay_x, replay_gt = make_batch(family, c.data_seed, range(base, base + c.replay_size), c.image_size)
        weights = self._route_weights(expert_ids, replay_x, replay_gt)
        if c.use_library:
            self.library.freeze_task_experts(task_id)
        if not self._backbone_trainable(task_id + 1):
            self.backbone.set_trainable(False)
            if self.backbone_digest is None:
                self.backbone_digest = digest(self.backbone.parameters())
        self.projector.set_trainable(False)

        task = TaskEpisode(task_id, family, episode, self.signature(sig_x), list(expert_ids), weights,
                           sig_x, replay_x, replay_gt)
        self.tasks.append(task)
        self.valve.register(task_id, task.vector, self.batch_signatures(sig_x))

        for old in self.tasks:
            p, s, ip, isim = self.evaluate(old, self._val_indices(old.episode))
            if old is task:
                task.input_psnr, task.input_ssim = ip, isim
            old.eval_history.append((task_id, p, s))
            self.matrix.set(task_id, old.task_id, p, s)
            self.eval_rows.append({"after_task": task_id, "eval_task": old.task_id, "psnr": p, "ssim": s,
                                   "n_samples": c.eval_samples})
        log.info("task %d (%s): psnr %.2f dB vs input %.2f dB", task_id, family,
                 *self.matrix.get(task_id, task_id)[:1], task.input_psnr)
        return task

    # -- checks -------------------------------------------------------------------------
    def post_check(self) -> None:
        bad = self.library.verify_frozen()
        if bad:
            raise RuntimeError(f"frozen experts changed: {bad}")
        if self.backbone_digest is not None and digest(self.backbone.parameters()) != self.backbone_digest:
            raise RuntimeError("frozen backbone changed")

    def task_rows(self) -> list[dict]:
        rows = []
        for t in self.tasks:
            p, s = self.matrix.get(t.task_id, t.task_id)
            rows.append({"task": t.task_id, "family": t.family, "episode": t.episode,
                         "input_psnr": t.input_psnr, "input_ssim": t.input_ssim, "end_psnr": p, "end_ssim": s,
                         "experts": " ".join(map(str, t.expert_ids)),
                         "weights": " ".join(repr(float(w)) for w in t.weights)})
        return rows

    def write_logs(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(self.config.to_dict(), indent=1, sort_keys=True) + "\n")
        write_csv(out / "losses.csv", LOSS_COLUMNS, self.loss_rows)
        write_csv(out / "eval.csv", EVAL_COLUMNS, self.eval_rows)
        write_csv(out / "tasks.csv", TASK_COLUMNS, self.task_rows())
        write_csv(out / "episodes.csv", EPISODE_COLUMNS, self.episode_rows)


def run_continual(config: RunConfig, out_dir=None, save_checkpoint: bool = True) -> ContinualRun:
    """Run the whole task sequence; writes logs and a checkpoint when a directory is given."""
    from .checkpoint import save_checkpoint as _save

    run = ContinualRun(config)
    for family in run.config.task_sequence:
        run.run_episode(family)
    run.post_check()
    out = out_dir or run.config.output_dir
    if out is not None:
        out = Path(out)
        run.write_logs(out)
        if save_checkpoint:
            _save(run, out / "checkpoint")
    return run


def _summary(run: ContinualRun) -> dict:
    final = run.matrix.n_tasks - 1
    ps = [run.matrix.get(final, t.task_id)[0] for t in run.tasks]
    ss = [run.matrix.get(final, t.task_id)[1] for t in run.tasks]
    return {"avg_psnr": float(np.mean(ps)), "avg_ssim": float(np.mean(ss)),
            "avg_input_psnr": float(np.mean([t.input_psnr for t in run.tasks])),
            "n_tasks": len(run.tasks), "n_experts": len(run.library)}


def _baseline_summary(config: RunConfig) -> dict:
    """Identity restoration: score the degraded inputs themselves."""
    ps, ss = [], []
    for episode, family in enumerate(config.task_sequence):
        base = episode * EPISODE_STRIDE + VAL_OFFSET
        x, gt = make_batch(family, config.data_seed, range(base, base + config.eval_samples), config.image_size)
        ps.append(np.mean([psnr(a, b) for a, b in zip(x, gt)]))
        ss.append(np.mean([ssim(a, b) for a, b in zip(x, gt)]))
    return {"avg_psnr": float(np.mean(ps)), "avg_ssim": float(np.mean(ss)), "avg_input_psnr": float(np.mean(ps)),
            "n_tasks": len(set(config.task_sequence)), "n_experts": 0}


SWEEP_COLUMNS = ["axis", "value", "avg_psnr", "avg_ssim", "avg_input_psnr", "n_tasks", "n_experts"]


def sweep_cells(config: RunConfig, axis: str) -> list[tuple[str, Optional[RunConfig]]]:
    if axis == "experts":
        return [(str(n), config.replace(capacity=n)) for n in EXPERT_COUNTS]
    if axis == "order":
        return [("-".join(o), config.replace(task_sequence=list(o))) for o in TASK_ORDERS]
    if axis == "losses":
        return [(name, config.replace(**flags)) for name, flags in LOSS_ROWS]
    if axis == "components":
        return [(name, None if flags is None else config.replace(**flags)) for name, flags in COMPONENT_ROWS]
    raise ConfigError(f"invalid sweep axis {axis!r}; choose from {SWEEP_AXES}")


def run_ablation_sweep(config: RunConfig, axis: str, out_dir) -> tuple[Path, list[dict]]:
    cells = sweep_cells(config, axis)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value, cfg in cells:
        if cfg is None:
            summary = _baseline_summary(config)
        else:
            run = run_continual(cfg, out / axis / value, save_checkpoint=False)
            summary = _summary(run)
        rows.append({"axis": axis, "value": value, **summary})
    path = out / f"sweep_{axis}.csv"
    write_csv(path, SWEEP_COLUMNS, rows)
    return path, rows

"""Pool of residual adapter experts with score-based scheduling.

Every expert carries a performance score (an EMA of inverse task loss) and a
usage count. New tasks borrow the Top-K experts by performance/usage score
and get freshly allocated experts of their own; known tasks reuse exactly
the experts they trained with. Finished experts are frozen and their bytes
digested so later training can be checked against them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backbone import ParamModule, he_uniform
from .tensor import Tensor, conv2d, digest, instance_norm, relu

SCORE_EPS = 1e-6
EMA_BETA = 0.9
TEMPERATURE = 0.1
FREEZE_POLICIES = ("all_trainable", "blending", "all_frozen")


class CapacityError(RuntimeError):
    pass


class Adapter(ParamModule):
    """x + up(relu(down(instance_norm(x)))) with 1x1 projections.

    ``up`` starts at zero, so a fresh adapter is an exact identity.
    """

    param_names = ("down_w", "down_b", "up_w", "up_b")

    def __init__(self, width: int = 16, reduction: int = 4, seed=0):
        super().__init__()
        hidden = max(width // reduction, 1)
        rng = np.random.default_rng(seed)
        self.width, self.hidden = width, hidden
        self.params = {
            "down_w": Tensor(he_uniform(rng, (hidden, width, 1, 1)), requires_grad=True),
            "down_b": Tensor(np.zeros(hidden), requires_grad=True),
            "up_w": Tensor(np.zeros((width, hidden, 1, 1)), requires_grad=True),
            "up_b": Tensor(np.zeros(width), requires_grad=True),
        }

    def __call__(self, x: Tensor) -> Tensor:
        p = self.params
        h = relu(conv2d(instance_norm(x), p["down_w"], p["down_b"]))
        return x + conv2d(h, p["up_w"], p["up_b"])

    def projection_weights(self) -> list[Tensor]:
        return [self.params["down_w"], self.params["up_w"]]

    def clone(self) -> "Adapter":
        other = Adapter.__new__(Adapter)
        ParamModule.__init__(other)
        other.width, other.hidden = self.width, self.hidden
        other.params = {k: Tensor(v.data) for k, v in self.params.items()}
        return other


@dataclass
class ExpertRecord:
    id: int
    adapter: Adapter
    performance: float = 0.0
    usage_count: int = 0
    frozen: bool = False
    owner_tasks: set = field(default_factory=set)
    frozen_digest: Optional[str] = None

    def param_digest(self) -> str:
        return digest(self.adapter.parameters())


def expert_score(record: ExpertRecord) -> float:
    """Performance divided by usage: P / (C + 1e-6)."""
    return record.performance / (record.usage_count + SCORE_EPS)


def ema_update(record: ExpertRecord, task_loss: float, allow_frozen: bool = True) -> ExpertRecord:
    if not task_loss > 0 or not np.isfinite(task_loss):
        raise ValueError(f"task loss must be positive and finite, got {task_loss}")
    if record.frozen and not allow_frozen:
        raise RuntimeError(f"expert {record.id} is frozen and score updates are disabled")
    record.performance = EMA_BETA * record.performance + (1.0 - EMA_BETA) * (1.0 / (task_loss + SCORE_EPS))
    record.usage_count += 1
    return record


def fusion_weights(losses: Sequence[float], tau: float = TEMPERATURE) -> np.ndarray:
    """Softmax of -loss/tau, stabilised by subtracting the largest logit."""
    arr = np.asarray(losses, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("fusion weights need at least one loss")
    if not np.all(np.isfinite(arr)):
        raise ValueError("fusion losses must be finite")
    z = -arr / tau
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def fuse_outputs(outputs: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    if len(outputs) != len(weights) or not outputs:
        raise ValueError("need one weight per expert output")
    if abs(float(np.sum(weights)) - 1.0) > 1e-9:
        raise ValueError(f"fusion weights must sum to 1, got {float(np.sum(weights))!r}")
    shape = outputs[0].shape
    for o in outputs:
        if o.shape != shape:
            raise ValueError(f"expert outputs disagree in shape: {o.shape} vs {shape}")
    y = outputs[0] * float(weights[0])
    for o, w in zip(outputs[1:], weights[1:]):
        y = y + o * float(w)
    return y


def fuse(active: Sequence[tuple[ExpertRecord, float]], x: Tensor) -> Tensor:
    """Weighted sum of expert transforms of ``x``; weights are constants."""
    return fuse_outputs([rec.adapter(x) for rec, _ in active], [w for _, w in active])


@dataclass
class ActiveSet:
    expert_ids: list
    transfer_ids: list
    new_ids: list
    is_new_task: bool


class ExpertLibrary:
    def __init__(self, width: int = 16, reduction: int = 4, capacity: int = 30, k_transfer: int = 3,
                 k_new: int = 1, tau: float = TEMPERATURE, freeze_policy: str = "blending", seed: int = 0):
        if freeze_policy not in FREEZE_POLICIES:
            raise ValueError(f"freeze_policy must be one of {FREEZE_POLICIES}, got {freeze_policy!r}")
        self.width, self.reduction = width, reduction
        self.capacity, self.k_transfer, self.k_new = capacity, k_transfer, k_new
        self.tau = tau
        self.freeze_policy = freeze_policy
        self.seed = seed
        self.experts: list[ExpertRecord] = []
        self.next_id = 0

    def __len__(self) -> int:
        return len(self.experts)

    def get(self, expert_id: int) -> ExpertRecord:
        for rec in self.experts:
            if rec.id == expert_id:
                return rec
        raise KeyError(f"no expert with id {expert_id}")

    def allocate(self) -> ExpertRecord:
        if len(self.experts) >= self.capacity:
            raise CapacityError(f"expert capacity exhausted ({self.capacity} experts)")
        eid = self.next_id
        adapter = Adapter(self.width, self.reduction, seed=[self.seed, 7919, eid])
        rec = ExpertRecord(eid, adapter)
        self.experts.append(rec)
        self.next_id += 1
        return rec

    def select_topk(self, k: int) -> list[int]:
        """Ids of the k best-scoring experts; ties go to the lower id."""
        if not 1 <= k <= len(self.experts):
            raise ValueError(f"k={k} outside [1, {len(self.experts)}]")
        ranked = sorted(self.experts, key=lambda r: (-expert_score(r), r.id))
        return [r.id for r in ranked[:k]]

    def owned_by(self, task_id: int) -> list[int]:
        return [r.id for r in self.experts if task_id in r.owner_tasks]

    def _set_frozen(self, rec: ExpertRecord, frozen: bool) -> None:
        rec.frozen = frozen
        rec.adapter.set_trainable(not frozen)

    def handle_task(self, is_new: bool, task_id: int) -> ActiveSet:
        """Build the active set for a task.

        New task: Top-K transfer experts plus ``k_new`` fresh ones, all tagged
        as owned by ``task_id``. Known task: the experts it owns, frozen, with
        one usage tick each.
        """
        if not is_new:
            ids = self.owned_by(task_id)
            if not ids:
                raise KeyError(f"task {task_id} owns no experts")
            for eid in ids:
                rec = self.get(eid)
                if not rec.frozen:
                    self._set_frozen(rec, True)
                    rec.frozen_digest = rec.param_digest()
                rec.usage_count += 1
            return ActiveSet(ids, [], [], False)

        if len(self.experts) + self.k_new > self.capacity:
            raise CapacityError(f"expert capacity exhausted: {len(self.experts)} live, "
                                f"{self.k_new} requested, capacity {self.capacity}")
        transfer = self.select_topk(min(self.k_transfer, len(self.experts))) if self.experts else []
        fresh = [self.allocate() for _ in range(self.k_new)]
        for eid in transfer:
            rec = self.get(eid)
            if self.freeze_policy == "all_trainable":
                self._set_frozen(rec, False)
            rec.owner_tasks.add(task_id)
        for rec in fresh:
            rec.owner_tasks.add(task_id)
            self._set_frozen(rec, self.freeze_policy == "all_frozen")
            if rec.frozen:
                rec.frozen_digest = rec.param_digest()
        return ActiveSet(transfer + [r.id for r in fresh], transfer, [r.id for r in fresh], True)

    def freeze_task_experts(self, task_id: int) -> list[int]:
        ids = self.owned_by(task_id)
        if not ids:
            raise KeyError(f"unknown task id {task_id}")
        for eid in ids:
            rec = self.get(eid)
            if not rec.frozen or rec.frozen_digest is None:
                self._set_frozen(rec, True)
                rec.frozen_digest = rec.param_digest()
        return ids

    def trainable_experts(self, ids: Sequence[int]) -> list[ExpertRecord]:
        return [self.get(i) for i in ids if not self.get(i).frozen]

    def verify_frozen(self) -> list[int]:
        """Ids of frozen experts whose parameters no longer match their digest."""
        return [r.id for r in self.experts if r.frozen and r.frozen_digest != r.param_digest()]

    def metadata(self) -> dict:
        return {
            "width": self.width, "reduction": self.reduction, "capacity": self.capacity,
            "k_transfer": self.k_transfer, "k_new": self.k_new, "tau": self.tau,
            "freeze_policy": self.freeze_policy, "seed": self.seed, "next_id": self.next_id,
            "experts": [
                {"id": r.id, "performance": r.performance, "usage_count": r.usage_count,
                 "frozen": r.frozen, "owner_tasks": sorted(r.owner_tasks), "digest": r.frozen_digest}
                for r in self.experts
            ],
        }

    @classmethod
    def from_metadata(cls, meta: dict, arrays: dict) -> "ExpertLibrary":
        lib = cls(meta["width"], meta["reduction"], meta["capacity"], meta["k_transfer"], meta["k_new"],
                  meta["tau"], meta["freeze_policy"], meta["seed"])
        for em in meta["experts"]:
            adapter = Adapter(lib.width, lib.reduction, seed=[lib.seed, 7919, em["id"]])
            adapter.load_arrays(arrays[em["id"]])
            rec = ExpertRecord(em["id"], adapter, float(em["performance"]), int(em["usage_count"]),
                               bool(em["frozen"]), set(em["owner_tasks"]), em["digest"])
            adapter.set_trainable(not rec.frozen)
            lib.experts.append(rec)
        lib.next_id = meta["next_id"]
        return lib

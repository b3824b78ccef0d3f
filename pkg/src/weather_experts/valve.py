"""Task identification from feature statistics.

A task is summarised by seven order-free statistics of its backbone
features. Incoming tasks are compared with every registered task using a
weighted blend of cosine, euclidean and Pearson similarity, and classified
as new or known through fixed hard bounds plus an adaptive threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor import Tensor

STAT_NAMES = ("mean", "std", "max", "min", "l2_norm", "skewness", "kurtosis")

W_COS, W_EUC, W_PEAR = 0.5, 0.3, 0.2
_DEGENERATE = 1e-12


@dataclass(frozen=True)
class TaskVector:
    stats: tuple[float, ...]

    def __post_init__(self):
        if len(self.stats) != len(STAT_NAMES):
            raise ValueError(f"a task vector has {len(STAT_NAMES)} entries, got {len(self.stats)}")
        if not all(math.isfinite(v) for v in self.stats):
            raise ValueError("task vector entries must be finite")

    def as_array(self) -> np.ndarray:
        return np.array(self.stats, dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "TaskVector":
        return cls(tuple(float(v) for v in np.asarray(arr, dtype=np.float64)))

    def to_dict(self) -> dict:
        return dict(zip(STAT_NAMES, self.stats))


def extract_task_vector(features) -> TaskVector:
    """Population moments of every value in ``features``.

    Skewness and excess kurtosis are defined as 0 for (near) constant input.
    """
    x = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    x = x.reshape(-1)
    if x.size == 0:
        raise ValueError("cannot summarise an empty feature map")
    mu = x.mean()
    xc = x - mu
    var = np.mean(xc * xc)
    sd = math.sqrt(var)
    if sd < _DEGENERATE:
        skew = kurt = 0.0
    else:
        skew = float(np.mean(xc ** 3) / sd ** 3)
        kurt = float(np.mean(xc ** 4) / sd ** 4 - 3.0)
    # float rounding can push the mean a hair outside [min, max] for constant data
    lo, hi = float(x.min()), float(x.max())
    mu = min(max(float(mu), lo), hi)
    return TaskVector((mu, sd, hi, lo, float(np.sqrt(np.dot(x, x))), skew, kurt))


def mean_task_vector(vectors) -> TaskVector:
    arr = np.mean([v.as_array() for v in vectors], axis=0)
    return TaskVector.from_array(arr)


# -- similarity -------------------------------------------------------------------

def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < _DEGENERATE or nb < _DEGENERATE:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def euclidean_similarity(a: np.ndarray, b: np.ndarray) -> float:
    return 1.0 / (1.0 + float(np.linalg.norm(a - b)))


def pearson_similarity(a: np.ndarray, b: np.ndarray) -> float:
    ac, bc = a - a.mean(), b - b.mean()
    na, nb = np.linalg.norm(ac), np.linalg.norm(bc)
    if na < _DEGENERATE or nb < _DEGENERATE:
        return 0.0
    return float(np.clip(np.dot(ac, bc) / (na * nb), -1.0, 1.0))


def blend(s_cos: float, s_euc: float, s_pear: float) -> float:
    return W_COS * s_cos + W_EUC * s_euc + W_PEAR * s_pear


@dataclass(frozen=True)
class SimilarityReport:
    s_cos: float
    s_euc: float
    s_pear: float
    s_sum: float
    best_match_task: Optional[int] = None


def combined_similarity(t1, t2, match: Optional[int] = None) -> SimilarityReport:
    """Compare two task vectors (or already-normalised arrays)."""
    a = t1.as_array() if isinstance(t1, TaskVector) else np.asarray(t1, dtype=np.float64)
    b = t2.as_array() if isinstance(t2, TaskVector) else np.asarray(t2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"task vectors differ in length: {a.shape} vs {b.shape}")
    if a.tobytes() == b.tobytes() and np.linalg.norm(a) >= _DEGENERATE and np.ptp(a) >= _DEGENERATE:
        # exact self-similarity, immune to rounding in the norms
        s_cos = s_pear = 1.0
    else:
        s_cos = cosine_similarity(a, b)
        s_pear = pearson_similarity(a, b)
    s_euc = euclidean_similarity(a, b)
    return SimilarityReport(s_cos, s_euc, s_pear, blend(s_cos, s_euc, s_pear), match)


# -- threshold management ------------------------------------------------------------

@dataclass
class ThresholdState:
    current: float = 0.75
    history: list = field(default_factory=list)
    hard_old: float = 0.85
    hard_new: float = 0.5
    e: float = 0.05
    f: float = 0.05
    lower: float = 0.65
    upper: float = 0.90
    mode: str = "delta"
    min_history: int = 3

    def __post_init__(self):
        if self.mode not in ("delta", "literal"):
            raise ValueError(f"threshold_update_mode must be 'delta' or 'literal', got {self.mode!r}")

    def to_dict(self) -> dict:
        return {"current": self.current, "history": list(self.history), "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdState":
        return cls(current=float(d["current"]), history=[float(v) for v in d["history"]], mode=d["mode"])


def median(values) -> float:
    """Median; even-length input uses the mean of the middle pair."""
    s = sorted(values)
    n = len(s)
    if n == 0:
        raise ValueError("median of an empty sequence")
    mid = n // 2
    return float(s[mid]) if n % 2 else 0.5 * (s[mid - 1] + s[mid])


def population_std(values) -> float:
    arr = np.asarray(values, dtype=np.float64)
    return float(np.sqrt(np.mean((arr - arr.mean()) ** 2)))


def update_threshold(state: ThresholdState) -> ThresholdState:
    """Nudge ``state.current`` towards median - 0.25 * std of the history.

    In ``delta`` mode the displacement from the current threshold is clipped to
    [-f, f]; ``literal`` mode clips the target value itself. Either way the
    step is scaled by ``e`` and the result clamped to [lower, upper].
    """
    if len(state.history) <= state.min_history:
        raise ValueError(f"threshold update needs more than {state.min_history} samples, "
                         f"have {len(state.history)}")
    target = median(state.history) - 0.25 * population_std(state.history)
    raw = target - state.current if state.mode == "delta" else target
    delta = min(max(raw, -state.f), state.f)
    state.current = min(max(state.current + state.e * delta, state.lower), state.upper)
    return state


@dataclass(frozen=True)
class Decision:
    is_new: bool
    task_id: Optional[int]
    similarity: float
    ambiguous: bool = False

    @property
    def label(self) -> str:
        return "new" if self.is_new else "old"


def decide(s_sum: float, state: ThresholdState) -> tuple[bool, bool]:
    """Pure decision rule: returns (is_old, in_ambiguous_band)."""
    if s_sum > state.hard_old:
        return True, False
    if s_sum < state.hard_new:
        return False, False
    return s_sum >= state.current, True


def classify_task(report: Optional[SimilarityReport], state: ThresholdState, registered_count: int) -> Decision:
    """Classify a task and record ambiguous-band similarities in ``state``."""
    if registered_count == 0:
        return Decision(True, None, 1.0)
    if report is None:
        raise ValueError("a similarity report is required once tasks are registered")
    is_old, ambiguous = decide(report.s_sum, state)
    if is_old and report.best_match_task is None:
        raise RuntimeError("old-task decision without a matching task id")
    if ambiguous:
        state.history.append(float(report.s_sum))
        if len(state.history) > state.min_history:
            update_threshold(state)
    return Decision(not is_old, report.best_match_task if is_old else None, report.s_sum, ambiguous)


# -- registry ---------------------------------------------------------------------------

class JudgingValve:
    """Registry of task vectors plus the adaptive threshold.

    ``registry_z`` normalisation centres every dimension on the mean of the
    registered vectors (the candidate excluded) and divides by the registry's
    spread. When tasks are registered together with the per-batch vectors
    their signature was averaged from, that spread also includes the pooled
    batch-to-batch variance, so dimensions in which tasks differ less than
    sampling noise do not dominate the comparison. With a single registered
    task the centred registry collapses to zero, and the degenerate-operand
    rule makes every candidate look new.
    """

    def __init__(self, normalization: str = "registry_z", threshold_mode: str = "delta"):
        if normalization not in ("registry_z", "raw"):
            raise ValueError(f"signature_normalization must be 'registry_z' or 'raw', got {normalization!r}")
        self.normalization = normalization
        self.state = ThresholdState(mode=threshold_mode)
        self.registry: dict[int, TaskVector] = {}
        self.batch_vectors: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.registry)

    def register(self, task_id: int, vector: TaskVector, batch_vectors=None) -> None:
        self.registry[task_id] = vector
        if batch_vectors is None:
            self.batch_vectors.pop(task_id, None)
        else:
            arr = np.array([v.as_array() if isinstance(v, TaskVector) else v for v in batch_vectors],
                           dtype=np.float64).reshape(-1, len(STAT_NAMES))
            self.batch_vectors[task_id] = arr

    def within_task_variance(self) -> np.ndarray:
        """Pooled per-dimension variance of batch vectors around their own task's mean."""
        devs = [b - b.mean(axis=0) for b in self.batch_vectors.values() if len(b) > 1]
        if not devs:
            return np.zeros(len(STAT_NAMES))
        return np.mean(np.concatenate(devs) ** 2, axis=0)

    def _normalise(self, candidate: TaskVector) -> tuple[np.ndarray, dict[int, np.ndarray]]:
        ids = sorted(self.registry)
        reg = np.array([self.registry[i].as_array() for i in ids])
        cand = candidate.as_array()
        if self.normalization == "raw":
            return cand, dict(zip(ids, reg))
        centre = reg.mean(axis=0)
        scale = np.sqrt(reg.var(axis=0) + self.within_task_variance())
        scale = np.maximum(scale, 1e-6 * np.maximum(np.abs(reg).max(axis=0), 1.0))
        return (cand - centre) / scale, {i: (r - centre) / scale for i, r in zip(ids, reg)}

    def compare(self, candidate: TaskVector) -> Optional[SimilarityReport]:
        """Best match over all registered tasks; ties go to the lower task id."""
        if not self.registry:
            return None
        cand, reg = self._normalise(candidate)
        best = None
        for task_id in sorted(reg):
            rep = combined_similarity(cand, reg[task_id], match=task_id)
            if best is None or rep.s_sum > best.s_sum:
                best = rep
        return best

    def classify(self, candidate: TaskVector) -> tuple[Decision, Optional[SimilarityReport]]:
        report = self.compare(candidate)
        return classify_task(report, self.state, len(self.registry)), report

    def to_dict(self) -> dict:
        return {
            "normalization": self.normalization,
            "threshold": self.state.to_dict(),
            "registry": {str(k): list(v.stats) for k, v in sorted(self.registry.items())},
            "batch_vectors": {str(k): v.tolist() for k, v in sorted(self.batch_vectors.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JudgingValve":
        valve = cls(d["normalization"], d["threshold"]["mode"])
        valve.state = ThresholdState.from_dict(d["threshold"])
        valve.registry = {int(k): TaskVector(tuple(float(x) for x in v)) for k, v in d["registry"].items()}
        valve.batch_vectors = {int(k): np.array(v, dtype=np.float64).reshape(-1, len(STAT_NAMES))
                               for k, v in d.get("batch_vectors", {}).items()}
        return valve

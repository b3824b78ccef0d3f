"""Procedural clean/degraded image pairs for haze, rain and snow.

Every random draw comes from a Philox generator keyed by (seed, stream,
index), so any sample can be regenerated on its own, in any order, in any
process.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .backbone import MiniBackbone
from .tensor import Tensor
from .valve import TaskVector, combined_similarity, extract_task_vector, mean_task_vector


class Family(str, Enum):
    HAZE = "haze"
    RAIN = "rain"
    SNOW = "snow"
    HAZE_RAIN = "haze_rain"


_STREAM = {"clean": 0, Family.HAZE: 1, Family.RAIN: 2, Family.SNOW: 3, Family.HAZE_RAIN: 4}

HAZE_T = (0.4, 0.8)
HAZE_A = (0.7, 1.0)
RAIN_COUNT = (20, 60)
RAIN_ANGLE_DEG = (60.0, 80.0)
RAIN_LENGTH = (6.0, 14.0)
RAIN_INTENSITY = (0.2, 0.5)
SNOW_COUNT = (30, 80)
SNOW_RADIUS = (1.0, 3.0)
SNOW_INTENSITY = (0.4, 0.8)


def sample_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, index])))


@dataclass(frozen=True)
class DegradationSpec:
    family: Family
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))


@dataclass
class SamplePair:
    clean: np.ndarray
    degraded: np.ndarray
    family: Family
    index: int


def generate_clean(seed: int, index: int, size: int = 32) -> np.ndarray:
    """3 x size x size image: 2-4 blended linear colour ramps plus 1-3 solid shapes."""
    if size < 8:
        raise ValueError("image size must be at least 8")
    rng = sample_rng(seed, _STREAM["clean"], index)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    img = None
    for layer in range(rng.integers(2, 5)):
        theta = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)) / math.sqrt(0.5) + 0.5
        ramp = np.clip(ramp, 0.0, 1.0)
        c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
        grad = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp
        if img is None:
            img = grad
        else:
            alpha = rng.uniform(0.3, 0.7)
            img = (1 - alpha) * img + alpha * grad
    for _ in range(rng.integers(1, 4)):
        color = rng.uniform(0, 1, 3)
        cx, cy = rng.uniform(0, size, 2)
        r = rng.uniform(size / 10, size / 4)
        if rng.uniform() < 0.5:
            mask = (xx * (size - 1) - cx) ** 2 + (yy * (size - 1) - cy) ** 2 <= r * r
        else:
            mask = (np.abs(xx * (size - 1) - cx) <= r) & (np.abs(yy * (size - 1) - cy) <= r * rng.uniform(0.5, 1.0))
        img = np.where(mask[None], color[:, None, None], img)
    return np.clip(img, 0.0, 1.0)


def haze(clean: np.ndarray, t: float, airlight: float) -> np.ndarray:
    """Atmospheric scattering: I = J t + A (1 - t)."""
    return clean * t + airlight * (1.0 - t)


def _blur3(mask: np.ndarray) -> np.ndarray:
    k = np.array([0.25, 0.5, 0.25])
    p = np.pad(mask, 1, mode="constant")
    p = k[0] * p[:-2, :] + k[1] * p[1:-1, :] + k[2] * p[2:, :]
    return k[0] * p[:, :-2] + k[1] * p[:, 1:-1] + k[2] * p[:, 2:]


def rain_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    count = int(rng.integers(RAIN_COUNT[0], RAIN_COUNT[1] + 1))
    angle = np.deg2rad(rng.uniform(*RAIN_ANGLE_DEG))
    intensity = rng.uniform(*RAIN_INTENSITY)
    dx, dy = np.cos(angle), np.sin(angle)
    mask = np.zeros((size, size))
    for _ in range(count):
        x0, y0 = rng.uniform(-4, size), rng.uniform(-8, size)
        length = rng.uniform(*RAIN_LENGTH)
        ts = np.linspace(0.0, length, int(length * 2) + 1)
        px = np.rint(x0 + ts * dx).astype(int)
        py = np.rint(y0 + ts * dy).astype(int)
        ok = (px >= 0) & (px < size) & (py >= 0) & (py < size)
        mask[py[ok], px[ok]] = 1.0
    return intensity * np.minimum(_blur3(mask) / 0.5, 1.0)


def snow_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    count = int(rng.integers(SNOW_COUNT[0], SNOW_COUNT[1] + 1))
    yy, xx = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size))
    for _ in range(count):
        cx, cy = rng.uniform(0, size, 2)
        radius = rng.uniform(*SNOW_RADIUS)
        level = rng.uniform(*SNOW_INTENSITY)
        d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
        mask = np.maximum(mask, level * np.clip(1.0 - d / radius, 0.0, 1.0))
    return mask


def degrade(clean: np.ndarray, spec: DegradationSpec, index: int, clamp: bool = True) -> np.ndarray:
    """Apply the family's degradation with parameters drawn for ``index``."""
    family = spec.family
    rng = sample_rng(spec.seed, _STREAM[family], index)
    size = clean.shape[-1]
    if family == Family.HAZE:
        out = haze(clean, rng.uniform(*HAZE_T), rng.uniform(*HAZE_A))
    elif family == Family.RAIN:
        out = clean + rain_mask(rng, size)[None]
    elif family == Family.SNOW:
        out = clean + snow_mask(rng, size)[None]
    else:
        rained = clean + rain_mask(rng, size)[None]
        out = haze(np.clip(rained, 0, 1), rng.uniform(*HAZE_T), rng.uniform(*HAZE_A))
    return np.clip(out, 0.0, 1.0) if clamp else out


def make_pair(family, seed: int, index: int, size: int = 32) -> SamplePair:
    family = Family(family)
    clean = generate_clean(seed, index, size)
    return SamplePair(clean, degrade(clean, DegradationSpec(family, seed), index), family, index)


def make_batch(family, seed: int, indices, size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """(degraded, clean) arrays of shape N x 3 x size x size."""
    pairs = [make_pair(family, seed, int(i), size) for i in indices]
    return np.stack([p.degraded for p in pairs]), np.stack([p.clean for p in pairs])


# -- separation report ------------------------------------------------------------

def family_statistics_separation(n_samples: int = 32, seed: int = 0, backbone_seed: int = 0,
                                 width: int = 16, size: int = 32, batch_size: int = 2,
                                 families=(Family.HAZE, Family.RAIN, Family.SNOW)) -> dict:
    """Per-family mean task vectors from an untrained encoder, and their similarities.

    Each family's samples are split in half; ``intra`` holds the similarity
    between the halves, ``inter`` the similarity between family means. All
    vectors are standardised against the spread of the family means.
    """
    if n_samples < 32:
        raise ValueError("need at least 32 samples per family")
    families = [Family(f) for f in families]
    enc = MiniBackbone(width, seed=backbone_seed)
    halves: dict[Family, list[TaskVector]] = {}
    for fam in families:
        vecs = []
        for start in range(0, n_samples - n_samples % batch_size, batch_size):
            x, _ = make_batch(fam, seed, range(start, start + batch_size), size)
            vecs.append(extract_task_vector(enc.encode(Tensor(x))))
        half = len(vecs) // 2
        halves[fam] = [mean_task_vector(vecs[:half]), mean_task_vector(vecs[half:])]
    means = {f: mean_task_vector(h) for f, h in halves.items()}
    reg = np.array([means[f].as_array() for f in families])
    centre, scale = reg.mean(axis=0), np.maximum(reg.std(axis=0), 1e-12)

    def z(v: TaskVector) -> np.ndarray:
        return (v.as_array() - centre) / scale

    intra = {f.value: combined_similarity(z(h[0]), z(h[1])).s_sum for f, h in halves.items()}
    inter = {}
    for i, a in enumerate(families):
        for b in families[i + 1:]:
            inter[f"{a.value}-{b.value}"] = combined_similarity(z(means[a]), z(means[b])).s_sum
    return {
        "n_samples": n_samples,
        "mean_vectors": {f.value: list(m.stats) for f, m in means.items()},
        "intra": intra,
        "inter": inter,
        "separated": min(intra.values()) > max(inter.values()),
    }


# -- dumping ----------------------------------------------------------------------------

def to_ppm(image: np.ndarray) -> bytes:
    """Binary P6 with maxval 255, quantised by rounding half up."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    q = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    h, w = q.shape[1:]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.transpose(1, 2, 0).tobytes()


def dump_samples(family, n: int, out_dir, seed: int = 0, size: int = 32) -> Path:
    family = Family(family)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        pair = make_pair(family, seed, i, size)
        names = {}
        for kind, img in (("clean", pair.clean), ("degraded", pair.degraded)):
            name = f"{family.value}_{i:04d}_{kind}.ppm"
            (out / name).write_bytes(to_ppm(img))
            names[kind] = name
        entries.append({"index": i, **names})
    manifest = {"family": family.value, "seed": seed, "size": size, "samples": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path

"""PSNR, SSIM and the sequential-evaluation forgetting matrix."""

from __future__ import annotations

import numpy as np

PSNR_CAP = 99.0
LUMA = np.array([0.299, 0.587, 0.114])


def psnr(pred, gt, max_val: float = 1.0) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"psnr: shape mismatch {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(max_val ** 2 / mse), PSNR_CAP)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def luminance(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(LUMA, img, axes=([0], [0]))
    raise ValueError(f"expected an H x W or 3 x H x W image, got {img.shape}")


def ssim(pred, gt, max_val: float = 1.0, win: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, use_luminance: bool = True) -> float:
    """Gaussian-window SSIM averaged over fully valid windows.

    Colour images are reduced to Rec. 601 luminance unless ``use_luminance``
    is false, in which case the per-channel values are averaged.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"ssim: shape mismatch {pred.shape} vs {gt.shape}")
    if not use_luminance and pred.ndim == 3:
        return float(np.mean([ssim(p, g, max_val, win, sigma, k1, k2) for p, g in zip(pred, gt)]))
    a, b = luminance(pred), luminance(gt)
    if a.shape[0] < win or a.shape[1] < win:
        raise ValueError(f"image {a.shape} smaller than the {win}x{win} window")
    w = gaussian_window(win, sigma)

    def filt(x):
        view = np.lib.stride_tricks.sliding_window_view(x, (win, win))
        return np.tensordot(view, w, axes=([2, 3], [0, 1]))

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a * mu_a
    sbb = filt(b * b) - mu_b * mu_b
    sab = filt(a * b) - mu_a * mu_b
    c1, c2 = (k1 * max_val) ** 2, (k2 * max_val) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


class ForgettingMatrix:
    """(after_task, eval_task) -> (psnr, ssim), lower triangle only."""

    def __init__(self):
        self.entries: dict[tuple[int, int], tuple[float, float]] = {}

    def set(self, after_task: int, eval_task: int, psnr_db: float, ssim_val: float) -> None:
        if eval_task > after_task:
            raise ValueError(f"entry ({after_task}, {eval_task}) is above the diagonal")
        self.entries[(after_task, eval_task)] = (float(psnr_db), float(ssim_val))

    def get(self, after_task: int, eval_task: int) -> tuple[float, float]:
        return self.entries[(after_task, eval_task)]

    @property
    def n_tasks(self) -> int:
        return 1 + max(i for i, _ in self.entries) if self.entries else 0

    def rows(self) -> list[tuple[int, int, float, float]]:
        return [(i, j, p, s) for (i, j), (p, s) in sorted(self.entries.items())]


def forgetting_report(matrix: ForgettingMatrix) -> dict:
    """PSNR change of every earlier task between its own row and the final row."""
    final = matrix.n_tasks - 1
    if final < 1:
        raise ValueError("forgetting needs at least two evaluated tasks")
    per_task = {}
    for j in range(final):
        if (final, j) not in matrix.entries or (j, j) not in matrix.entries:
            raise ValueError(f"missing entries for task {j}")
        per_task[j] = matrix.get(final, j)[0] - matrix.get(j, j)[0]
    vals = list(per_task.values())
    return {"per_task": per_task, "min": min(vals), "mean": float(np.mean(vals))}

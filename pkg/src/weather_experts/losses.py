"""Multi-level training objective.

All L1 terms are mean reductions. Contrastive terms compare features of a
frozen encoder: pulled towards the positive, pushed from the negative.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .backbone import ParamModule, he_uniform
from .tensor import Tensor, absolute, conv2d, mean, relu, sqrt, square, stack, tsum

ALPHA = 0.8
LAMBDA = 0.3
GAMMA = 0.01
CONTRAST_EPS = 1e-7
LOSS_TERMS = ("l_c", "l_kd", "l_p", "l_reg", "l_div")


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def l1(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "l1")
    return mean(absolute(a - b))


def reconstruction_loss(pred: Tensor, gt: Tensor) -> Tensor:
    return l1(pred, gt)


def contrast_loss(anchor: Tensor, positive: Tensor, negative: Tensor,
                  phi: Callable[[Tensor], Tensor], pos_feat: Optional[Tensor] = None,
                  neg_feat: Optional[Tensor] = None) -> Tensor:
    """L1(phi(a), phi(p)) / (L1(phi(a), phi(n)) + 1e-7).

    ``phi`` is a frozen feature extractor. Positive and negative are treated
    as constants, gradients flow only through the anchor. Their features may
    be passed precomputed.
    """
    _same_shape(anchor, positive, "contrast_loss")
    _same_shape(anchor, negative, "contrast_loss")
    fa = phi(anchor)
    fp = (pos_feat if pos_feat is not None else phi(positive.detach())).detach()
    fn = (neg_feat if neg_feat is not None else phi(negative.detach())).detach()
    return l1(fa, fp) / (l1(fa, fn) + CONTRAST_EPS)


def distillation_loss(pred_new: Tensor, pred_old: Optional[Tensor], input_old: Tensor,
                      phi: Callable[[Tensor], Tensor], beta2: float = 0.1) -> Tensor:
    if pred_old is None:
        raise ValueError("distillation needs teacher outputs")
    base = l1(pred_old.detach(), pred_new)
    if beta2 == 0:
        return base
    return base + beta2 * contrast_loss(pred_new, pred_old, input_old, phi)


class Projector(ParamModule):
    """1x1 conv C->C/2, relu, 1x1 conv C/2->C/4, then global average pooling."""

    param_names = ("w1", "b1", "w2", "b2")

    def __init__(self, width: int = 16, seed=0):
        super().__init__()
        if width < 4:
            raise ValueError("projector width must be at least 4")
        rng = np.random.default_rng(seed)
        h1, h2 = width // 2, width // 4
        self.width, self.out_dim = width, h2
        self.params = {
            "w1": Tensor(he_uniform(rng, (h1, width, 1, 1)), requires_grad=True),
            "b1": Tensor(np.zeros(h1), requires_grad=True),
            "w2": Tensor(he_uniform(rng, (h2, h1, 1, 1)), requires_grad=True),
            "b2": Tensor(np.zeros(h2), requires_grad=True),
        }

    def __call__(self, features: Tensor) -> Tensor:
        p = self.params
        h = relu(conv2d(features, p["w1"], p["b1"]))
        return mean(conv2d(h, p["w2"], p["b2"]), axis=(2, 3))


def projection_loss(f_old: Tensor, f_new: Tensor, projector: Projector) -> Tensor:
    """L1 between projected teacher and student features; the teacher branch is constant."""
    _same_shape(f_old, f_new, "projection_loss")
    h_old = projector(f_old.detach()).detach()
    return l1(h_old, projector(f_new))


def adapter_regularization(adapters: Sequence) -> Tensor:
    """Sum over adapters of the Frobenius norm of their projection kernels."""
    total = Tensor(0.0)
    for adapter in adapters:
        weights = adapter.projection_weights() if hasattr(adapter, "projection_weights") else list(adapter)
        sq = tsum(square(weights[0]))
        for w in weights[1:]:
            sq = sq + tsum(square(w))
        # the norm is not differentiable at zero; use the zero subgradient there
        total = total + (sqrt(sq) if sq.item() > 0 else sq.detach())
    return total


def dynamic_beta(step: int, total_steps: int) -> float:
    if total_steps <= 0 or step < 0:
        raise ValueError("need total_steps > 0 and step >= 0")
    return 0.01 * min(step / (total_steps * 5), 0.1)


def diversity_loss(active_losses: Sequence) -> Tensor:
    """-0.01 times the population std of the active experts' losses."""
    if len(active_losses) == 0:
        raise ValueError("diversity loss needs at least one expert loss")
    vals = stack([x if isinstance(x, Tensor) else Tensor(float(x)) for x in active_losses])
    if len(active_losses) == 1 or np.ptp(vals.data) == 0:
        return Tensor(0.0)
    centred = vals - mean(vals)
    return -GAMMA * sqrt(mean(square(centred)))


@dataclass
class LossBreakdown:
    l_sw: float
    l_c: float
    l_kd: float
    l_p: float
    l_reg: float
    l_div: float
    total: float
    beta_dynamic: float
    step: int

    def row(self) -> dict:
        return asdict(self)


def total_loss(l_sw0, l_c=None, l_kd0=None, l_kd_c=None, l_p=None, l_reg=None, l_div=None, *,
               step: int = 0, total_steps: int = 1, beta1: float = 0.1, beta2: float = 0.1,
               alpha: float = ALPHA, lam: float = LAMBDA, toggles: Optional[dict] = None):
    """Combine the loss terms; returns (total tensor, LossBreakdown).

    Missing or toggled-off terms contribute zero. ``toggles`` maps the names in
    ``LOSS_TERMS`` to booleans; ``l_c`` also governs the contrastive part of
    the distillation term.
    """
    on = {name: True for name in LOSS_TERMS}
    if toggles:
        unknown = set(toggles) - set(LOSS_TERMS)
        if unknown:
            raise ValueError(f"unknown loss toggles: {sorted(unknown)}")
        on.update({k: bool(v) for k, v in toggles.items()})

    def t(x):
        if x is None:
            return Tensor(0.0)
        return x if isinstance(x, Tensor) else Tensor(float(x))

    zero = Tensor(0.0)
    l_c_t = t(l_c) if on["l_c"] else zero
    sw = t(l_sw0) + beta1 * l_c_t
    if on["l_kd"] and l_kd0 is not None:
        kd = t(l_kd0) + (beta2 * t(l_kd_c) if on["l_c"] else zero)
    else:
        kd = zero
    p = t(l_p) if on["l_p"] else zero
    beta = dynamic_beta(step, total_steps)
    reg = t(l_reg) if on["l_reg"] else zero
    div = t(l_div) if on["l_div"] else zero

    total = sw + alpha * kd + lam * p + beta * reg + div
    breakdown = LossBreakdown(
        l_sw=sw.item(), l_c=l_c_t.item(), l_kd=kd.item(), l_p=p.item(), l_reg=reg.item(),
        l_div=div.item(), total=total.item(), beta_dynamic=beta, step=step,
    )
    return total, breakdown


def composed_total(b: LossBreakdown, alpha: float = ALPHA, lam: float = LAMBDA) -> float:
    """Recompute the total from a breakdown's reported parts."""
    return b.l_sw + alpha * b.l_kd + lam * b.l_p + b.beta_dynamic * b.l_reg + b.l_div

"""Shared test utilities: a central finite-difference gradient oracle."""

import numpy as np

from weather_experts.tensor import Tensor

H = 1e-6


def numeric_grad(f, arrays, which, h=H):
    """Central differences of the scalar ``f(*arrays)`` w.r.t. ``arrays[which]``."""
    base = [a.copy() for a in arrays]
    target = base[which]
    out = np.zeros_like(target)
    for idx in np.ndindex(target.shape):
        orig = target[idx]
        target[idx] = orig + h
        fp = f(*base)
        target[idx] = orig - h
        fm = f(*base)
        target[idx] = orig
        out[idx] = (fp - fm) / (2 * h)
    return out


def relative_error(analytic, numeric):
    """Max abs difference scaled by the larger of the two gradients' max magnitude."""
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def gradcheck(build, arrays, h=H):
    """Largest relative error over every input of ``build``.

    ``build`` maps Tensors to a scalar Tensor; it is called once with
    grad-tracking tensors and then repeatedly on plain arrays.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    build(*tensors).backward()

    def f(*arrs):
        return build(*[Tensor(a) for a in arrs]).item()

    worst = 0.0
    for i, t in enumerate(tensors):
        # an input the output does not depend on never receives a gradient
        analytic = np.zeros_like(arrays[i]) if t.grad is None else t.grad
        worst = max(worst, relative_error(analytic, numeric_grad(f, arrays, i, h)))
    return worst


def away_from_zero(rng, shape, margin=1e-2):
    """Normal samples pushed away from 0 so kinks stay outside the FD stencil."""
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)

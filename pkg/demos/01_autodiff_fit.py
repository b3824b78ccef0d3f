"""Fit a tiny residual network to one weather family with the numpy autodiff engine.

The backbone starts as an exact identity (its output head is zero), so the
first evaluation reproduces the degraded-input PSNR. A few hundred Adam steps
with cosine decay are enough to move it well above that baseline on haze.

    python demos/01_autodiff_fit.py
"""

import numpy as np

from weather_experts import Adam, MiniBackbone, Tensor, make_batch, psnr
from weather_experts.losses import l1


def val_psnr(net, x, gt):
    pred = np.clip(net.decode(net.encode(Tensor(x)), Tensor(x)).data, 0, 1)
    return np.mean([psnr(p, g) for p, g in zip(pred, gt)])


def main(steps=300):
    net = MiniBackbone(width=8, seed=0)
    opt = Adam(net.parameters(), lr=1e-3, total_steps=steps)
    vx, vgt = make_batch("haze", seed=1, indices=range(9_000_000, 9_000_008), size=16)
    print(f"input PSNR        {np.mean([psnr(a, b) for a, b in zip(vx, vgt)]):.2f} dB")
    print(f"untrained network {val_psnr(net, vx, vgt):.2f} dB")
    for step in range(steps):
        x, gt = make_batch("haze", seed=1, indices=[2 * step, 2 * step + 1], size=16)
        xt = Tensor(x)
        loss = l1(net.decode(net.encode(xt), xt), Tensor(gt))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 100 == 99:
            print(f"step {step + 1:4d}  loss {loss.item():.4f}  val {val_psnr(net, vx, vgt):.2f} dB")


if __name__ == "__main__":
    main()

"""Small convolutional encoder/decoder shared by every task."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, conv2d, relu


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParamModule:
    """Named float64 parameters kept in a fixed order."""

    param_names: tuple[str, ...] = ()

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def parameters(self) -> list[Tensor]:
        return [self.params[name] for name in self.param_names]

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
            p.grad = None

    @property
    def trainable(self) -> bool:
        return all(p.requires_grad for p in self.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: self.params[name].data.copy() for name in self.param_names}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.param_names:
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != self.params[name].shape:
                raise ValueError(f"{type(self).__name__}.{name}: shape {arr.shape} != {self.params[name].shape}")
            self.params[name].data = arr.copy()


class MiniBackbone(ParamModule):
    """conv3x3(3->C) + relu + conv3x3(C->C) encoder and a conv3x3(C->3) residual head.

    ``decode`` adds its convolution output to the degraded input, so zero
    features reproduce the input exactly. The head starts at zero, which makes
    the untrained network an exact identity map.
    """

    param_names = ("enc1_w", "enc1_b", "enc2_w", "enc2_b", "dec_w", "dec_b")

    def __init__(self, width: int = 16, seed: int = 0):
        super().__init__()
        if width < 1:
            raise ValueError("width must be positive")
        self.width = width
        rng = np.random.default_rng(seed)
        c = width
        self.params = {
            "enc1_w": Tensor(he_uniform(rng, (c, 3, 3, 3)), requires_grad=True),
            "enc1_b": Tensor(np.zeros(c), requires_grad=True),
            "enc2_w": Tensor(he_uniform(rng, (c, c, 3, 3)), requires_grad=True),
            "enc2_b": Tensor(np.zeros(c), requires_grad=True),
            "dec_w": Tensor(np.zeros((3, c, 3, 3)), requires_grad=True),
            "dec_b": Tensor(np.zeros(3), requires_grad=True),
        }

    def encode(self, image: Tensor) -> Tensor:
        if image.data.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"encode expects an N x 3 x H x W image, got {image.shape}")
        p = self.params
        h = relu(conv2d(image, p["enc1_w"], p["enc1_b"]))
        return conv2d(h, p["enc2_w"], p["enc2_b"])

    def decode(self, features: Tensor, input_image: Tensor) -> Tensor:
        if features.data.ndim != 4 or features.shape[1] != self.width:
            raise ValueError(f"decode expects N x {self.width} x H x W features, got {features.shape}")
        if input_image.shape != (features.shape[0], 3) + features.shape[2:]:
            raise ValueError(f"decode: image {input_image.shape} does not match features {features.shape}")
        p = self.params
        return input_image + conv2d(features, p["dec_w"], p["dec_b"])

    def clone(self) -> "MiniBackbone":
        other = MiniBackbone.__new__(MiniBackbone)
        ParamModule.__init__(other)
        other.width = self.width
        other.params = {k: Tensor(v.data, requires_grad=v.requires_grad) for k, v in self.params.items()}
        return other

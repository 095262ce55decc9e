"""Parameter containers and the layer modules the networks are built from."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import Tensor
from . import kernels


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int,
                    dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal parameter container; discovery follows attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int = 0,
                 dilation: int = 1, rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.weight = Tensor(kaiming_uniform(rng, (cout, cin, k, k), cin * k * k, dtype),
                             requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True, name="bias")

    def __call__(self, x: Tensor, relu: bool = False) -> Tensor:
        return kernels.conv2d(x, self.weight, self.bias, self.stride, self.padding,
                              self.dilation, relu=relu)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 2, padding: int = 1,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        self.weight = Tensor(kaiming_uniform(rng, (cin, cout, k, k), cin * k * k, dtype),
                             requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True, name="bias")

    def __call__(self, x: Tensor, relu: bool = False) -> Tensor:
        return kernels.conv_transpose2d(x, self.weight, self.bias, self.stride,
                                        self.padding, relu=relu)


class Dense(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(kaiming_uniform(rng, (fin, fout), fin, dtype),
                             requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(fout, dtype=dtype), requires_grad=True, name="bias")

    def __call__(self, x: Tensor, relu: bool = False) -> Tensor:
        return kernels.dense(x, self.weight, self.bias, relu=relu)

"""Small layer library on top of the tensor engine.

Modules track parameters, buffers, and child modules by attribute name, so
``named_parameters()`` yields dotted paths like ``block1.conv1.weight`` in a
stable construction order.  Weights are drawn uniformly from
``[-sqrt(1/fan_in), sqrt(1/fan_in)]`` with biases at zero; every draw comes
from the generator handed to the constructor, so a single seeded generator
makes whole-model initialization reproducible.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base class with recursive parameter/buffer discovery."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        else:
            object.__setattr__(self, name, value)

    def __getattr__(self, name):
        # only called when normal lookup fails
        for reg in ("_params", "_buffers", "_children"):
            d = self.__dict__.get(reg)
            if d is not None and name in d:
                return d[name]
        raise AttributeError(f"{type(self).__name__} has no attribute {name!r}")

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield (prefix + name, b)
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All parameters and buffers as plain arrays, keyed by dotted name."""
        out = {name: p.data for name, p in self.named_parameters()}
        for name, b in self.named_buffers():
            out[name] = b
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values into parameters/buffers in place; names must match exactly."""
        own = {name: p for name, p in self.named_parameters()}
        bufs = dict(self.named_buffers())
        expected = set(own) | set(bufs)
        got = set(arrays)
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            src = arrays[name]
            if src.shape != p.data.shape:
                raise ValueError(
                    f"state mismatch for {name}: shape {src.shape} vs {p.data.shape}"
                )
            p.data[...] = src.astype(p.data.dtype)
        for name, b in bufs.items():
            src = arrays[name]
            if src.shape != b.shape:
                raise ValueError(
                    f"state mismatch for {name}: shape {src.shape} vs {b.shape}"
                )
            b[...] = src.astype(b.dtype)


class Conv2d(Module):
    """NHWC convolution; weight shaped (kh, kw, c_in, c_out)."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = True, dtype=None):
        super().__init__()
        dtype = dtype or T.default_dtype()
        fan_in = kernel * kernel * c_in
        self.weight = Tensor(
            _uniform_init(rng, (kernel, kernel, c_in, c_out), fan_in, dtype),
            requires_grad=True,
        )
        if bias:
            self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        else:
            object.__setattr__(self, "bias", None)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "padding", padding)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    """Affine map; weight shaped (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, dtype=None):
        super().__init__()
        dtype = dtype or T.default_dtype()
        self.weight = Tensor(_uniform_init(rng, (d_in, d_out), d_in, dtype), requires_grad=True)
        if bias:
            self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)
        else:
            object.__setattr__(self, "bias", None)

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=None):
        super().__init__()
        dtype = dtype or T.default_dtype()
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        object.__setattr__(self, "momentum", momentum)
        object.__setattr__(self, "eps", eps)

    def __call__(self, x: Tensor) -> Tensor:
        return T.batch_norm(
            x, self.gamma, self.beta,
            self._buffers["running_mean"], self._buffers["running_var"],
            training=self.training, momentum=self.momentum, eps=self.eps,
        )

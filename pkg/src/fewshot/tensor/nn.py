"""Layer containers holding named parameters and buffers."""
import math

import numpy as np

from . import functional as F
from .core import Parameter


class Module:
    """Minimal container: parameters, buffers and child modules by attribute name."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if name in getattr(self, "_buffer_names", ()):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_buffers(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype):
        for p in self.parameters():
            p.astype(dtype)
        for module in self._modules():
            for name in getattr(module, "_buffer_names", ()):
                setattr(module, name, getattr(module, name).astype(dtype))
        return self

    def _modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value._modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item._modules()


def fan_in_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, rng, stride=1, pad=1, dtype=np.float32):
        fan_in = in_ch * 9
        self.weight = Parameter(fan_in_uniform(rng, (out_ch, in_ch, 3, 3), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        self.stride, self.pad = stride, pad

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True, dtype=np.float32, zero_init=False):
        shape = (out_features, in_features)
        w = np.zeros(shape, dtype=dtype) if zero_init else fan_in_uniform(rng, shape, in_features, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x, training):
        return F.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            training, momentum=self.momentum, eps=self.eps,
        )

"""Minimal layer/module system with named parameters and buffers."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import DEFAULT_DTYPE, Tensor


class Module:
    """Base class. Parameters are ``Tensor`` attributes with ``requires_grad``;
    buffers are ndarray attributes listed in ``_buffer_names``; child modules
    may be attributes or sit in lists (named by index) or dicts (named by key)."""

    _buffer_names: tuple = ()
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v
            elif isinstance(value, dict) and value and all(isinstance(v, Module) for v in value.values()):
                for key, v in value.items():
                    yield f"{name}.{key}", v

    def named_modules(self, prefix=""):
        yield prefix, self
        for name, child in self._children():
            yield from child.named_modules(f"{prefix}{name}.")

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self):
        """Name -> ndarray for every parameter and buffer (views, not copies)."""
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state, strict=True):
        """Copy matching arrays in; returns (missing, unexpected) name lists."""
        own = dict(self.named_parameters())
        own_buf = dict(self.named_buffers())
        missing, unexpected = [], []
        for name, arr in state.items():
            if name in own:
                target = own[name].data
            elif name in own_buf:
                target = own_buf[name]
            else:
                unexpected.append(name)
                continue
            if target.shape != arr.shape:
                raise ValueError(f"shape conflict for {name}: model {target.shape}, state {arr.shape}")
            target[...] = arr
        for name in list(own) + list(own_buf):
            if name not in state:
                missing.append(name)
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        return missing, unexpected

    def zero_grad(self):
        """Reset every parameter gradient to zeros (parameters off the loss path stay 0)."""
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def train(self, mode=True):
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        """Convert all parameters and buffers to ``dtype`` in place."""
        for _, m in self.named_modules():
            for name, value in vars(m).items():
                if isinstance(value, Tensor) and value.requires_grad:
                    value.data = value.data.astype(dtype)
                    value.grad = None
            for name in m._buffer_names:
                setattr(m, name, getattr(m, name).astype(dtype))
        return self


def parameter(data, dtype=DEFAULT_DTYPE):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


class Conv2d(Module):
    """Square-kernel convolution; ``padding=None`` keeps the spatial size at stride 1."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, dilation=1,
                 padding=None, bias=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.dilation = dilation
        self.padding = dilation * (kernel_size - 1) // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        std = np.sqrt(2.0 / fan_in)  # He-normal
        self.weight = parameter(rng.normal(0.0, std, (out_channels, in_channels, kernel_size, kernel_size)))
        self.bias = parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.dilation, self.padding)


class PReLU(Module):
    def __init__(self, channels, init=0.25):
        self.slope = parameter(np.full(channels, init))

    def forward(self, x):
        return F.prelu(x, self.slope)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.momentum = momentum
        self.eps = eps
        self.weight = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=DEFAULT_DTYPE)
        self.running_var = np.ones(channels, dtype=DEFAULT_DTYPE)

    def forward(self, x):
        return F.batchnorm2d(x, self.weight, self.bias, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


class ConvBNAct(Module):
    """conv -> batchnorm -> PReLU."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, dilation=1, rng=None):
        self.conv = Conv2d(in_channels, out_channels, kernel_size, stride, dilation, bias=False, rng=rng)
        self.bn = BatchNorm2d(out_channels)
        self.act = PReLU(out_channels)

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))

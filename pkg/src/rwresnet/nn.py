"""Minimal layer containers over the kernels in :mod:`rwresnet.tensor`.

A module owns named parameter arrays, caches what its last forward call needs,
and writes parameter gradients into ``self.grads`` on ``backward``.  There is
no taping: composite modules call their children's ``backward`` in reverse
order by hand.  All parameter and buffer updates happen in place so that
references handed out by ``named_parameters`` stay valid.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}
        self.training = True

    def add(self, name: str, module: "Module") -> "Module":
        self.children[name] = module
        return module

    def forward(self, x):
        raise NotImplementedError

    def backward(self, d_out):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.children.items():
            yield from child.modules(f"{prefix}{name}.")

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        for prefix, m in self.modules():
            for k, v in m.params.items():
                yield prefix + k, v

    def named_grads(self) -> Iterator[tuple[str, np.ndarray]]:
        for prefix, m in self.modules():
            for k in m.params:
                yield prefix + k, m.grads.get(k)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters and buffers, in module traversal order."""
        out = OrderedDict()
        for prefix, m in self.modules():
            for k, v in m.params.items():
                out[prefix + k] = v
            for k, v in m.buffers.items():
                out[prefix + k] = v
        return out

    def load_state_dict(self, state) -> None:
        own = self.state_dict()
        for name, arr in own.items():
            if name not in state:
                raise KeyError(f"missing tensor {name!r}")
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ValueError(f"tensor {name!r}: shape {src.shape} != expected {arr.shape}")
            arr[...] = src
        extra = set(state) - set(own)
        if extra:
            raise KeyError(f"unexpected tensor {sorted(extra)[0]!r}")

    def num_parameters(self) -> int:
        return sum(v.size for _, v in self.named_parameters())

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.modules():
            m.training = mode
            if isinstance(m, BatchNorm):
                m.state.mode = "train" if mode else "eval"
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Conv1d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, dilation=1, dtype=T.DTYPE):
        super().__init__()
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.params["weight"] = np.zeros((cout, cin, kernel), dtype)
        self.params["bias"] = np.zeros(cout, dtype)

    def forward(self, x):
        out, self._ctx = T.conv1d_forward(
            x, self.params["weight"], self.params["bias"], self.stride, self.padding, self.dilation
        )
        return out

    def backward(self, d_out):
        g = T.conv1d_backward(self._ctx, d_out)
        self.grads.update(g.d_params)
        return g.d_input


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, dtype=T.DTYPE):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.params["weight"] = np.zeros((cout, cin, kernel, kernel), dtype)
        self.params["bias"] = np.zeros(cout, dtype)

    def forward(self, x):
        out, self._ctx = T.conv2d_forward(
            x, self.params["weight"], self.params["bias"], self.stride, self.padding
        )
        return out

    def backward(self, d_out):
        g = T.conv2d_backward(self._ctx, d_out)
        self.grads.update(g.d_params)
        return g.d_input


class BatchNorm(Module):
    """Batch norm over axis 1; works for both [B,C,L] and [B,C,H,W]."""

    def __init__(self, channels, dtype=T.DTYPE, momentum=0.1, eps=1e-5):
        super().__init__()
        self.state = T.BnState.fresh(channels, dtype, momentum=momentum, eps=eps)
        self.params["gamma"] = self.state.gamma
        self.params["beta"] = self.state.beta
        self.buffers["running_mean"] = self.state.running_mean
        self.buffers["running_var"] = self.state.running_var

    def forward(self, x):
        out, self._ctx = T.batchnorm_forward(x, self.state)
        return out

    def backward(self, d_out):
        g = T.batchnorm_backward(self._ctx, d_out)
        self.grads.update(g.d_params)
        return g.d_input


class ReLU(Module):
    def forward(self, x):
        out, self._mask = T.relu_forward(x)
        return out

    def backward(self, d_out):
        return T.relu_backward(self._mask, d_out).d_input


class MaxPool1d(Module):
    def __init__(self, size):
        super().__init__()
        self.size = size

    def forward(self, x):
        out, self._ctx = T.maxpool1d_forward(x, self.size)
        return out

    def backward(self, d_out):
        return T.maxpool1d_backward(self._ctx, d_out).d_input


class AdaptiveAvgPool(Module):
    def forward(self, x):
        out, self._shape = T.adaptive_avg_pool_1x1_forward(x)
        return out

    def backward(self, d_out):
        return T.adaptive_avg_pool_1x1_backward(self._shape, d_out).d_input


class Linear(Module):
    def __init__(self, din, dout, dtype=T.DTYPE):
        super().__init__()
        self.params["weight"] = np.zeros((dout, din), dtype)
        self.params["bias"] = np.zeros(dout, dtype)

    def forward(self, x):
        out, self._ctx = T.linear_forward(x, self.params["weight"], self.params["bias"])
        return out

    def backward(self, d_out):
        g = T.linear_backward(self._ctx, d_out)
        self.grads.update(g.d_params)
        return g.d_input


class Sequential(Module):
    def __init__(self, *layers: tuple[str, Module]):
        super().__init__()
        for name, layer in layers:
            self.add(name, layer)

    def forward(self, x):
        for layer in self.children.values():
            x = layer.forward(x)
        return x

    def backward(self, d_out):
        for layer in reversed(list(self.children.values())):
            d_out = layer.backward(d_out)
        return d_out

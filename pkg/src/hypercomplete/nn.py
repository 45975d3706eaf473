"""Neural building blocks on top of :mod:`hypercomplete.tensor`."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .tensor import DimensionError, Tensor, _result, as_tensor, max_along, matmul, silu


class Rng:
    """Seeded PCG64 stream. Same seed, same samples on every platform."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def child(self) -> Rng:
        return Rng(int(self._gen.integers(0, 2**63 - 1)))


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Container that discovers parameters and submodules by attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


# -- functional primitives ----------------------------------------------------

def linear(x: Tensor, layer: "Linear") -> Tensor:
    x = as_tensor(x)
    out_f, in_f = layer.weight.shape
    if x.shape[-1] != in_f:
        raise DimensionError(f"linear: input shape {x.shape} vs weight shape {layer.weight.shape}")
    y = matmul(x, layer.weight.T)
    if layer.bias is not None:
        y = y + layer.bias
    return y


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    c = x.shape[-1]
    if c == 0:
        raise DimensionError("layer_norm over an empty channel axis")
    if gain.shape != (c,) or shift.shape != (c,):
        raise DimensionError(f"layer_norm: input {x.shape}, gain {gain.shape}, shift {shift.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + shift.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead)
        g_shift = g.sum(axis=lead)
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, g_gain, g_shift

    return _result(out, (x, gain, shift), backward, "layer_norm")


def depthwise_conv1d(x: Tensor, kernels: Tensor) -> Tensor:
    """Causal per-channel convolution along axis 0.

    ``kernels[c]`` is ordered oldest to newest, so the last tap multiplies the
    current step and the sequence is left-padded with ``k - 1`` zeros.
    """
    x = as_tensor(x)
    length, ch = x.shape
    if kernels.ndim != 2 or kernels.shape[0] != ch:
        raise DimensionError(f"depthwise_conv1d: input {x.shape} vs kernels {kernels.shape}")
    k = kernels.shape[1]
    if k < 1:
        raise DimensionError("depthwise_conv1d needs kernel width >= 1")
    padded = np.concatenate([np.zeros((k - 1, ch)), x.data], axis=0)
    # windows[t, c, j] = padded[t + j, c]
    windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=0)
    out = np.einsum("tcj,cj->tc", windows, kernels.data)

    def backward(g):
        gk = np.einsum("tcj,tc->cj", windows, g)
        gpad = np.zeros_like(padded)
        for j in range(k):
            gpad[j:j + length] += g * kernels.data[:, j]
        return gpad[k - 1:], gk

    return _result(out, (x, kernels), backward, "dwconv")


def max_pool_rows(x: Tensor) -> Tensor:
    """Column-wise maximum of a [R, C] tensor."""
    if x.ndim != 2:
        raise DimensionError(f"max_pool_rows expects [R, C], got {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("max_pool_rows on an empty input")
    return max_along(x, 0)


# -- layers ---------------------------------------------------------------------

class Linear(Module):
    """Affine map; weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""

    def __init__(self, in_features: int, out_features: int, rng: Rng, bias: bool = True,
                 zero_init: bool = False):
        bound = 1.0 / np.sqrt(in_features)
        # draw even when zeroing so the rest of the stream is unaffected
        w = rng.uniform(-bound, bound, (out_features, in_features))
        b = rng.uniform(-bound, bound, (out_features,))
        if zero_init:
            w[:] = 0.0
            b[:] = 0.0
        self.weight = parameter(w)
        self.bias = parameter(b) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(channels))
        self.shift = parameter(np.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.shift, self.eps)


def get_activation(name: str) -> Callable[[Tensor], Tensor]:
    from . import tensor as T

    table = {"silu": T.silu, "relu": T.relu, "sigmoid": T.sigmoid, "tanh": T.tanh}
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(table)}") from None


class MLP(Module):
    """Stack of Linear layers with an activation between them (not after the last)."""

    def __init__(self, widths: list[int], rng: Rng, activation: str = "silu",
                 zero_last: bool = False):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        n = len(widths) - 1
        self.layers = [Linear(widths[i], widths[i + 1], rng, zero_init=zero_last and i == n - 1)
                       for i in range(n)]
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        act = get_activation(self.activation)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = act(x)
        return x


__all__ = [
    "Rng", "Module", "Linear", "LayerNorm", "MLP", "linear", "layer_norm", "depthwise_conv1d",
    "max_pool_rows", "parameter", "silu", "get_activation",
]

"""Selective state-space machinery and the Mamba block.

The state matrix is diagonal per channel: ``A[c, s] < 0`` for channel ``c`` and
state slot ``s``. With step sizes ``delta[t, c] > 0`` and input-dependent
``B[t, s]``, ``C[t, s]`` the recurrence is

    h[t] = exp(delta[t] * A) * h[t-1] + coef[t] * B[t] * x[t]
    y[t] = sum_s C[t, s] * h[t, :, s]

where ``coef = delta`` (simplified hold) or ``(exp(delta*A) - 1) / A`` (exact
zero-order hold).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import MLP, LayerNorm, Linear, Module, Rng, depthwise_conv1d, get_activation, parameter
from .tensor import DimensionError, Tensor, _result, as_tensor


def discretize_zoh(delta, a, b, exact: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Map continuous (delta, A, B) to (A_bar, B_bar).

    ``delta`` broadcasts against ``a`` (shape [C, S]); ``b`` has shape [S].
    Returns ``A_bar = exp(delta*A)`` and ``B_bar = delta*B`` (or the exact
    ``(exp(delta*A) - 1) / A * B`` when ``exact``).
    """
    delta = np.asarray(delta, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("discretize_zoh: delta must be strictly positive")
    if np.any(a >= 0):
        raise ValueError("discretize_zoh: A must be strictly negative")
    d = delta[..., None] if delta.ndim == a.ndim - 1 else delta
    a_bar = np.exp(d * a)
    if exact:
        b_bar = np.expm1(d * a) / a * b
    else:
        b_bar = d * np.ones_like(a) * b
    return a_bar, b_bar


def _scan_inputs(x, delta, a, b, c):
    x, delta, a, b, c = (as_tensor(v) for v in (x, delta, a, b, c))
    if x.ndim != 2:
        raise DimensionError(f"scan expects x of shape [len, C], got {x.shape}")
    length, ch = x.shape
    if length < 1:
        raise ValueError("scan over an empty sequence")
    s = a.shape[-1]
    if (delta.shape != (length, ch) or a.shape != (ch, s)
            or b.shape != (length, s) or c.shape != (length, s)):
        raise DimensionError(
            f"scan: x {x.shape}, delta {delta.shape}, A {a.shape}, B {b.shape}, C {c.shape}")
    return x, delta, a, b, c


def scan(x, delta, a, b, c, exact_zoh: bool = False) -> Tensor:
    """Sequential selective scan as one differentiable graph node.

    Shapes: x, delta [len, C]; a [C, S]; b, c [len, S]. Returns y [len, C].
    """
    x, delta, a, b, c = _scan_inputs(x, delta, a, b, c)
    X, Dl, A, B, Cm = x.data, delta.data, a.data, b.data, c.data
    if np.any(Dl <= 0):
        raise ValueError("scan: delta must be strictly positive")
    length = X.shape[0]
    dA = Dl[:, :, None] * A[None]
    a_bar = np.exp(dA)
    coef = np.expm1(dA) / A[None] if exact_zoh else Dl[:, :, None]
    bx = B[:, None, :] * X[:, :, None]
    u = coef * bx
    H = np.empty_like(u)
    h = np.zeros_like(u[0])
    for t in range(length):
        h = a_bar[t] * h + u[t]
        H[t] = h
    Y = np.einsum("tcs,ts->tc", H, Cm)

    def backward(gy):
        gC = np.einsum("tc,tcs->ts", gy, H)
        direct = gy[:, :, None] * Cm[:, None, :]
        gU = np.empty_like(H)
        carry = np.zeros_like(H[0])
        for t in range(length - 1, -1, -1):
            gh = direct[t] + carry
            gU[t] = gh
            carry = gh * a_bar[t]
        h_prev = np.concatenate([np.zeros_like(H[:1]), H[:-1]], axis=0)
        g_dA = gU * h_prev * a_bar
        g_coef = gU * bx
        gX = np.einsum("tcs,tcs,ts->tc", gU, np.broadcast_to(coef, gU.shape), B)
        gB = np.einsum("tcs,tcs,tc->ts", gU, np.broadcast_to(coef, gU.shape), X)
        gDl = (g_dA * A[None]).sum(axis=2)
        gA = (g_dA * Dl[:, :, None]).sum(axis=0)
        if exact_zoh:
            gDl = gDl + (g_coef * a_bar).sum(axis=2)
            d_coef_dA = (Dl[:, :, None] * a_bar * A[None] - np.expm1(dA)) / (A[None] ** 2)
            gA = gA + (g_coef * d_coef_dA).sum(axis=0)
        else:
            gDl = gDl + g_coef.sum(axis=2)
        return gX, gDl, gA, gB, gC

    return _result(Y, (x, delta, a, b, c), backward, "scan")


def scan_reference(x, delta, a, b, c, exact_zoh: bool = False) -> np.ndarray:
    """Naive step-by-step recurrence, discretising afresh at every step."""
    X, Dl, A, B, Cm = (np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64)
                       for v in (x, delta, a, b, c))
    length, ch = X.shape
    h = np.zeros(A.shape)
    y = np.zeros((length, ch))
    for t in range(length):
        a_bar, b_bar = discretize_zoh(Dl[t], A, B[t], exact=exact_zoh)
        h = a_bar * h + b_bar * X[t][:, None]
        y[t] = h @ Cm[t]
    return y


def scan_chunked(x, delta, a, b, c, chunk: int = 16) -> np.ndarray:
    """Blocked closed-form evaluation of the simplified-hold scan.

    Inside a block the state is a decay-weighted sum of the block's inputs plus
    the decayed carry-in state; decays come from cumulative sums of delta.
    """
    X, Dl, A, B, Cm = (np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64)
                       for v in (x, delta, a, b, c))
    length, ch = X.shape
    y = np.empty((length, ch))
    h0 = np.zeros(A.shape)
    for s0 in range(0, length, chunk):
        s1 = min(s0 + chunk, length)
        n = s1 - s0
        cs = np.cumsum(Dl[s0:s1], axis=0)                       # [n, C]
        u = Dl[s0:s1, :, None] * B[s0:s1, None, :] * X[s0:s1, :, None]
        gap = cs[:, None, :] - cs[None, :, :]                  # [t, s, C]
        tri = np.tril(np.ones((n, n), dtype=bool))
        gap = np.where(tri[:, :, None], gap, 0.0)
        decay = np.exp(gap[..., None] * A) * tri[:, :, None, None]
        H = np.einsum("tscn,scn->tcn", decay, u) + np.exp(cs[:, :, None] * A) * h0
        y[s0:s1] = np.einsum("tcn,tn->tc", H, Cm[s0:s1])
        h0 = H[-1]
    return y


class SelectiveSSM(Module):
    """Input-dependent (delta, B, C) projections around :func:`scan`."""

    def __init__(self, channels: int, rng: Rng, state_size: int = 16,
                 dt_min: float = 1e-3, dt_max: float = 1e-1, exact_zoh: bool = False):
        self.a_log = parameter(np.tile(np.log(np.arange(1, state_size + 1, dtype=np.float64)),
                                       (channels, 1)))
        self.delta_proj = Linear(channels, channels, rng)
        self.delta_proj.weight.data *= 0.1
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), (channels,)))
        # inverse softplus so softplus(bias) == dt
        self.delta_proj.bias.data[:] = dt + np.log(-np.expm1(-dt))
        self.b_proj = Linear(channels, state_size, rng)
        self.c_proj = Linear(channels, state_size, rng)
        self.exact_zoh = exact_zoh

    def forward(self, x: Tensor) -> Tensor:
        delta = T.softplus(self.delta_proj(x))
        b = self.b_proj(x)
        c = self.c_proj(x)
        a = -T.exp(self.a_log)
        return scan(x, delta, a, b, c, exact_zoh=self.exact_zoh)


def selective_scan(x: Tensor, params: SelectiveSSM) -> Tensor:
    return params(x)


class MambaBlock(Module):
    """One gated Mamba block.

    z1 = conv(in_proj(LN(z)))
    z2 = out_proj(LN(SSM(act(z1))))
    out = z2 * act(LN(z)) + z
    """

    def __init__(self, channels: int, rng: Rng, state_size: int = 16, conv_width: int = 4,
                 activation: str = "silu", zero_out: bool = False):
        self.channels = channels
        self.norm_in = LayerNorm(channels)
        self.in_proj = Linear(channels, channels, rng)
        bound = 1.0 / np.sqrt(conv_width)
        self.conv = parameter(rng.uniform(-bound, bound, (channels, conv_width)))
        self.ssm = SelectiveSSM(channels, rng, state_size=state_size)
        self.norm_ssm = LayerNorm(channels)
        self.out_proj = Linear(channels, channels, rng, zero_init=zero_out)
        self.norm_gate = LayerNorm(channels)
        self.activation = activation

    def forward(self, z: Tensor) -> Tensor:
        z = as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.channels:
            raise DimensionError(f"mamba block configured for {self.channels} channels, got {z.shape}")
        act = get_activation(self.activation)
        z1 = depthwise_conv1d(self.in_proj(self.norm_in(z)), self.conv)
        z2 = self.out_proj(self.norm_ssm(self.ssm(act(z1))))
        return z2 * act(self.norm_gate(z)) + z


def mamba_block(z: Tensor, block: MambaBlock) -> Tensor:
    return block(z)


class ResidualMLP(Module):
    def __init__(self, channels: int, rng: Rng, ratio: int = 2, activation: str = "silu"):
        self.norm = LayerNorm(channels)
        self.mlp = MLP([channels, ratio * channels, channels], rng, activation=activation)

    def forward(self, z: Tensor) -> Tensor:
        return z + self.mlp(self.norm(z))


class MambaStack(Module):
    """``depth`` Mamba blocks with a residual MLP between consecutive blocks."""

    def __init__(self, channels: int, depth: int, rng: Rng, state_size: int = 16,
                 conv_width: int = 4, mlp_ratio: int = 2, activation: str = "silu"):
        if depth < 1:
            raise ValueError("mamba stack depth must be >= 1")
        self.blocks = [MambaBlock(channels, rng, state_size, conv_width, activation)
                       for _ in range(depth)]
        self.mlps = [ResidualMLP(channels, rng, mlp_ratio, activation) for _ in range(depth - 1)]

    def forward(self, z: Tensor) -> Tensor:
        z = self.blocks[0](z)
        for mlp, block in zip(self.mlps, self.blocks[1:]):
            z = block(mlp(z))
        return z


def mamba_stack(z: Tensor, stack: MambaStack) -> Tensor:
    return stack(z)

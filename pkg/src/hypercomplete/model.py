"""Hyperpoint completion network: generation, spread and point deformation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ConfigError, ModelConfig
from .nn import MLP, Linear, Module, Rng, get_activation, max_pool_rows, parameter
from .points import EdgeConv, SampledSet, fps, hilbert_order
from .ssm import MambaBlock, MambaStack, ResidualMLP
from .tensor import Tensor, _result, as_tensor

SIGMA_FLOOR = 1e-5


@dataclass
class AnchorOutput:
    coords: Tensor        # [L, 3]
    feats: Tensor         # [L, C]
    refined: Tensor       # [N, C]
    weights: np.ndarray   # [heads, L, N] attention rows


@dataclass
class HyperPointSet:
    hyper_coords: Tensor      # [M, 3]
    hyper_feats: Tensor       # [M, C]
    sampled_coords: Tensor    # [N, 3]
    enhanced_feats: Tensor    # [N, C]
    sample_indices: np.ndarray
    attention: list[np.ndarray]


@dataclass
class Completion:
    points: Tensor            # [(N+M)*K, 3]
    centers: Tensor           # [N+M, 3], sampled points followed by spread hyperpoints
    hyperpoints: HyperPointSet
    grid_points: int


class CrossAttentionBlock(Module):
    """Predicts L anchor features and coordinates from the enhanced point features."""

    def __init__(self, cfg: ModelConfig, rng: Rng):
        c, n, l = cfg.channels, cfg.n_points, cfg.n_anchors
        self.heads = cfg.heads
        self.n_points = n
        self.n_anchors = l
        self.feat_mlp = MLP([c, c, c], rng, cfg.activation)
        self.mix_logits = parameter(rng.normal((l, n)))
        self.query = Linear(c, c, rng, bias=False)
        self.key = Linear(c, c, rng, bias=False)
        self.coord_mlp = MLP([3 + c, c, c], rng, cfg.activation)
        self.coord_head = Linear(c, 3, rng)
        self.back_query = Linear(c, c, rng, bias=False)
        self.back_key = Linear(c, c, rng, bias=False)
        self.back_out = Linear(c, c, rng)

    def forward(self, sampled_coords: Tensor, enhanced: Tensor) -> AnchorOutput:
        n, c = enhanced.shape
        if n != self.n_points:
            raise ConfigError(f"cross-attention built for {self.n_points} points, got {n}")
        h = max_pool_rows(enhanced)                                   # [C]
        per_point = self.feat_mlp(h - enhanced)                       # [N, C]
        mix = T.softmax(self.mix_logits, axis=1)                      # [L, N]
        feats = mix @ per_point                                       # [L, C]

        # queries: anchor features, keys: enhanced features, values: point coordinates
        hd = c // self.heads
        q = T.transpose(self.query(feats).reshape(self.n_anchors, self.heads, hd), (1, 0, 2))
        k = T.transpose(self.key(enhanced).reshape(n, self.heads, hd), (1, 2, 0))
        attn = T.softmax((q @ k) * (1.0 / np.sqrt(hd)), axis=-1)     # [H, L, N]
        combined = attn @ sampled_coords                              # [H, L, 3]
        h_b = T.broadcast_to(h.reshape(1, 1, c), (self.heads, self.n_anchors, c))
        pooled = T.max_along(self.coord_mlp(T.concat([combined, h_b], axis=2)), axis=0)
        coords = T.mean(combined, axis=0) + self.coord_head(pooled)  # [L, 3]

        back = T.softmax((self.back_query(enhanced) @ self.back_key(feats).T)
                         * (1.0 / np.sqrt(c)), axis=-1)               # [N, L]
        refined = enhanced + self.back_out(back @ feats)
        return AnchorOutput(coords, feats, refined, attn.data)


def cross_attention_block(sampled_coords: Tensor, enhanced: Tensor,
                          block: CrossAttentionBlock) -> AnchorOutput:
    return block(sampled_coords, enhanced)


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.mlp = ResidualMLP(cfg.channels, rng, cfg.mlp_ratio, cfg.activation)
        self.block = MambaBlock(cfg.channels, rng, cfg.state_size, cfg.conv_width, cfg.activation)

    def forward(self, z: Tensor) -> Tensor:
        return self.block(self.mlp(z))


class HyperPointGenerator(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        c = cfg.channels
        self.cfg = cfg
        self.edge = EdgeConv(c, rng, k=cfg.edge_k, hidden=cfg.edge_hidden, activation=cfg.activation)
        self.embed = Linear(c + 3, c, rng)
        self.encoder = MambaStack(c, cfg.encoder_depth, rng, cfg.state_size, cfg.conv_width,
                                  cfg.mlp_ratio, cfg.activation)
        self.stage_layers = [EncoderLayer(cfg, rng) for _ in range(cfg.n_stages)]
        self.stage_attn = [CrossAttentionBlock(cfg, rng) for _ in range(cfg.n_stages)]

    def sample(self, cloud: Tensor) -> SampledSet:
        cfg = self.cfg
        if len(cloud) < cfg.n_points:
            raise ValueError(f"input cloud has {len(cloud)} points, need at least {cfg.n_points}")
        samples = fps(cloud, cfg.n_points, start=cfg.fps_start % len(cloud))
        if cfg.order == "hilbert":
            perm = hilbert_order(samples.coords)
            samples = SampledSet(samples.indices[perm], T.take(samples.coords, perm))
        return samples

    def forward(self, cloud) -> HyperPointSet:
        cloud = as_tensor(cloud)
        samples = self.sample(cloud)
        feats = self.edge(cloud, samples)
        z = self.encoder(self.embed(T.concat([samples.coords, feats], axis=1)))
        coords, anchor_feats, attention = [], [], []
        for layer, attn in zip(self.stage_layers, self.stage_attn):
            z = layer(z)
            out = attn(samples.coords, z)
            coords.append(out.coords)
            anchor_feats.append(out.feats)
            attention.append(out.weights)
            z = out.refined
        return HyperPointSet(T.concat(coords, 0), T.concat(anchor_feats, 0), samples.coords, z,
                             samples.indices, attention)


def hyperpoint_generate(cloud, model: "HyperComplete") -> HyperPointSet:
    return model.generator(cloud)


class Spread(Module):
    """Global offsets for every hyperpoint from the pooled point/hyperpoint features."""

    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.n_hyper = cfg.n_hyper
        self.offset_mlp = MLP([cfg.channels, cfg.channels, 3 * cfg.n_hyper], rng, cfg.activation,
                              zero_last=cfg.zero_init_heads)

    def offsets(self, hps: HyperPointSet) -> Tensor:
        pooled = max_pool_rows(T.concat([hps.enhanced_feats, hps.hyper_feats], axis=0))
        return self.offset_mlp(pooled).reshape(self.n_hyper, 3)

    def forward(self, hps: HyperPointSet) -> Tensor:
        if hps.hyper_coords.shape != (self.n_hyper, 3):
            raise ConfigError(f"spread expects {self.n_hyper} hyperpoints, got {hps.hyper_coords.shape}")
        return hps.hyper_coords + self.offsets(hps)


def spread(hps: HyperPointSet, module: Spread) -> Tensor:
    return module(hps)


def group_standardize(g: Tensor, group: int, floor: float = SIGMA_FLOOR) -> Tensor:
    """(g - mean) / max(std, floor) over consecutive row groups of size ``group``.

    Statistics are per channel within each group (population std).
    """
    g = as_tensor(g)
    rows, ch = g.shape
    if rows % group:
        raise ValueError(f"{rows} rows do not split into groups of {group}")
    x = g.data.reshape(rows // group, group, ch)
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    sigma = np.sqrt((xc * xc).mean(axis=1, keepdims=True))
    clamped = sigma <= floor
    s = np.where(clamped, floor, sigma)
    xhat = xc / s

    def backward(grad):
        gr = grad.reshape(x.shape)
        gm = gr - gr.mean(axis=1, keepdims=True)
        corr = np.where(clamped, 0.0, xhat * (gr * xhat).mean(axis=1, keepdims=True))
        return ((gm - corr) / s).reshape(rows, ch),

    return _result(xhat.reshape(rows, ch), (g,), backward, "group_std")


def affine_modulate(g_in: Tensor, alpha: Tensor, lam: Tensor, group: int,
                    floor: float = SIGMA_FLOOR) -> Tensor:
    """g_out = lam_j + (g_in - mu) / sigma * alpha for every grid feature of centre j."""
    centers, ch = lam.shape
    normed = group_standardize(g_in, group, floor).reshape(centers, group, ch)
    out = normed * alpha + lam.reshape(centers, 1, ch)
    return out.reshape(centers * group, ch)


class DeformBlock(Module):
    def __init__(self, channels: int, width: int, rng: Rng, activation: str = "silu"):
        self.alpha_mlp = MLP([channels, channels, width], rng, activation)
        self.lambda_mlp = MLP([channels, width], rng, activation)
        self.grid_mlp = Linear(width, width, rng)
        self.activation = activation

    def modulate(self, grid_feats: Tensor, decoder_feats: Tensor, group: int) -> Tensor:
        alpha = self.alpha_mlp(max_pool_rows(decoder_feats))
        lam = self.lambda_mlp(decoder_feats)
        return affine_modulate(grid_feats, alpha, lam, group)

    def forward(self, grid_feats: Tensor, decoder_feats: Tensor, group: int) -> Tensor:
        act = get_activation(self.activation)
        return act(self.grid_mlp(self.modulate(grid_feats, decoder_feats, group)))


def deform_block(grid_feats: Tensor, decoder_feats: Tensor, block: DeformBlock, group: int) -> Tensor:
    return block(grid_feats, decoder_feats, group)


def make_grid(side: int, span: float) -> np.ndarray:
    """side x side lattice over [-span, span]^2, row-major, shape [side*side, 2]."""
    ticks = np.linspace(-span, span, side) if side > 1 else np.zeros(1)
    u, v = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=1)


class PointDeformation(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        c, w = cfg.channels, cfg.deform_width
        self.k = cfg.grid_points
        self.grid = make_grid(cfg.grid_side, cfg.grid_span)
        self.embed = Linear(c + 3, c, rng)
        self.decoder = MambaStack(c, cfg.decoder_depth, rng, cfg.state_size, cfg.conv_width,
                                  cfg.mlp_ratio, cfg.activation)
        self.grid_lift = Linear(2, w, rng)
        self.blocks = [DeformBlock(c, w, rng, cfg.activation) for _ in range(cfg.deform_blocks)]
        self.to_offset = Linear(w, 3, rng, zero_init=cfg.zero_init_heads)

    def forward(self, centers: Tensor, feats: Tensor) -> Tensor:
        p = centers.shape[0]
        f_de = self.decoder(self.embed(T.concat([centers, feats], axis=1)))
        g = self.grid_lift(Tensor(self.grid))                                 # [K, W]
        w = g.shape[1]
        g = T.broadcast_to(g.reshape(1, self.k, w), (p, self.k, w)).reshape(p * self.k, w)
        for block in self.blocks:
            g = block(g, f_de, self.k)
        offsets = self.to_offset(g).reshape(p, self.k, 3)
        base = T.broadcast_to(centers.reshape(p, 1, 3), (p, self.k, 3))
        return (base + offsets).reshape(p * self.k, 3)


def point_deformation(centers: Tensor, feats: Tensor, module: PointDeformation) -> Tensor:
    return module(centers, feats)


class HyperComplete(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = Rng(cfg.seed)
        self.generator = HyperPointGenerator(cfg, rng)
        self.spread = Spread(cfg, rng)
        self.deform = PointDeformation(cfg, rng)

    def forward(self, cloud) -> Completion:
        hps = self.generator(cloud)
        spread_coords = self.spread(hps)
        centers = T.concat([hps.sampled_coords, spread_coords], axis=0)
        feats = T.concat([hps.enhanced_feats, hps.hyper_feats], axis=0)
        points = self.deform(centers, feats)
        return Completion(points, centers, hps, self.cfg.grid_points)


def forward(cloud, model: HyperComplete) -> Completion:
    return model(cloud)

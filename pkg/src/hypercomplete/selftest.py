"""Invariant checks runnable from the command line."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import metrics, ssm
from . import tensor as T
from .config import ModelConfig
from .model import HyperComplete
from .nn import LayerNorm, Linear, Rng, depthwise_conv1d, parameter
from .oracles import brute_force_fps, brute_force_mst_weight, gradcheck
from .points import fps
from .tensor import Tensor

# published size of the full-scale model, for the informational count comparison
PUBLISHED_PARAMS = 34.06e6


@dataclass
class CheckResult:
    name: str
    tolerance: float
    observed: float
    passed: bool
    seconds: float = 0.0
    note: str = ""


def _corrupted_scan(x, delta, a, b, c, exact_zoh=False):
    y = ssm.scan(x, delta, a, b, c, exact_zoh)
    return T.add(y, 1e-6)


def check_scan_equivalence(scan_fn, trials: int = 10, max_len: int = 128) -> float:
    r = np.random.default_rng(11)
    worst = 0.0
    for _ in range(trials):
        length = int(r.integers(1, max_len + 1))
        ch, s = 8, 16
        x = r.normal(size=(length, ch))
        delta = np.exp(r.uniform(np.log(1e-3), 0.0, (length, ch)))
        a = -np.exp(r.normal(size=(ch, s)))
        b, c = r.normal(size=(length, s)), r.normal(size=(length, s))
        with T.no_grad():
            y = scan_fn(x, delta, a, b, c).data
        worst = max(worst, float(np.abs(y - ssm.scan_reference(x, delta, a, b, c)).max()))
    return worst


def check_scan_chunked(trials: int = 10) -> float:
    r = np.random.default_rng(12)
    worst = 0.0
    for _ in range(trials):
        length = int(r.integers(1, 200))
        x = r.normal(size=(length, 8))
        delta = np.exp(r.uniform(np.log(1e-3), 0.0, (length, 8)))
        a = -np.exp(r.normal(size=(8, 16)))
        b, c = r.normal(size=(length, 16)), r.normal(size=(length, 16))
        y = ssm.scan_chunked(x, delta, a, b, c)
        worst = max(worst, float(np.abs(y - ssm.scan_reference(x, delta, a, b, c)).max()))
    return worst


def check_small_step() -> float:
    a_bar, _ = ssm.discretize_zoh(1e-9, np.array([[-1.0]]), np.array([1.0]))
    return abs(float(a_bar[0, 0]) - 1.0)


def check_half_life() -> float:
    a_bar, _ = ssm.discretize_zoh(1.0, np.array([[-math.log(2.0)]]), np.array([1.0]))
    return abs(float(a_bar[0, 0]) - 0.5)


def _param(r, *shape, positive=False):
    data = r.normal(size=shape)
    return parameter(np.abs(data) + 0.5 if positive else data)


def _case_scan(r, exact):
    length, ch, s = 6, 3, 4
    x, dl, a_log = _param(r, length, ch), _param(r, length, ch), _param(r, ch, s)
    b, c = _param(r, length, s), _param(r, length, s)
    return [x, dl, a_log, b, c], lambda: (ssm.scan(x, T.softplus(dl), -T.exp(a_log), b, c,
                                                    exact_zoh=exact) ** 2).sum()


def _case_module(module, x, fn):
    return [x] + module.parameters(), fn


def gradient_cases() -> dict[str, Callable]:
    """name -> builder(rng) returning (tensors, scalar loss closure) for every differentiable op."""
    from .model import group_standardize
    from .points import SampledSet, edge_conv, pairwise_sqdist
    from .nn import MLP, max_pool_rows

    def weights(r, *shape):
        return Tensor(r.normal(size=shape))

    cases = {
        "add": lambda r: (lambda a, b: ([a, b], lambda: ((a + b) ** 2).sum()))(_param(r, 3, 4), _param(r, 4)),
        "sub": lambda r: (lambda a, b: ([a, b], lambda: ((a - b) ** 3).sum()))(_param(r, 3, 4), _param(r, 3, 1)),
        "mul": lambda r: (lambda a, b: ([a, b], lambda: (a * b * a).sum()))(_param(r, 2, 3), _param(r, 2, 3)),
        "div": lambda r: (lambda a, b: ([a, b], lambda: (a / b).sum()))(_param(r, 5), _param(r, 5, positive=True)),
        "power": lambda r: (lambda a: ([a], lambda: (a ** 2.5).sum()))(_param(r, 4, positive=True)),
        "exp": lambda r: (lambda a: ([a], lambda: T.exp(a).sum()))(_param(r, 4)),
        "log": lambda r: (lambda a: ([a], lambda: T.log(a).sum()))(_param(r, 4, positive=True)),
        "sqrt": lambda r: (lambda a: ([a], lambda: T.sqrt(a).sum()))(_param(r, 4, positive=True)),
        "sigmoid": lambda r: (lambda a: ([a], lambda: (T.sigmoid(a) * a).sum()))(_param(r, 6)),
        "silu": lambda r: (lambda a: ([a], lambda: (T.silu(a) ** 2).sum()))(_param(r, 6)),
        "relu": lambda r: (lambda a: ([a], lambda: (T.relu(a) ** 2).sum()))(_param(r, 6)),
        "softplus": lambda r: (lambda a: ([a], lambda: (T.softplus(a) ** 2).sum()))(_param(r, 6)),
        "tanh": lambda r: (lambda a: ([a], lambda: T.tanh(a).sum()))(_param(r, 6)),
        "sum_mean": lambda r: (lambda a: ([a], lambda: (T.mean(a, axis=0) ** 2).sum() + T.tsum(a, axis=1).sum()))(_param(r, 3, 5)),
        "max_along": lambda r: (lambda a: ([a], lambda: (T.max_along(a, 1) ** 2).sum()))(_param(r, 4, 3, 2)),
        "reshape_transpose": lambda r: (lambda a, w: ([a], lambda: T.tanh(T.transpose(a.reshape(3, 4), (1, 0)) @ w).sum()))(_param(r, 2, 6), weights(r, 3)),
        "broadcast": lambda r: (lambda a, w: ([a], lambda: (T.broadcast_to(a, (4, 3)) ** 2 * w).sum()))(_param(r, 1, 3), weights(r, 4, 3)),
        "take": lambda r: (lambda a: ([a], lambda: (T.take(a, np.array([0, 2, 2, 4])) ** 2).sum()))(_param(r, 5, 3)),
        "concat_stack": lambda r: (lambda a, b: ([a, b], lambda: (T.concat([a, b]) ** 3).sum() + (T.stack([a, a]) ** 2).sum()))(_param(r, 2, 3), _param(r, 4, 3)),
        "matmul": lambda r: (lambda a, b: ([a, b], lambda: T.tanh(a @ b).sum()))(_param(r, 2, 3, 4), _param(r, 4, 5)),
        "softmax": lambda r: (lambda a, w: ([a], lambda: (T.softmax(a, axis=1) * w).sum()))(_param(r, 3, 5), weights(r, 3, 5)),
        "row_norm": lambda r: (lambda a: ([a], lambda: T.row_norm(a, axis=1).sum()))(_param(r, 5, 3)),
        "linear": lambda r: (lambda m, x: _case_module(m, x, lambda: T.tanh(m(x)).sum()))(Linear(4, 3, Rng(1)), _param(r, 5, 4)),
        "layer_norm": lambda r: (lambda m, x, w: _case_module(m, x, lambda: (m(x) * w).sum()))(LayerNorm(6), _param(r, 4, 6), weights(r, 4, 6)),
        "depthwise_conv": lambda r: (lambda x, k: ([x, k], lambda: (depthwise_conv1d(x, k) ** 2).sum()))(_param(r, 7, 3), _param(r, 3, 4)),
        "max_pool_rows": lambda r: (lambda x: ([x], lambda: (max_pool_rows(x) ** 2).sum()))(_param(r, 6, 4)),
        "mlp": lambda r: (lambda m, x: _case_module(m, x, lambda: (m(x) ** 2).sum()))(MLP([3, 5, 2], Rng(2)), _param(r, 4, 3)),
        "scan_simplified": lambda r: _case_scan(r, False),
        "scan_exact_hold": lambda r: _case_scan(r, True),
        "mamba_block": lambda r: (lambda m, z: _case_module(m, z, lambda: m(z).sum()))(ssm.MambaBlock(4, Rng(4), state_size=3, conv_width=3), _param(r, 7, 4)),
        "group_standardize": lambda r: (lambda x, w: ([x], lambda: (group_standardize(x, 4) * w).sum()))(_param(r, 12, 3), weights(r, 12, 3)),
        "pairwise_sqdist": lambda r: (lambda a, b: ([a, b], lambda: (pairwise_sqdist(a, b) ** 2).sum()))(_param(r, 4, 3), _param(r, 5, 3)),
        "edge_conv": lambda r: (lambda pts, m: (m.parameters(), lambda: (edge_conv(pts, SampledSet(np.array([0, 4, 7]), Tensor(pts[[0, 4, 7]])), 4, m) ** 2).sum()))(r.normal(size=(10, 3)), MLP([6, 5, 3], Rng(5))),
        "chamfer_l1": lambda r: (lambda a, b: ([a, b], lambda: metrics.chamfer(a, b, "l1")))(_param(r, 12, 3), _param(r, 16, 3)),
        "chamfer_l2": lambda r: (lambda a, b: ([a, b], lambda: metrics.chamfer(a, b, "l2")))(_param(r, 12, 3), _param(r, 16, 3)),
        "tree_loss": lambda r: (lambda a: ([a], lambda: metrics.tree_loss(a, 1.0)))(_param(r, 7, 3)),
    }
    return cases


def op_gradient_errors(seed: int = 3) -> dict[str, float]:
    r = np.random.default_rng(seed)
    out = {}
    for name, build in gradient_cases().items():
        tensors, fn = build(r)
        out[name] = gradcheck(fn, tensors)
    return out


def check_op_gradients() -> float:
    return max(op_gradient_errors().values())


def tiny_config(**kw) -> ModelConfig:
    base = dict(n_points=8, n_hyper=8, n_anchors=4, grid_points=4, channels=8, heads=2,
                edge_k=4, edge_hidden=8, deform_width=8, encoder_depth=2, decoder_depth=2,
                state_size=4, seed=5)
    base.update(kw)
    return ModelConfig(**base)


def tiny_problem(seed: int = 0):
    r = np.random.default_rng(seed)
    partial = r.normal(size=(24, 3)) * 0.4
    gt = r.normal(size=(40, 3)) * 0.5
    return partial, gt


def check_pipeline_gradients(samples: int = 3) -> float:
    cfg = tiny_config()
    model = HyperComplete(cfg)
    partial, gt = tiny_problem()

    def fn():
        return metrics.total_loss(model(partial), gt, cfg.zeta, cfg.tau, cfg.expan_norm)[0]

    return gradcheck(fn, model.parameters(), samples=samples, rng=np.random.default_rng(1))


def check_mst(trials: int = 50) -> float:
    r = np.random.default_rng(21)
    worst = 0.0
    for _ in range(trials):
        pts = r.uniform(-1, 1, (int(r.integers(4, 8)), 3))
        worst = max(worst, abs(metrics.mst(pts).total - brute_force_mst_weight(pts)))
    return worst


def check_fps(trials: int = 10) -> float:
    r = np.random.default_rng(22)
    mismatches = 0
    for _ in range(trials):
        pts = r.normal(size=(int(r.integers(2, 33)), 3))
        n_s = int(r.integers(1, len(pts) + 1))
        mismatches += list(fps(pts, n_s).indices) != brute_force_fps(pts, n_s)
    return float(mismatches)


def check_metric_identities() -> float:
    r = np.random.default_rng(23)
    a, b = r.normal(size=(30, 3)), r.normal(size=(20, 3))
    errs = [
        abs(metrics.cd_value(a, b, "l1") - metrics.cd_value(b, a, "l1")),
        metrics.cd_value(a, a, "l2"),
        abs(metrics.cd_value(2 * a, 2 * b, "l1") - 2 * metrics.cd_value(a, b, "l1")),
        abs(metrics.cd_value(2 * a, 2 * b, "l2") - 4 * metrics.cd_value(a, b, "l2")),
        abs(metrics.cd_value([[0, 0, 0], [1, 0, 0]], [[0, 0, 0]], "l1") - 0.5),
        abs(metrics.cd_value([[0, 0, 0]], [[1, 0, 0]], "l2") - 2.0),
        abs(metrics.f_score([[0, 0, 0], [10, 0, 0]], [[0, 0, 0]], 1.0) - 2 / 3),
        abs(metrics.fidelity([[0, 0, 0]], [[3, 4, 0]]) - 5.0),
        abs(metrics.f_score(a, a, 0.01) - 1.0),
        metrics.fidelity(a[:5], a),
    ]
    return float(max(errs))


def count_default_parameters() -> int:
    return HyperComplete(ModelConfig()).num_parameters()


def run_selftest(corrupt_scan: bool = False, include_params: bool = True) -> list[CheckResult]:
    scan_fn = _corrupted_scan if corrupt_scan else ssm.scan
    checks: list[tuple[str, float, Callable[[], float]]] = [
        ("scan_vs_loop", 1e-10, lambda: check_scan_equivalence(scan_fn)),
        ("scan_chunked_vs_loop", 1e-10, check_scan_chunked),
        ("zoh_small_step", 1e-8, check_small_step),
        ("zoh_half_life", 1e-12, check_half_life),
        ("op_gradients", 1e-4, check_op_gradients),
        ("pipeline_gradients", 1e-3, check_pipeline_gradients),
        ("mst_brute_force", 1e-12, check_mst),
        ("fps_brute_force", 0.0, check_fps),
        ("metric_identities", 1e-12, check_metric_identities),
    ]
    results = []
    for name, tol, fn in checks:
        t0 = time.perf_counter()
        observed = fn()
        results.append(CheckResult(name, tol, observed, observed <= tol, time.perf_counter() - t0))
    if include_params:
        t0 = time.perf_counter()
        n = count_default_parameters()
        dev = n / PUBLISHED_PARAMS - 1.0
        results.append(CheckResult("parameter_count", 0.30, abs(dev), True,
                                   time.perf_counter() - t0,
                                   note=f"{n / 1e6:.2f} M at channels=384 vs 34.06 M ({dev:+.1%}), informational"))
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'check':<22} {'tolerance':>10} {'observed':>12} {'time[s]':>8}  result"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<22} {r.tolerance:>10.1e} {r.observed:>12.3e} {r.seconds:>8.2f}  {status}"
                     + (f"  ({r.note})" if r.note else ""))
    return "\n".join(lines)

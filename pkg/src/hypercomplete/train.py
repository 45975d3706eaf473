"""Desk-scale training loop over (partial, complete) pairs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .checkpoint import save_checkpoint
from .config import RunConfig
from .model import HyperComplete
from .optim import AdamW
from .tensor import no_grad

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, step: int, last_finite: int, last_loss: float):
        super().__init__(f"loss became non-finite at step {step}; "
                         f"last finite step {last_finite} (loss {last_loss:.6g})")
        self.step = step
        self.last_finite = last_finite


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    rec: list[float] = field(default_factory=list)
    expan: list[float] = field(default_factory=list)
    baseline_cd_l2: float = math.nan
    final_cd_l2: float = math.nan

    @property
    def reduction(self) -> float:
        return 1.0 - self.final_cd_l2 / self.baseline_cd_l2


def clip_grad_norm(params, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))
    if norm > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / norm
    return norm


def mean_cd_l2(model: HyperComplete, pairs) -> float:
    with no_grad():
        return float(np.mean([metrics.cd_value(model(p).points, g, "l2") for p, g in pairs]))


def toy_train(run: RunConfig, pairs: list[tuple[np.ndarray, np.ndarray]],
              model: HyperComplete | None = None) -> tuple[HyperComplete, TrainHistory]:
    """AdamW on the total loss; returns the trained model and its loss curve."""
    if not pairs:
        raise ValueError("toy_train needs at least one (partial, complete) pair")
    cfg = run.model
    model = model or HyperComplete(cfg)
    opt = AdamW(model.parameters(), lr=run.lr, betas=(run.beta1, run.beta2), eps=run.adam_eps,
                weight_decay=run.weight_decay)
    hist = TrainHistory(baseline_cd_l2=mean_cd_l2(model, pairs))
    batch = max(1, min(run.batch_size, len(pairs)))
    last_ok, last_loss = -1, math.nan
    for step in range(run.steps):
        opt.zero_grad()
        chosen = [pairs[(step * batch + j) % len(pairs)] for j in range(batch)]
        total = rec = expan = 0.0
        for partial, complete in chosen:
            out = model(partial)
            loss, parts = metrics.total_loss(out, complete, cfg.zeta, cfg.tau, cfg.expan_norm)
            if batch > 1:
                loss = loss * (1.0 / batch)
            loss.backward()
            total += parts["total"] / batch
            rec += parts["rec"] / batch
            expan += parts["expan"] / batch
        if not math.isfinite(total) or any(
                p.grad is not None and not np.all(np.isfinite(p.grad)) for p in opt.params):
            raise DivergenceError(step, last_ok, last_loss)
        if run.grad_clip > 0:
            clip_grad_norm(opt.params, run.grad_clip)
        opt.lr = run.lr_at(step)
        opt.step()
        hist.losses.append(total)
        hist.rec.append(rec)
        hist.expan.append(expan)
        last_ok, last_loss = step, total
        if run.log_every and step % run.log_every == 0:
            log.info("step %d loss %.6f rec %.6f expan %.6f", step, total, rec, expan)
    hist.final_cd_l2 = mean_cd_l2(model, pairs)
    return model, hist


def write_loss_csv(path: str | Path, hist: TrainHistory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["step", "loss", "rec", "expan"])
        for i, (l, r, e) in enumerate(zip(hist.losses, hist.rec, hist.expan)):
            w.writerow([i, repr(l), repr(r), repr(e)])


def save_run(out_dir: str | Path, model: HyperComplete, run: RunConfig, hist: TrainHistory) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.hcpt"
    save_checkpoint(ckpt, model, run.model)
    write_loss_csv(out / "loss.csv", hist)
    return ckpt

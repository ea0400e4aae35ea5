"""AdamW with decoupled weight decay and the single-scene overfit loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .losses import LossReport, total_loss
from .numerics import NonFiniteError, Tensor, no_grad
from .occupancy_head import miou, voxel_accuracy

log = logging.getLogger(__name__)


@dataclass
class OptimState:
    """Adam moments per parameter plus hyper-parameters.

    Weight decay is decoupled (applied as ``p -= lr * wd * p``) and only hits
    parameters of rank >= 2, so biases, norms and embeddings-vectors are left
    alone.
    """

    params: list[Tensor]
    lr: float = 1e-4
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros(p.shape) for p in self.params]
            self.v = [np.zeros(p.shape) for p in self.params]

    def apply(self):
        """One AdamW update from the gradients currently stored on the parameters."""
        self.step += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for p, m, v in zip(self.params, self.m, self.v):
            g = np.zeros(p.shape) if p.grad is None else p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if p.ndim >= 2 and self.weight_decay:
                p.data = p.data * (1.0 - self.lr * self.weight_decay)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(loss_fn: Callable[[], tuple[Tensor, LossReport]], opt: OptimState) -> LossReport:
    """Forward, backward and one optimizer update.

    A non-finite loss or gradient aborts before any parameter changes.
    """
    for p in opt.params:
        p.grad = None
    try:
        loss, report = loss_fn()
    except NonFiniteError as err:
        raise NonFiniteError(f"train_step {opt.step + 1}: {err.op}", err.count) from err
    loss.backward()
    bad = [i for i, p in enumerate(opt.params)
           if p.grad is not None and not np.all(np.isfinite(p.grad))]
    if bad:
        raise NonFiniteError(f"train_step {opt.step + 1}: gradient of parameter(s) {bad}", len(bad))
    opt.apply()
    return report


@dataclass
class OverfitResult:
    rows: list[list[float]]
    final_labels: np.ndarray
    final_probs: np.ndarray
    miou: float
    accuracy: float
    steps: int
    seconds: float


CSV_HEADER = "step,l_ce,l_geo,l_sem,l_total,mIoU"


def format_row(row) -> str:
    step, *vals = row
    return ",".join([str(int(step))] + [repr(float(v)) for v in vals])


def overfit(model, images, geom, labels: np.ndarray, steps: int, lr: float = 1e-4,
            weight_decay: float = 1e-2, eval_every: int = 50,
            on_row: Callable[[list], None] | None = None, presence: str = "gt") -> OverfitResult:
    """Train ``model`` on one scene; evaluate at step 0, every ``eval_every`` and at the end."""
    C = model.cfg.C
    opt = OptimState(model.parameters(), lr=lr, weight_decay=weight_decay)
    rows: list[list[float]] = []
    t0 = time.perf_counter()

    def loss_fn():
        return total_loss(model(images, geom), labels, presence)

    def evaluate(step: int, report: LossReport):
        with no_grad():
            probs = model(images, geom).data
        pred = np.argmax(probs, axis=0)
        _, m = miou(pred, labels, C)
        row = [step, *report.row(), m]
        rows.append(row)
        if on_row is not None:
            on_row(row)
        log.info("step %d total %.5f mIoU %.4f acc %.4f", step, report.l_total, m,
                 voxel_accuracy(pred, labels))
        return probs

    with no_grad():
        _, report = loss_fn()
    probs = evaluate(0, report)
    for step in range(1, steps + 1):
        report = train_step(loss_fn, opt)
        if step % eval_every == 0 or step == steps:
            # the report holds the loss before this step's update
            probs = evaluate(step, report)
    pred = np.argmax(probs, axis=0)
    _, m = miou(pred, labels, C)
    return OverfitResult(rows, pred, probs, m, voxel_accuracy(pred, labels), steps,
                         time.perf_counter() - t0)

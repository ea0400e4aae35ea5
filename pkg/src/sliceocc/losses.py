"""Cross-entropy and scene-class affinity losses over voxel probabilities.

All losses take probabilities ``[C, ...]`` and integer labels ``[...]``
(class 0 is empty).  Every logarithm clamps its argument at ``EPS`` first.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import NumericsError, Tensor, as_tensor, clamp_min, log, tsum

EPS = 1e-12


class DegenerateBatchError(NumericsError):
    pass


def _flatten(probs: Tensor, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.shape[1:] != labels.shape:
        raise NumericsError("loss", "probability/label dims differ", expected=labels.shape,
                            got=probs.shape[1:])
    C = probs.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise NumericsError("loss", "label out of range", expected=f"< {C}",
                            got=int(labels.max()))
    return probs.reshape(C, -1), labels.reshape(-1)


def loss_ce(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the labelled class."""
    p, y = _flatten(probs, labels)
    picked = p[y, np.arange(y.size)]
    return -tsum(log(clamp_min(picked, EPS))) * (1.0 / y.size)


def _scal_terms(p: Tensor, onehot: np.ndarray, use_class: np.ndarray) -> tuple[Tensor, list]:
    """Sum over used classes of -(log P + log R + log S), plus per-class diagnostics.

    ``p`` and ``onehot`` are [K, N].  A term whose denominator is zero (no
    positives or no negatives for that class) is left out.
    """
    pos = onehot.sum(axis=1)
    neg = onehot.shape[1] - pos
    tp = tsum(p * onehot, axis=1)
    mass = tsum(p, axis=1)
    tn = tsum((1.0 - p) * (1.0 - onehot), axis=1)

    prec = tp / clamp_min(mass, EPS)
    rec = tp * (1.0 / np.maximum(pos, 1.0))
    spec = tn * (1.0 / np.maximum(neg, 1.0))

    w_prec = use_class.astype(np.float64)
    w_rec = (use_class & (pos > 0)).astype(np.float64)
    w_spec = (use_class & (neg > 0)).astype(np.float64)
    lp = log(clamp_min(prec, EPS))
    lr = log(clamp_min(rec, EPS))
    ls = log(clamp_min(spec, EPS))
    total = -(tsum(lp * w_prec) + tsum(lr * w_rec) + tsum(ls * w_spec))
    diag = [
        {"class": int(k), "precision": float(prec.data[k]), "recall": float(rec.data[k]),
         "specificity": float(spec.data[k])}
        for k in np.flatnonzero(use_class)
    ]
    return total, diag


def loss_scal(probs: Tensor, labels: np.ndarray, mode: str = "semantic",
              presence: str = "gt", details: list | None = None) -> Tensor:
    """Scene-class affinity loss.

    For each class c in use, with predicted mass p_c and ground-truth mask y_c:
    precision = sum(p_c y_c) / sum(p_c), recall = sum(p_c y_c) / sum(y_c),
    specificity = sum((1 - p_c)(1 - y_c)) / sum(1 - y_c); the loss is the
    mean over classes of -(log precision + log recall + log specificity).

    ``mode="geometric"`` scores the single class "occupied" with probability
    1 - P(empty) against labels != 0.  ``presence="gt"`` uses classes that
    occur in the labels; ``"gt_or_pred"`` also uses classes with any
    predicted mass.
    """
    p, y = _flatten(probs, labels)
    if mode == "geometric":
        occ = 1.0 - p[0:1]
        onehot = (y != 0).astype(np.float64)[None, :]
        use = onehot.sum(axis=1) > 0
        if presence == "gt_or_pred":
            use |= occ.data.sum(axis=1) > 0
        q = occ
    elif mode == "semantic":
        C = p.shape[0]
        onehot = (y[None, :] == np.arange(C)[:, None]).astype(np.float64)
        use = onehot.sum(axis=1) > 0
        if presence == "gt_or_pred":
            use |= p.data.sum(axis=1) > 0
        q = p
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if presence not in ("gt", "gt_or_pred"):
        raise ValueError(f"unknown presence rule {presence!r}")
    n_used = int(use.sum())
    if n_used == 0:
        raise DegenerateBatchError("loss_scal", f"no class present ({mode} mode)")
    total, diag = _scal_terms(q, onehot, use)
    if details is not None:
        details.extend(diag)
    return total * (1.0 / n_used)


@dataclass
class LossReport:
    l_ce: float
    l_geo: float
    l_sem: float
    l_total: float
    affinity: list = field(default_factory=list)

    def row(self) -> list[float]:
        return [self.l_ce, self.l_geo, self.l_sem, self.l_total]


def total_loss(probs: Tensor, labels: np.ndarray, presence: str = "gt") -> tuple[Tensor, LossReport]:
    """Unweighted sum of cross-entropy, geometric and semantic affinity losses."""
    details: list = []
    ce = loss_ce(probs, labels)
    geo = loss_scal(probs, labels, "geometric", presence)
    sem = loss_scal(probs, labels, "semantic", presence, details=details)
    total = ce + geo + sem
    l_ce, l_geo, l_sem = float(ce.data), float(geo.data), float(sem.data)
    report = LossReport(l_ce, l_geo, l_sem, l_ce + l_geo + l_sem, details)
    return total, report

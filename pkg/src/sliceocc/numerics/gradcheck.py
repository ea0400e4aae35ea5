"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, no_grad


@dataclass
class GradCheckReport:
    eps: float
    tol: float
    max_rel_err: float
    max_abs_err: float
    worst: tuple[int, tuple[int, ...]] | None
    per_param: list[float] = field(default_factory=list)
    n_checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} eps={self.eps:g} entries={self.n_checked} "
                f"max_rel_err={self.max_rel_err:.3e} (tol {self.tol:g})")


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps zero gradients from dividing by zero."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               tol: float = 1e-4, floor: float = 1e-8,
               entries: dict[int, np.ndarray] | None = None) -> GradCheckReport:
    """Compare ``backward`` gradients of scalar ``f()`` against central differences.

    ``f`` must rebuild its graph on every call and be deterministic.  Every
    entry of every parameter is perturbed unless ``entries`` maps a parameter
    position to the flat indices to check.
    """
    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("grad_check", 1)
    loss.backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    max_rel = 0.0
    max_abs = 0.0
    worst = None
    per_param = []
    n_checked = 0
    with no_grad():
        for k, p in enumerate(params):
            flat = p.data.reshape(-1)
            idx = range(flat.size) if entries is None or k not in entries else entries[k]
            worst_here = 0.0
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f().data)
                flat[i] = orig - eps
                down = float(f().data)
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NonFiniteError("grad_check", 1)
                num = (up - down) / (2 * eps)
                ana = analytic[k].reshape(-1)[i]
                err = float(rel_error(np.array(ana), np.array(num), floor))
                max_abs = max(max_abs, abs(ana - num))
                worst_here = max(worst_here, err)
                if err > max_rel:
                    max_rel = err
                    worst = (k, np.unravel_index(i, p.shape))
                n_checked += 1
            per_param.append(worst_here)
    return GradCheckReport(eps=eps, tol=tol, max_rel_err=max_rel, max_abs_err=max_abs,
                           worst=worst, per_param=per_param, n_checked=n_checked)

"""Finite-difference suites: each differentiable op on its own, then the whole pipeline.

Inputs are drawn at generic points (away from ReLU kinks and lattice lines)
because central differences straddling a kink measure a one-sided slope.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .geometry import SceneConfig
from .losses import loss_ce, loss_scal, total_loss
from .model import Geometry, ModelConfig, SliceOccModel
from .numerics import GradCheckReport, Rng, Tensor, grad_check
from .slice_attention import DeformAttnParams, deformable_attention
from .synthscene import generate_scene, render_views


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def _p(rng: Rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _weighted_sum(out: Tensor, rng: Rng) -> Tensor:
    # random projection so that no gradient entry is identically symmetric
    w = Tensor(rng.uniform(0.5, 1.5, out.shape))
    return (out * w).sum()


def _interior(rng: Rng, n: int, dims: int) -> np.ndarray:
    """Normalized points whose texel coordinates sit well inside cells of a 4-texel axis."""
    cell = rng.integers(0, 3, (n, dims)).astype(np.float64)
    frac = rng.uniform(0.2, 0.8, (n, dims))
    return (cell + frac) / 3.0


def op_cases(seed: int = 0) -> list[tuple[str, Callable[[], Tensor], list[Tensor]]]:
    """(name, scalar function, parameters) for every differentiable op."""
    rng = Rng(seed)
    cases = []

    a, b = _p(rng, 3, 4), _p(rng, 3, 4, lo=0.5, hi=2.0)
    proj = rng.spawn(1)
    cases.append(("arithmetic", lambda: _weighted_sum(
        nx.div(nx.mul(nx.add(a, b), nx.sub(a, b)), b) + nx.exp(a * 0.5) + nx.log(b)
        + nx.sqrt(b), Rng(1)), [a, b]))

    r = Tensor(rng.uniform(0.2, 1.0, (5,)) * rng.choice([-1.0, 1.0], 5), requires_grad=True)
    cases.append(("relu/clamp", lambda: _weighted_sum(
        nx.relu(r) + nx.clamp_min(r, 0.05 * float(np.sign(r.data[0]))), Rng(2)), [r]))

    m1, m2 = _p(rng, 3, 5), _p(rng, 5, 2)
    cases.append(("matmul", lambda: _weighted_sum(nx.matmul(m1, m2), Rng(3)), [m1, m2]))

    e1, e2 = _p(rng, 2, 3, 4), _p(rng, 2, 4, 5)
    cases.append(("einsum", lambda: _weighted_sum(nx.einsum("bij,bjk->bik", e1, e2), Rng(4)),
                  [e1, e2]))

    s = _p(rng, 3, 6, lo=-2, hi=2)
    mask = np.ones((3, 6), dtype=bool)
    mask[1, :2] = False
    cases.append(("softmax", lambda: _weighted_sum(nx.softmax(s, axis=1, mask=mask), Rng(5)), [s]))

    x, g, be = _p(rng, 4, 6), _p(rng, 6, lo=0.5, hi=1.5), _p(rng, 6)
    cases.append(("layer_norm", lambda: _weighted_sum(nx.layer_norm(x, g, be), Rng(6)),
                  [x, g, be]))

    t = _p(rng, 5, 3)
    idx = np.array([4, 0, 0, 2, 3, 4, 1])
    seg = np.array([0, 0, 1, 1, 1, 2, 2])
    cases.append(("take/segment_sum", lambda: _weighted_sum(
        nx.segment_sum(nx.take(t, idx), seg, 3), Rng(7)), [t]))

    c1, c2 = _p(rng, 2, 3), _p(rng, 2, 3)
    cases.append(("concat/stack/reshape", lambda: _weighted_sum(
        nx.concat([nx.stack([c1, c2], axis=0).reshape(4, 3), c1], axis=0).transpose(1, 0)[1:, ::2],
        Rng(8)), [c1, c2]))

    fm = _p(rng, 3, 4, 4)
    pts = Tensor(_interior(rng, 6, 2), requires_grad=True)
    cases.append(("bilinear_sample", lambda: _weighted_sum(nx.bilinear_sample(fm, pts), Rng(9)),
                  [fm, pts]))

    vol = _p(rng, 2, 4, 4, 4)
    pts3 = Tensor(_interior(rng, 6, 3), requires_grad=True)
    cases.append(("trilinear_sample", lambda: _weighted_sum(nx.trilinear_sample(vol, pts3),
                                                            Rng(10)), [vol, pts3]))

    gfm = _p(rng, 2, 4, 5, 3)
    group = np.array([0, 1, 1, 0])
    tex = Tensor(rng.integers(0, 3, (4, 3, 2)) + rng.uniform(0.2, 0.8, (4, 3, 2)),
                 requires_grad=True)
    wts = _p(rng, 4, 3)
    cases.append(("weighted_gather2d", lambda: _weighted_sum(
        nx.weighted_gather2d(gfm, group, tex, wts), Rng(11)), [gfm, tex, wts]))

    cx, cw, cb = _p(rng, 2, 3, 4, 3), _p(rng, 3, 2, 3, 3, 3), _p(rng, 3)
    cases.append(("conv3d", lambda: _weighted_sum(nx.conv3d(cx, cw, cb), Rng(12)), [cx, cw, cb]))

    dx, dw, db = _p(rng, 2, 5, 4), _p(rng, 3, 2, 3, 3), _p(rng, 3)
    cases.append(("conv2d", lambda: _weighted_sum(nx.conv2d(dx, dw, db), Rng(13)), [dx, dw, db]))

    params = DeformAttnParams(8, 2, 3, 1, proj)
    _jitter(params.parameters(), Rng(14), 0.3)
    q = _p(rng, 5, 8)
    val = _p(rng, 8, 4, 4)
    refs = rng.uniform(0.1, 0.9, (5, 2))
    cases.append(("deformable_attention", lambda: _weighted_sum(
        deformable_attention(q, refs, val, params), Rng(15)), [q, val, *params.parameters()]))

    logits = _p(rng, 4, 3, 2, 2, lo=-2, hi=2)
    labels = np.array(rng.integers(0, 4, (3, 2, 2)))
    labels[0, 0, 0], labels[1, 0, 0] = 0, 1
    cases.append(("losses", lambda: _loss_mix(logits, labels), [logits]))
    return cases


def _loss_mix(logits: Tensor, labels: np.ndarray) -> Tensor:
    probs = nx.softmax(logits, axis=0)
    return (loss_ce(probs, labels) + loss_scal(probs, labels, "semantic")
            + loss_scal(probs, labels, "geometric"))


def _jitter(params: list[Tensor], rng: Rng, scale: float):
    for p in params:
        p.data = p.data + rng.uniform(-scale, scale, p.shape)


def check_ops(eps: float = 1e-4, tol: float = 1e-6, seed: int = 0) -> list[SuiteResult]:
    return [SuiteResult(name, grad_check(f, ps, eps=eps, tol=tol))
            for name, f, ps in op_cases(seed)]


def toy_pipeline(seed: int = 0):
    """One-layer model, S=2, 4x4 slices, 2 views, D=8, with parameters moved off init.

    Returns ``(scalar loss function, model)``.
    """
    cfg = SceneConfig(W=4, L=4, S=2, H_v=4, C=4, layers=1, num_views=2)
    scene = generate_scene(seed, 2, stacking=1, cfg=cfg, num_classes=4, num_views=2,
                           image_size=(12, 12))
    images = render_views(scene)
    geom = Geometry(cfg, scene.cameras)
    model = SliceOccModel(cfg, ModelConfig(D=8, heads=2, points=2, in_channels=4), seed)
    # zero-initialized offsets sample exactly on texel centres, where bilinear
    # interpolation has a kink; a small generic perturbation avoids that
    _jitter(model.parameters(), Rng(seed + 1000), 0.05)

    def f() -> Tensor:
        return total_loss(model(images, geom), scene.gt)[0]

    return f, model


def check_pipeline(eps: float = 1e-5, tol: float = 1e-4, seed: int = 0) -> SuiteResult:
    f, model = toy_pipeline(seed)
    return SuiteResult("pipeline", grad_check(f, model.parameters(), eps=eps, tol=tol))

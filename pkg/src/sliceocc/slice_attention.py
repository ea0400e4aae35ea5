"""Slice queries and the decoder layer: planar and sliced-spatial cross-attention.

Query tensors are stacked level-major: a floor (or ceiling) query set is a
``[S * T, D]`` tensor, ``T = W * L`` tokens per level in the plane order of
:mod:`sliceocc.geometry`.  Value maps are channels-last ``[n_maps, H, W, D]``.

Deformable attention distributes each head's ``points`` sampling points over
the ``R`` reference points of a query round-robin (point ``k`` uses reference
``k % R``); offsets are predicted in texel units of the sampled level.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ROLES, ReferencePointSet, SceneConfig
from .numerics import (LayerNorm, Linear, Module, NumericsError, Rng, Tensor, concat, gather2d,
                       relu, segment_sum, softmax, take, weighted_gather2d)


@dataclass
class SliceQuerySet:
    """Floor and ceiling queries for all S levels, ``[S*T, D]`` each."""

    floor: Tensor
    ceiling: Tensor
    S: int

    @property
    def D(self) -> int:
        return self.floor.shape[1]

    @property
    def T(self) -> int:
        return self.floor.shape[0] // self.S

    def level(self, i: int, role: str) -> Tensor:
        """Queries of level ``i`` (1-based) for one role, ``[T, D]``."""
        src = self.floor if role == "floor" else self.ceiling
        return src[(i - 1) * self.T:i * self.T]


class DeformAttnParams(Module):
    """Projections of one multi-scale deformable attention block.

    The offset projection starts at zero so the first forward pass samples
    exactly at the reference points.
    """

    def __init__(self, dim: int, heads: int, points: int, levels: int, rng: Rng):
        if dim % heads:
            raise NumericsError("DeformAttnParams", "dim must be divisible by heads",
                                got=(dim, heads))
        self.dim, self.heads, self.points, self.levels = dim, heads, points, levels
        self.offset = Linear(dim, heads * levels * points * 2, rng, zero=True)
        self.weight = Linear(dim, heads * levels * points, rng)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)


def deform_core(params: DeformAttnParams, query: Tensor, values: list[Tensor],
                refs: np.ndarray, q_idx: np.ndarray | None = None,
                map_idx: np.ndarray | None = None, ref_mask: np.ndarray | None = None,
                trace: list | None = None) -> Tensor:
    """Deformable attention over (query, map) pairs, before the output projection.

    ``query`` is [Nq, D]; pair ``m`` couples query ``q_idx[m]`` with value map
    ``map_idx[m]`` using references ``refs[m]`` ([R, 2], extent-normalized x, y)
    and the optional boolean ``ref_mask[m]`` ([R]).  ``values[l]`` is the level-l
    map stack [n_maps, H_l, W_l, D].  Returns [M, D].
    """
    heads, P, Lv, D = params.heads, params.points, params.levels, params.dim
    if len(values) != Lv:
        raise NumericsError("deformable_attention", "value level count", expected=Lv,
                            got=len(values))
    refs = np.asarray(refs, dtype=np.float64)
    M, R = refs.shape[:2]
    Nq = query.shape[0]
    if q_idx is None:
        q_idx = np.arange(Nq)
    if map_idx is None:
        map_idx = np.zeros(M, dtype=np.int64)
    if q_idx.shape[0] != M or map_idx.shape[0] != M:
        raise NumericsError("deformable_attention", "pair index length", expected=M,
                            got=(q_idx.shape[0], map_idx.shape[0]))
    Dh = D // heads

    off = params.offset(query).reshape(Nq, heads, Lv, P, 2)
    logit = params.weight(query).reshape(Nq, heads, Lv * P)
    if not (M == Nq and np.array_equal(q_idx, np.arange(Nq))):
        off = take(off, q_idx)
        logit = take(logit, q_idx)

    ref_of_point = np.arange(P) % R
    mask = None
    if ref_mask is not None:
        pm = np.asarray(ref_mask, dtype=bool)[:, ref_of_point]  # [M, P]
        mask = np.tile(pm, (1, Lv))[:, None, :]
    weights = softmax(logit, axis=-1, mask=mask)

    group = (map_idx[:, None] * heads + np.arange(heads)[None, :]).reshape(-1)
    out = None
    for lvl, vmap in enumerate(values):
        n_maps, Hl, Wl, _ = vmap.shape
        v = params.value(vmap.reshape(-1, D)).reshape(n_maps, Hl, Wl, heads, Dh)
        v = v.transpose(0, 3, 1, 2, 4).reshape(n_maps * heads, Hl, Wl, Dh)
        base = refs[:, ref_of_point, :] * np.array([Wl, Hl], dtype=np.float64) - 0.5
        loc = off[:, :, lvl] + base[:, None, :, :]
        if trace is not None:
            trace.append((loc.data + 0.5) / np.array([Wl, Hl], dtype=np.float64))
        w_l = weights if Lv == 1 else weights[:, :, lvl * P:(lvl + 1) * P]
        part = weighted_gather2d(v, group, loc.reshape(M * heads, P, 2),
                                 w_l.reshape(M * heads, P))
        out = part if out is None else out + part
    return out.reshape(M, D)


def deformable_attention(query: Tensor, refs: np.ndarray, values, params: DeformAttnParams,
                         ref_mask: np.ndarray | None = None, trace: list | None = None) -> Tensor:
    """Single-map deformable attention: ``query`` [Nq, D], ``refs`` [Nq, R, 2] or [Nq, 2].

    ``values`` is a channels-first map [D, H, W] or a list of them (one per
    level).  Returns the output-projected result, [Nq, D].
    """
    if isinstance(values, Tensor):
        values = [values]
    refs = np.asarray(refs, dtype=np.float64)
    if refs.ndim == 2:
        refs = refs[:, None, :]
    maps = [v.transpose(1, 2, 0).reshape(1, v.shape[1], v.shape[2], v.shape[0]) for v in values]
    out = deform_core(params, query, maps, refs, ref_mask=ref_mask, trace=trace)
    return params.output(out)


# ---------------------------------------------------------------------------
# query initialisation
# ---------------------------------------------------------------------------
def init_content_queries(feats: Tensor, refset: ReferencePointSet, height_emb: Tensor,
                         diagnostics: dict | None = None) -> SliceQuerySet:
    """Sample the finest feature level at every level's anchors.

    ``feats`` is [V, Hf, Wf, D].  Each anchor averages its bilinear samples
    over the views it projects into (zero when none does); the level's height
    embedding ([S, D]) is then added.  Floor and ceiling start equal because
    both are sampled from the same anchors.
    """
    S, V, T = refset.anchor_hit.shape
    V_f, Hf, Wf, D = feats.shape
    if V_f != V:
        raise NumericsError("init_content_queries", "view count", expected=V, got=V_f)
    # pairs sorted by (level, token, view) so the mean is summed in view order
    hit = refset.anchor_hit.transpose(0, 2, 1)  # [S, T, V]
    lvl, tok, view = np.nonzero(hit)
    anchor_id = lvl * T + tok
    counts = np.bincount(anchor_id, minlength=S * T).astype(np.float64)
    if diagnostics is not None:
        diagnostics["anchors_without_view"] = int(np.sum(counts == 0))
    if anchor_id.size:
        pix = refset.anchor_img[lvl, view, tok] * np.array([Wf, Hf]) - 0.5
        sampled = gather2d(feats, view, Tensor(pix))
        summed = segment_sum(sampled, anchor_id, S * T)
        content = summed * (1.0 / np.maximum(counts, 1.0))[:, None]
    else:
        content = Tensor(np.zeros((S * T, D)))
    q = (content.reshape(S, T, D) + height_emb.reshape(S, 1, D)).reshape(S * T, D)
    return SliceQuerySet(floor=q, ceiling=q, S=S)


# ---------------------------------------------------------------------------
# planar cross-attention
# ---------------------------------------------------------------------------
def _plane_maps(x: Tensor, S: int, cfg: SceneConfig) -> Tensor:
    return x.reshape(S, cfg.ny, cfg.nx, x.shape[1])


def pca(queries: SliceQuerySet, cfg: SceneConfig, stage1: DeformAttnParams,
        stage2: DeformAttnParams, norm1: LayerNorm, norm2: LayerNorm,
        ref2d: np.ndarray, trace: list | None = None) -> SliceQuerySet:
    """Two-stage planar cross-attention at every slice level.

    Stage 1 updates each floor token from its level's ceiling plane; stage 2
    updates each ceiling token from the already-updated floor plane.  Both
    stages are pre-norm residual blocks sampling around ``ref2d``.
    """
    S = queries.S
    T = queries.T
    refs = np.tile(ref2d, (S, 1))[:, None, :]
    level_of = np.repeat(np.arange(S), T)

    qf = norm1(queries.floor)
    vc = _plane_maps(norm1(queries.ceiling), S, cfg)
    upd = stage1.output(deform_core(stage1, qf, [vc], refs, map_idx=level_of, trace=trace))
    floor = queries.floor + upd

    qc = norm2(queries.ceiling)
    vf = _plane_maps(norm2(floor), S, cfg)
    upd = stage2.output(deform_core(stage2, qc, [vf], refs, map_idx=level_of, trace=trace))
    ceiling = queries.ceiling + upd
    return SliceQuerySet(floor=floor, ceiling=ceiling, S=S)


# ---------------------------------------------------------------------------
# sliced spatial cross-attention
# ---------------------------------------------------------------------------
@dataclass
class SscaPlan:
    """Precomputed (token, view) pairs for all floor+ceiling tokens.

    Tokens are numbered floor levels 1..S then ceiling levels 1..S.  Pairs are
    sorted by token, then ascending view, and exist only for views in the
    token's hit set (any pillar point visible).
    """

    q_idx: np.ndarray
    view_idx: np.ndarray
    refs: np.ndarray
    ref_mask: np.ndarray
    counts: np.ndarray
    n_tokens: int

    @property
    def has_hit(self) -> np.ndarray:
        return self.counts > 0


def make_ssca_plan(cfg: SceneConfig, refset: ReferencePointSet) -> SscaPlan:
    T = cfg.W * cfg.L
    q_all, v_all, r_all, m_all = [], [], [], []
    for r, role in enumerate(ROLES):
        for i in range(1, cfg.S + 1):
            hit = refset.hit_mask[(i, role)]  # [V, T, N]
            img = refset.ref2d_img[(i, role)]  # [V, T, N, 2]
            any_hit = hit.any(axis=2).T  # [T, V]
            tok, view = np.nonzero(any_hit)
            offset = (r * cfg.S + (i - 1)) * T
            q_all.append(tok + offset)
            v_all.append(view)
            r_all.append(img[view, tok])
            m_all.append(hit[view, tok])
    n_tokens = 2 * cfg.S * T
    q_idx = np.concatenate(q_all).astype(np.int64)
    view_idx = np.concatenate(v_all).astype(np.int64)
    order = np.lexsort((view_idx, q_idx))
    refs = np.concatenate(r_all)[order]
    mask = np.concatenate(m_all)[order]
    q_idx, view_idx = q_idx[order], view_idx[order]
    counts = np.bincount(q_idx, minlength=n_tokens).astype(np.float64)
    return SscaPlan(q_idx, view_idx, refs, mask, counts, n_tokens)


def ssca(tokens: Tensor, feats: list[Tensor], plan: SscaPlan, params: DeformAttnParams,
         trace: list | None = None) -> Tensor:
    """Mean over hit views of deformable attention into each view's features.

    ``tokens`` [n_tokens, D] (already normalized); ``feats[l]`` is [V, H_l, W_l, D].
    Returns the residual update; tokens with an empty hit set get zero.
    """
    if tokens.shape[0] != plan.n_tokens:
        raise NumericsError("ssca", "token count", expected=plan.n_tokens, got=tokens.shape[0])
    D = tokens.shape[1]
    if plan.q_idx.size == 0:
        return Tensor(np.zeros((plan.n_tokens, D)))
    pair = deform_core(params, tokens, feats, plan.refs, q_idx=plan.q_idx,
                       map_idx=plan.view_idx, ref_mask=plan.ref_mask, trace=trace)
    mean = segment_sum(pair, plan.q_idx, plan.n_tokens) * \
        (1.0 / np.maximum(plan.counts, 1.0))[:, None]
    return params.output(mean) * plan.has_hit[:, None].astype(np.float64)


# ---------------------------------------------------------------------------
# decoder layer
# ---------------------------------------------------------------------------
class SliceOccLayer(Module):
    """PCA block, SSCA block and feed-forward block, each pre-norm residual."""

    def __init__(self, dim: int, heads: int, points: int, n_scales: int, rng: Rng,
                 ffn_ratio: int = 2, block_order: str = "pca_first"):
        if block_order not in ("pca_first", "ssca_first"):
            raise ValueError(f"unknown block_order {block_order!r}")
        self.block_order = block_order
        self.pca1 = DeformAttnParams(dim, heads, points, 1, rng)
        self.pca2 = DeformAttnParams(dim, heads, points, 1, rng)
        self.norm_pca1 = LayerNorm(dim)
        self.norm_pca2 = LayerNorm(dim)
        self.ssca = DeformAttnParams(dim, heads, points, n_scales, rng)
        self.norm_ssca = LayerNorm(dim)
        self.ffn_in = Linear(dim, ffn_ratio * dim, rng)
        self.ffn_out = Linear(ffn_ratio * dim, dim, rng)
        self.norm_ffn = LayerNorm(dim)

    def _pca(self, q, cfg, ref2d, trace):
        return pca(q, cfg, self.pca1, self.pca2, self.norm_pca1, self.norm_pca2, ref2d, trace)

    def _ssca(self, q: SliceQuerySet, feats, plan, trace) -> SliceQuerySet:
        tokens = concat([q.floor, q.ceiling], axis=0)
        tokens = tokens + ssca(self.norm_ssca(tokens), feats, plan, self.ssca, trace)
        n = q.floor.shape[0]
        return SliceQuerySet(floor=tokens[:n], ceiling=tokens[n:], S=q.S)

    def __call__(self, q: SliceQuerySet, feats: list[Tensor], plan: SscaPlan, cfg: SceneConfig,
                 ref2d: np.ndarray, trace: list | None = None) -> SliceQuerySet:
        if self.block_order == "pca_first":
            q = self._ssca(self._pca(q, cfg, ref2d, trace), feats, plan, trace)
        else:
            q = self._pca(self._ssca(q, feats, plan, trace), cfg, ref2d, trace)
        tokens = concat([q.floor, q.ceiling], axis=0)
        tokens = tokens + self.ffn_out(relu(self.ffn_in(self.norm_ffn(tokens))))
        n = q.floor.shape[0]
        return SliceQuerySet(floor=tokens[:n], ceiling=tokens[n:], S=q.S)

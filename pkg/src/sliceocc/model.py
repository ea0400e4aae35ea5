"""The full network: feature projection, slice queries, decoder layers, occupancy head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraParams, ReferencePointSet, SceneConfig, build_reference_set
from .numerics import Conv2d, LayerNorm, Linear, Module, Rng, Tensor, concat, param, relu, stack
from .occupancy_head import FcnHead, assemble_voxels, decode_probs
from .slice_attention import (SliceOccLayer, SliceQuerySet, SscaPlan, init_content_queries,
                              make_ssca_plan)


@dataclass
class ModelConfig:
    D: int = 64
    heads: int = 4
    points: int = 4
    in_channels: int = 5
    n_scales: int = 1
    block_order: str = "pca_first"
    head_depth: int = 2
    ffn_ratio: int = 2
    encoder: str = "linear"  # "linear" projection or "conv" toy encoder


class ToyEncoder(Module):
    """3x3 conv, ReLU, 1x1 projection; stands in for a pretrained image backbone."""

    def __init__(self, cin: int, dim: int, rng: Rng):
        self.conv = Conv2d(cin, dim, rng, kernel=3)
        self.proj = Linear(dim, dim, rng)

    def __call__(self, img: Tensor) -> Tensor:
        """[C_in, H, W] -> channels-last [H, W, D]."""
        h = relu(self.conv(img)).transpose(1, 2, 0)
        return self.proj(h)


class Geometry:
    """Camera-dependent constants shared by every forward pass on one rig."""

    def __init__(self, cfg: SceneConfig, cams: list[CameraParams]):
        self.cfg = cfg
        self.cams = cams
        self.refs: ReferencePointSet = build_reference_set(cfg, cams)
        self.plan: SscaPlan = make_ssca_plan(cfg, self.refs)


class SliceOccModel(Module):
    def __init__(self, cfg: SceneConfig, mcfg: ModelConfig, seed: int):
        rng = Rng(seed)
        self.cfg = cfg
        self.mcfg = mcfg
        D = mcfg.D
        if mcfg.encoder == "linear":
            self.encoder = Linear(mcfg.in_channels, D, rng)
        elif mcfg.encoder == "conv":
            self.encoder = ToyEncoder(mcfg.in_channels, D, rng)
        else:
            raise ValueError(f"unknown encoder {mcfg.encoder!r}")
        self.height_emb = param(rng.uniform(-1.0, 1.0, (cfg.S, D)) / np.sqrt(D))
        self.layers = [SliceOccLayer(D, mcfg.heads, mcfg.points, mcfg.n_scales, rng,
                                     mcfg.ffn_ratio, mcfg.block_order)
                       for _ in range(cfg.layers)]
        self.final_norm = LayerNorm(D)
        self.head = FcnHead(D, cfg.C, rng, mcfg.head_depth)
        self.diagnostics: dict = {}
        self.trace: list | None = None

    def encode(self, images: list[np.ndarray]) -> list[Tensor]:
        """Per-scale raw features [V, C_in, H, W] -> channels-last [V, H, W, D]."""
        if len(images) != self.mcfg.n_scales:
            raise ValueError(f"expected {self.mcfg.n_scales} scales, got {len(images)}")
        out = []
        for img in images:
            img = np.asarray(img, dtype=np.float64)
            V, C, H, W = img.shape
            if isinstance(self.encoder, Linear):
                flat = Tensor(img.transpose(0, 2, 3, 1).reshape(-1, C))
                out.append(self.encoder(flat).reshape(V, H, W, self.mcfg.D))
            else:
                out.append(stack([self.encoder(Tensor(img[v])) for v in range(V)], axis=0))
        return out

    def decode_queries(self, feats: list[Tensor], geom: Geometry) -> SliceQuerySet:
        q = init_content_queries(feats[0], geom.refs, self.height_emb, self.diagnostics)
        for layer in self.layers:
            q = layer(q, feats, geom.plan, self.cfg, geom.refs.ref2d, self.trace)
        tokens = self.final_norm(concat([q.floor, q.ceiling], axis=0))
        n = q.floor.shape[0]
        return SliceQuerySet(floor=tokens[:n], ceiling=tokens[n:], S=q.S)

    def __call__(self, images: list[np.ndarray], geom: Geometry) -> Tensor:
        """Class probabilities [C, X, Y, H_v]."""
        feats = self.encode(images)
        q = self.decode_queries(feats, geom)
        return decode_probs(assemble_voxels(q, self.cfg), self.head)

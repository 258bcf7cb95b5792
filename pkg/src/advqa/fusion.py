"""Spatio-temporal pooling into the unified visual token set.

A frame embedding [F, h, w, D] is reduced two ways: a mean over frames
gives one token per patch position (temporal block, N = h*w tokens) and
a mean over patch positions gives one token per frame (spatial block,
F tokens). Their concatenation, temporal block first, is the unified
feature with F + N rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

FRAMES_PER_CLIP = 8


@dataclass
class FrameEmbedding:
    """Per-frame patch tokens, stored flat as [F*N, D] with grid dims."""

    tokens: Tensor  # [F*N, D]
    frames: int
    grid_h: int
    grid_w: int

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def embed_dim(self) -> int:
        return self.tokens.shape[1]

    def as_grid(self) -> Tensor:
        """View as [F, h, w, D]."""
        return T.reshape(self.tokens, (self.frames, self.grid_h, self.grid_w, self.embed_dim))


@dataclass
class UnifiedVisualFeature:
    temporal_tokens: Tensor  # [N, D]
    spatial_tokens: Tensor   # [F, D]
    unified: Tensor          # [F+N, D], [temporal block, spatial block]


def pool_temporal(x: FrameEmbedding) -> Tensor:
    """Mean over frames per patch position: [F, N, D] -> [N, D]."""
    stacked = T.reshape(x.tokens, (x.frames, x.n_patches, x.embed_dim))
    return T.mean_over_axis(stacked, 0)


def pool_spatial(x: FrameEmbedding) -> Tensor:
    """Mean over patch positions per frame: [F, N, D] -> [F, D]."""
    stacked = T.reshape(x.tokens, (x.frames, x.n_patches, x.embed_dim))
    return T.mean_over_axis(stacked, 1)


def unify(t: Tensor, z: Tensor) -> UnifiedVisualFeature:
    """Concatenate temporal and spatial blocks into [F+N, D]."""
    if t.shape[1] != z.shape[1]:
        raise ShapeError(f"embed dims differ: temporal {t.shape} vs spatial {z.shape}")
    return UnifiedVisualFeature(temporal_tokens=t, spatial_tokens=z, unified=T.concat([t, z], axis=0))


def unified_feature(x: FrameEmbedding) -> UnifiedVisualFeature:
    return unify(pool_temporal(x), pool_spatial(x))


def separated_feature(x: FrameEmbedding) -> Tensor:
    """Ablation arm: per-frame spatially pooled tokens [F, D] only.

    The separated baseline feeds frame features straight through
    without the unified latent: no temporally pooled patch block, so
    per-patch texture detail is averaged away before the decoder."""
    return pool_spatial(x)


def sample_frame_indices(total_frames: int, count: int = FRAMES_PER_CLIP) -> list[int]:
    """Evenly spaced frame indices, first and last included."""
    if total_frames <= count:
        return list(range(total_frames))
    return [round(i * (total_frames - 1) / (count - 1)) for i in range(count)]


def sample_frames(frames: np.ndarray, count: int = FRAMES_PER_CLIP) -> np.ndarray:
    return frames[sample_frame_indices(frames.shape[0], count)]

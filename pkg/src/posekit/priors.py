"""Geometric prior fields and the training-time modality masking operator.

Two prior fields feed the encoder: the per-pixel raymap (see geometry.raymap)
and the depth/validity stack [D, M]. Depth values are passed through with no
normalization whatsoever, keeping the channel aligned with metric space.

Masking simulates absent or sparse sensors: whole fields are zeroed with
configured probabilities, and valid depth pixels can be subsampled to an
exact count. Every decision is keyed by (seed, stream_index), so pipelines
reproduce bit-identically regardless of worker scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import NonDivisibleShape


@dataclass(frozen=True)
class DepthMap:
    """Dense metric depth with a validity mask; invalid pixels hold 0."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask)
        if values.ndim != 2 or mask.shape != values.shape:
            raise ValueError("values and mask must be equal-shape 2-D arrays")
        if mask.dtype == bool:
            mask = mask.astype(np.uint8)
        else:
            mask = mask.astype(np.uint8, casting="unsafe")
            if not np.all((np.asarray(self.mask) == 0) | (np.asarray(self.mask) == 1)):
                raise ValueError("mask entries must be 0 or 1")
        valid = mask == 1
        if not np.all(np.isfinite(values[valid])) or np.any(values[valid] < 0.0):
            raise ValueError("valid depth values must be finite and non-negative")
        values = np.where(valid, values, 0.0)
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())

    @staticmethod
    def all_invalid(height: int, width: int) -> "DepthMap":
        return DepthMap(np.zeros((height, width)), np.zeros((height, width), dtype=np.uint8))


def stack_depth_mask(d: DepthMap) -> np.ndarray:
    """Joint H x W x 2 stack: channel 0 raw metric depth, channel 1 the mask.

    Channel 0 is a bit-exact passthrough; no rescaling, offset, or clipping.
    """
    return np.stack([d.values, d.mask.astype(np.float64)], axis=-1)


@dataclass(frozen=True)
class PatchGrid:
    """Patchified field: one row per patch, row-major over the patch grid.

    Within a patch the layout is row-major then channels-last, so each row
    has patch_size * patch_size * channels entries.
    """

    patches: np.ndarray
    patch_size: int
    channels: int
    grid_shape: tuple

    def __post_init__(self):
        gh, gw = self.grid_shape
        expected = (gh * gw, self.patch_size * self.patch_size * self.channels)
        if tuple(self.patches.shape) != expected:
            raise ValueError(f"patches shape {self.patches.shape} != {expected}")


def patchify(field: np.ndarray, p: int) -> PatchGrid:
    """Lossless rearrangement of an H x W x C field into P x P patches.

    Raises:
        NonDivisibleShape: H or W not divisible by p.
    """
    field = np.asarray(field)
    if field.ndim == 2:
        field = field[:, :, None]
    if field.ndim != 3:
        raise ValueError(f"expected H x W x C field, got shape {field.shape}")
    h, w, c = field.shape
    if p < 1 or h % p != 0 or w % p != 0:
        raise NonDivisibleShape(f"{h}x{w} field not divisible by patch size {p}")
    gh, gw = h // p, w // p
    patches = (
        field.reshape(gh, p, gw, p, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * gw, p * p * c)
    )
    return PatchGrid(patches=patches, patch_size=p, channels=c, grid_shape=(gh, gw))


def unpatchify(grid: PatchGrid) -> np.ndarray:
    """Exact inverse of patchify."""
    gh, gw = grid.grid_shape
    p, c = grid.patch_size, grid.channels
    return (
        grid.patches.reshape(gh, gw, p, p, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * p, gw * p, c)
    )


@dataclass(frozen=True)
class MaskPolicy:
    """Probabilities for the modality-masking operator, plus the pipeline seed."""

    p_drop_ray: float = 0.0
    p_drop_depth: float = 0.0
    sparse_keep_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_drop_ray", "p_drop_depth", "sparse_keep_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class DropFlags:
    """What mask_modality removed."""

    ray_dropped: bool
    depth_dropped: bool


def mask_modality(
    ray: np.ndarray | None,
    depth: DepthMap | None,
    policy: MaskPolicy,
    stream_index: int,
) -> tuple:
    """Randomly zero out whole prior fields, deterministically per stream.

    With probability p_drop_ray the raymap is replaced by all-zeros;
    independently, with probability p_drop_depth the depth map is replaced by
    an all-invalid map. Both draws always happen (in a fixed order) so the
    depth decision does not depend on whether a raymap was supplied.
    """
    g = rng.stream(policy.seed, stream_index, rng.LABEL_MODALITY)
    u_ray = g.random()
    u_depth = g.random()
    ray_dropped = ray is not None and u_ray < policy.p_drop_ray
    depth_dropped = depth is not None and u_depth < policy.p_drop_depth
    out_ray = np.zeros_like(ray) if ray_dropped else ray
    if depth_dropped:
        h, w = depth.values.shape
        out_depth = DepthMap.all_invalid(h, w)
    else:
        out_depth = depth
    return out_ray, out_depth, DropFlags(ray_dropped, depth_dropped)


def sparse_depth_sample(
    d: DepthMap, keep_fraction: float, seed: int, stream_index: int
) -> DepthMap:
    """Keep an exact-count uniform subset of the currently-valid pixels.

    The subset has round(keep_fraction * valid_count) members; dropped pixels
    get value 0 and mask 0. Deterministic under (seed, stream_index).
    """
    if not (0.0 <= keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must lie in [0, 1], got {keep_fraction}")
    valid_flat = np.flatnonzero(d.mask.reshape(-1))
    n = valid_flat.size
    k = int(math.floor(keep_fraction * n + 0.5))
    if k >= n:
        return d
    g = rng.stream(seed, stream_index, rng.LABEL_SPARSE)
    keep = valid_flat[g.permutation(n)[:k]]
    mask = np.zeros(d.mask.size, dtype=np.uint8)
    mask[keep] = 1
    mask = mask.reshape(d.mask.shape)
    return DepthMap(np.where(mask == 1, d.values, 0.0), mask)

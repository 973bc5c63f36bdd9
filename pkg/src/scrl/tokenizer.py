"""Space-time cube tokenization and tube masking.

A clip of shape (T, C, H, W) is losslessly rearranged into tokens of
2 frames x 16 x 16 pixels; the token grid is (T' = T/2, H' = H/16,
W' = W/16) in lexicographic (t', h', w') order. A tube mask picks spatial
positions once and replicates them over every temporal group, so masked
content can never be copied from a neighbouring frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError

CUBE_T, CUBE_H, CUBE_W = 2, 16, 16


@dataclass
class CubeGrid:
    cubes: np.ndarray          # (N_tok, D_cube)
    grid_dims: tuple[int, int, int]   # (T', H', W')
    channels: int

    @property
    def n_tokens(self):
        return self.cubes.shape[0]

    @property
    def cube_dim(self):
        return self.cubes.shape[1]

    def positions(self) -> np.ndarray:
        """(N_tok, 3) integer (t', h', w') triples in token order."""
        tp, hp, wp = self.grid_dims
        return np.stack(np.meshgrid(np.arange(tp), np.arange(hp), np.arange(wp),
                                    indexing="ij"), axis=-1).reshape(-1, 3)


@dataclass
class TubeMask:
    spatial_mask: np.ndarray   # (H', W') bool, True = masked
    grid_dims: tuple[int, int, int]

    @property
    def ratio(self):
        return float(self.spatial_mask.mean())

    def token_mask(self) -> np.ndarray:
        """(N_tok,) bool in lexicographic token order; tube-replicated."""
        tp = self.grid_dims[0]
        return np.tile(self.spatial_mask.reshape(-1), tp)

    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.token_mask())

    def visible_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.token_mask())


def cubify(frames: np.ndarray) -> CubeGrid:
    """Rearrange (T, C, H, W) pixels into non-overlapping space-time cubes."""
    t, c, h, w = frames.shape
    if t % CUBE_T or h % CUBE_H or w % CUBE_W:
        raise DimensionError(f"clip dims ({t},{h},{w}) not divisible by cube "
                         f"({CUBE_T},{CUBE_H},{CUBE_W})")
    tp, hp, wp = t // CUBE_T, h // CUBE_H, w // CUBE_W
    x = frames.reshape(tp, CUBE_T, c, hp, CUBE_H, wp, CUBE_W)
    x = x.transpose(0, 3, 5, 1, 2, 4, 6)  # (t', h', w', 2, C, 16, 16)
    cubes = x.reshape(tp * hp * wp, CUBE_T * c * CUBE_H * CUBE_W)
    return CubeGrid(cubes=np.ascontiguousarray(cubes), grid_dims=(tp, hp, wp),
                    channels=c)


def uncubify(grid: CubeGrid) -> np.ndarray:
    """Inverse of cubify; bit-exact round trip."""
    tp, hp, wp = grid.grid_dims
    c = grid.channels
    x = grid.cubes.reshape(tp, hp, wp, CUBE_T, c, CUBE_H, CUBE_W)
    x = x.transpose(0, 3, 4, 1, 5, 2, 6)
    return np.ascontiguousarray(x.reshape(tp * CUBE_T, c, hp * CUBE_H, wp * CUBE_W))


def sample_tube_mask(grid_dims: tuple[int, int, int], ratio: float,
                     rng: np.random.Generator) -> TubeMask:
    """Mask round(ratio * H' * W') spatial positions, uniform without replacement."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must be in [0, 1)")
    _, hp, wp = grid_dims
    n_masked = int(round(ratio * hp * wp))
    mask = np.zeros(hp * wp, dtype=bool)
    if n_masked:
        mask[rng.choice(hp * wp, size=n_masked, replace=False)] = True
    return TubeMask(spatial_mask=mask.reshape(hp, wp), grid_dims=tuple(grid_dims))


def split_visible(grid: CubeGrid, mask: TubeMask):
    """(visible cubes, visible token indices, masked token indices)."""
    if mask.grid_dims != grid.grid_dims:
        raise DimensionError(
            f"mask grid {mask.grid_dims} != token grid {grid.grid_dims}")
    vis = mask.visible_indices()
    return grid.cubes[vis], vis, mask.masked_indices()


def standardize_cubes(cubes: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Standardize each cube token to zero mean / unit std over its values.

    Encoder inputs are standardized in both training stages so that raw
    pixel brightness does not dominate the token statistics; without this,
    embeddings of distinct clips collapse onto a shared direction at init.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = cubes.astype(np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    return ((x - mu) / (sd + eps)).astype(cubes.dtype)


def normalize_targets(grid: CubeGrid, mask: TubeMask, eps: float = 1e-6) -> np.ndarray:
    """Per-cube standardized reconstruction targets for the masked tokens."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    cubes = grid.cubes[mask.masked_indices()].astype(np.float64)
    mu = cubes.mean(axis=1, keepdims=True)
    sd = cubes.std(axis=1, keepdims=True)
    return ((cubes - mu) / (sd + eps)).astype(grid.cubes.dtype)

"""Rendering traffic frames as normalized images and patch embeddings.

Frames become [0, 1] images through a power-law squash, get cut into
fixed-size square patches, and each patch maps to a small deterministic
feature vector. The point is a faithful, testable stand-in for a vision
encoder: shapes, ordering, and padding behave exactly like the real
thing while the features stay cheap and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from stvl.errors import (
    EmptyTensorError,
    NegativeValueError,
    OutOfRangePixelError,
    RaggedFramesError,
    StvlError,
)

PATCH_SIZE = 14
POOL_GRID = 4
EMBED_DIM = 4 + POOL_GRID * POOL_GRID  # summary stats + pooled grid


@dataclass(frozen=True)
class NormConfig:
    """Power-law normalization parameters.

    ``exponent`` compresses the heavy upper tail (0 < exponent <= 1);
    ``t_max`` is the value that maps to exactly 1.0.
    """

    exponent: float = 0.5
    t_max: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.exponent <= 1.0):
            raise StvlError(f"exponent must be in (0, 1], got {self.exponent}")
        if not (self.t_max > 0.0) or not np.isfinite(self.t_max):
            raise StvlError(f"t_max must be positive and finite, got {self.t_max}")


def fit_tmax(values: np.ndarray, floor: float = 1e-9) -> float:
    """Largest finite value in the array, floored away from zero."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0 or not np.any(np.isfinite(values)):
        raise EmptyTensorError("no finite values to fit the scale on")
    return max(float(np.nanmax(values)), floor)


def power_normalize(values: np.ndarray, cfg: NormConfig) -> np.ndarray:
    """Map non-negative values into [0, 1] via v^p / t_max^p, clipped at 1."""
    values = np.asarray(values, dtype=np.float64)
    if np.any(values < 0):
        raise NegativeValueError("normalization input must be non-negative")
    scaled = values ** cfg.exponent / cfg.t_max ** cfg.exponent
    return np.minimum(scaled, 1.0)


def power_denormalize(unit: np.ndarray, cfg: NormConfig) -> np.ndarray:
    """Invert ``power_normalize`` for values that were not clipped."""
    unit = np.asarray(unit, dtype=np.float64)
    return (unit * cfg.t_max ** cfg.exponent) ** (1.0 / cfg.exponent)


def to_image(unit_frame: np.ndarray) -> np.ndarray:
    """Replicate one normalized (H, W) frame into (H, W, 3) channels."""
    frame = np.asarray(unit_frame, dtype=np.float64)
    if frame.ndim != 2:
        raise StvlError(f"expected an (H, W) frame, got shape {frame.shape}")
    if not np.all(np.isfinite(frame)) or np.any(frame < 0) or np.any(frame > 1):
        raise OutOfRangePixelError("image input must lie in [0, 1]")
    return np.repeat(frame[:, :, None], 3, axis=2)


def write_png(unit_frame: np.ndarray, path) -> None:
    """Save a normalized frame as an 8-bit grayscale-in-RGB PNG."""
    from PIL import Image

    image = to_image(unit_frame)
    eight_bit = np.rint(255.0 * image).astype(np.uint8)
    Image.fromarray(eight_bit, mode="RGB").save(path, format="PNG")


@dataclass(frozen=True)
class PatchSequence:
    """Row-major square patches cut from one image.

    ``patches`` is (N, L, L, 3) where N = ceil(H/L) * ceil(W/L); the
    original height/width are kept so the padding can be stripped again.
    """

    patches: np.ndarray
    h: int
    w: int
    patch_size: int

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]

    @property
    def grid_shape(self):
        return (-(-self.h // self.patch_size), -(-self.w // self.patch_size))


def patchify(image: np.ndarray, patch_size: int = PATCH_SIZE) -> PatchSequence:
    """Cut an (H, W, 3) image into row-major patches, zero-padding the
    bottom and right edges up to a multiple of the patch size."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise StvlError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if patch_size < 1:
        raise StvlError("patch size must be at least 1")
    h, w = image.shape[:2]
    rows = -(-h // patch_size)
    cols = -(-w // patch_size)
    padded = np.zeros((rows * patch_size, cols * patch_size, 3), dtype=np.float64)
    padded[:h, :w] = image
    patches = (
        padded.reshape(rows, patch_size, cols, patch_size, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * cols, patch_size, patch_size, 3)
    )
    return PatchSequence(patches=patches, h=h, w=w, patch_size=patch_size)


def unpatchify(seq: PatchSequence) -> np.ndarray:
    """Reassemble the original (H, W, 3) image, dropping the padding."""
    rows, cols = seq.grid_shape
    l = seq.patch_size
    padded = (
        seq.patches.reshape(rows, cols, l, l, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * l, cols * l, 3)
    )
    return padded[: seq.h, : seq.w]


def _pool_patch(channel: np.ndarray) -> np.ndarray:
    """Adaptive average pool one (L, L) channel down to POOL_GRID^2 means."""
    l = channel.shape[0]
    out = np.empty(POOL_GRID * POOL_GRID, dtype=np.float64)
    bounds = [(int(np.floor(i * l / POOL_GRID)), int(np.ceil((i + 1) * l / POOL_GRID)))
              for i in range(POOL_GRID)]
    pos = 0
    for r0, r1 in bounds:
        for c0, c1 in bounds:
            out[pos] = channel[r0:r1, c0:c1].mean()
            pos += 1
    return out


def mock_encode(seq: PatchSequence) -> np.ndarray:
    """Deterministic per-patch features: (N, 20).

    Channel 0 of each patch contributes (mean, population std, min, max)
    followed by an adaptive 4x4 average pool, read row-major.
    """
    n = seq.n_patches
    out = np.empty((n, EMBED_DIM), dtype=np.float64)
    for i in range(n):
        channel = seq.patches[i, :, :, 0]
        out[i, 0] = channel.mean()
        out[i, 1] = channel.std()
        out[i, 2] = channel.min()
        out[i, 3] = channel.max()
        out[i, 4:] = _pool_patch(channel)
    return out


def assemble_visual_context(
    unit_frames: Sequence[np.ndarray],
    patch_size: int = PATCH_SIZE,
) -> np.ndarray:
    """Encode S normalized frames into one stacked (S*N, 20) context.

    Frames must share a single (H, W) shape; patch rows keep frame
    order, so row s*N + j is patch j of frame s.
    """
    if len(unit_frames) == 0:
        raise EmptyTensorError("need at least one frame")
    shapes = {np.asarray(f).shape for f in unit_frames}
    if len(shapes) != 1:
        raise RaggedFramesError(f"frames disagree on shape: {sorted(shapes)}")
    blocks = [mock_encode(patchify(to_image(f), patch_size)) for f in unit_frames]
    return np.concatenate(blocks, axis=0)

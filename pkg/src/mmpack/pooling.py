"""Grid arithmetic for the average-pooling visual projector.

Numeric reference only: verifies the patch-grid-to-visual-token budget
(27x27 patches pooled to 12x12 == 144 tokens at pre-train resolution,
729 at full resolution) used by the length accounting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

ENCODER_GRID_SIDE = 27  # 27^2 = 729 output patches
PRETRAIN_POOL_SIDE = 12  # 12^2 = 144 visual tokens

Window = tuple[tuple[int, int], tuple[int, int]]  # (row range, col range), half-open


@dataclass(frozen=True)
class PoolSpec:
    """Target side of the pooled grid."""

    target_side: int = PRETRAIN_POOL_SIDE

    def __post_init__(self):
        if self.target_side < 1:
            raise ContractViolation("pool target side must be >= 1")


def pool_windows(m: int, n: int) -> list[list[Window]]:
    """Input index ranges feeding each output cell of an m->n pooling.

    Output cell i spans input rows [floor(i*m/n), ceil((i+1)*m/n)), same
    per column; every input index lands in at least one window.
    """
    if m < 1:
        raise ContractViolation("grid side must be >= 1")
    if not 1 <= n <= m:
        raise ContractViolation(f"pool side must satisfy 1 <= n <= m, got n={n}, m={m}")
    spans = [
        (math.floor(i * m / n), math.ceil((i + 1) * m / n)) for i in range(n)
    ]
    return [[(rows, cols) for cols in spans] for rows in spans]


def adaptive_avg_pool(grid: np.ndarray, spec: PoolSpec) -> np.ndarray:
    """Mean-pool an MxM(xD) patch grid down to target_side x target_side."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim < 2 or grid.shape[0] != grid.shape[1]:
        raise ContractViolation(f"expected a square grid, got shape {grid.shape}")
    m, n = grid.shape[0], spec.target_side
    windows = pool_windows(m, n)
    out = np.empty((n, n) + grid.shape[2:], dtype=np.float64)
    for i in range(n):
        for j in range(n):
            (r0, r1), (c0, c1) = windows[i][j]
            out[i, j] = grid[r0:r1, c0:c1].mean(axis=(0, 1))
    return out


def token_budget(
    images: int,
    spec: PoolSpec | None = None,
    mode: str = "pretrain",
    grid_side: int = ENCODER_GRID_SIDE,
) -> int:
    """Visual token cost of ``images`` images.

    Pre-training uses the pooled grid (target_side^2 per image); SFT keeps
    the full patch grid (grid_side^2 per image).
    """
    if images < 0:
        raise ContractViolation("image count must be >= 0")
    spec = spec if spec is not None else PoolSpec()
    if mode == "pretrain":
        return images * spec.target_side**2
    if mode == "sft":
        return images * grid_side**2
    raise ContractViolation(f"unknown budget mode {mode!r}")

"""Grid-size rule and the two local-crop sampling strategies.

Random streams are ``numpy.random.Generator`` (PCG64). Its ``integers`` and
``permutation`` outputs are stable across platforms for a given seed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .imaging import CROP_SIDE, CropRect, DimensionError, ImageBuf, extract_crop, require_min_size

MAX_GRID = 8


class Strategy(str, enum.Enum):
    UNIFORM_ENTIRE = "entire"
    STRATIFIED_GRID = "grid"


@dataclass(frozen=True)
class GridPlan:
    grid_size: int
    cell_height: int
    cell_width: int
    strategy: Strategy
    n_crops: int


def make_rng(*seed) -> np.random.Generator:
    """Seeded stream; pass several ints to derive independent sub-streams."""
    return np.random.default_rng(list(seed) if len(seed) > 1 else seed[0])


def _check_dims(height: int, width: int, side: int = CROP_SIDE) -> None:
    if height < side or width < side:
        raise DimensionError(f"image is {height}x{width}; both dimensions must be >= {side}")


def grid_size(height: int, width: int) -> int:
    _check_dims(height, width)
    return min(min(height, width) // CROP_SIDE, MAX_GRID)


def plan(height: int, width: int, n: int) -> GridPlan:
    if n < 1:
        raise ValueError(f"need at least one crop, got n={n}")
    g = grid_size(height, width)
    strategy = Strategy.STRATIFIED_GRID if g * g >= n else Strategy.UNIFORM_ENTIRE
    return GridPlan(g, height // g, width // g, strategy, n)


def sample_uniform(height: int, width: int, n: int, rng: np.random.Generator) -> list[CropRect]:
    """n independent uniform top-left positions; overlaps allowed."""
    _check_dims(height, width)
    rects = []
    for _ in range(n):
        top = int(rng.integers(0, height - CROP_SIDE, endpoint=True))
        left = int(rng.integers(0, width - CROP_SIDE, endpoint=True))
        rects.append(CropRect(top, left))
    return rects


def sample_stratified(grid: GridPlan, height: int, width: int, rng: np.random.Generator) -> list[CropRect]:
    """One crop in each of n distinct grid cells.

    Pixels beyond ``G * cell`` on either axis belong to no cell.
    """
    if grid.strategy is not Strategy.STRATIFIED_GRID:
        raise ValueError("sample_stratified needs a stratified-grid plan")
    g, n = grid.grid_size, grid.n_crops
    cells = np.arange(g * g)
    # partial Fisher-Yates: only the first n swaps matter
    for i in range(n):
        j = int(rng.integers(i, g * g))
        cells[i], cells[j] = cells[j], cells[i]
    rects = []
    for cell in cells[:n]:
        r, c = divmod(int(cell), g)
        top0, left0 = r * grid.cell_height, c * grid.cell_width
        top = int(rng.integers(top0, top0 + grid.cell_height - CROP_SIDE, endpoint=True))
        left = int(rng.integers(left0, left0 + grid.cell_width - CROP_SIDE, endpoint=True))
        rects.append(CropRect(top, left))
    return rects


def sample_rects(height: int, width: int, n: int, rng: np.random.Generator) -> tuple[GridPlan, list[CropRect]]:
    p = plan(height, width, n)
    if p.strategy is Strategy.STRATIFIED_GRID:
        return p, sample_stratified(p, height, width, rng)
    return p, sample_uniform(height, width, n, rng)


def sample_crops(img: ImageBuf, n: int, rng: np.random.Generator) -> tuple[list[ImageBuf], list[CropRect]]:
    require_min_size(img)
    _, rects = sample_rects(img.height, img.width, n, rng)
    return [extract_crop(img, r) for r in rects], rects

"""Multi-level tile plans for running a fixed-input-size encoder on larger images.

A plan for scale d = target/base builds ceil(log2 d) + 1 levels. Level i
resizes the image to min(base * 2^i, target) per side and covers it with an
n_i x n_i grid of base-sized tiles, n_i = ceil(min(2^i, d)). When the resized
side is not an exact multiple of the base size, tiles overlap with a uniform
ceil-rounded stride and the last tile is pinned to the far edge. Token
embeddings of all selected tiles are stacked row-wise in level-major,
row-major order.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class TileRect:
    level: int
    x: int  # column offset in the level's resized image
    y: int  # row offset
    side: int


@dataclass
class LevelSpec:
    index: int
    resized_side: int
    grid: int  # tiles per axis
    tiles: list[TileRect]
    cls_only: bool
    overlap_px: int  # neighbor overlap along one axis; 0 on exact fit


@dataclass
class PyramidPlan:
    base_size: int
    target_side: int
    scale: float
    levels: list[LevelSpec]
    selected: list[int]

    def selected_levels(self):
        return [self.levels[i] for i in self.selected]

    def tile_count(self) -> int:
        return sum(len(lv.tiles) for lv in self.selected_levels())


@dataclass
class CostReport:
    per_level_tiles: dict
    pyramid_units: int
    naive_units: int
    ratio: float


def _tile_offsets(resized_side: int, base: int, n: int) -> list[int]:
    if n == 1:
        return [0]
    if resized_side == n * base:
        return [i * base for i in range(n)]
    # ceil keeps the stride uniform while guaranteeing the pinned last tile
    # starts no more than one tile width after its neighbor (full coverage)
    stride = -((base - resized_side) // (n - 1))
    offsets = [i * stride for i in range(n - 1)]
    offsets.append(resized_side - base)  # pin the last tile to the edge
    return offsets


def build_plan(
    base_size: int,
    target_side: int,
    selected_levels: list[int] | None = None,
    cls_only_non_bottom: bool = False,
) -> PyramidPlan:
    if target_side < base_size:
        raise ConfigurationError(
            f"target side {target_side} smaller than base size {base_size}"
        )
    d = target_side / base_size
    n_levels = math.ceil(math.log2(d)) + 1 if d > 1 else 1
    bottom = n_levels - 1
    levels = []
    for i in range(n_levels):
        n_i = math.ceil(min(2.0**i, d))
        resized = min(base_size * 2**i, target_side)
        xs = _tile_offsets(resized, base_size, n_i)
        tiles = [
            TileRect(level=i, x=x, y=y, side=base_size) for y in xs for x in xs
        ]
        if n_i > 1 and resized < n_i * base_size:
            overlap = base_size - (xs[1] - xs[0])
        else:
            overlap = 0
        levels.append(
            LevelSpec(
                index=i,
                resized_side=resized,
                grid=n_i,
                tiles=tiles,
                cls_only=cls_only_non_bottom and i != bottom,
                overlap_px=overlap,
            )
        )
    if selected_levels is None:
        selected = list(range(n_levels))
    else:
        for i in selected_levels:
            if not 0 <= i < n_levels:
                raise IndexError(
                    f"selected level {i} out of range for {n_levels} levels"
                )
        selected = sorted(set(selected_levels))
    return PyramidPlan(
        base_size=base_size,
        target_side=target_side,
        scale=d,
        levels=levels,
        selected=selected,
    )


def resize_bilinear(image: np.ndarray, new_side: int) -> np.ndarray:
    """Separable bilinear resize with half-pixel center alignment.

    Identity (bit-exact copy) when the size is unchanged. Works on [H, W] or
    [H, W, C] arrays with square spatial dims.
    """
    if new_side < 1:
        raise ConfigurationError(f"new side must be >= 1, got {new_side}")
    old_side = image.shape[0]
    if image.shape[1] != old_side:
        raise ShapeError(f"expected a square image, got {image.shape}")
    if new_side == old_side:
        return image.copy()
    src = (np.arange(new_side) + 0.5) * (old_side / new_side) - 0.5
    lo = np.clip(np.floor(src).astype(int), 0, old_side - 1)
    hi = np.clip(lo + 1, 0, old_side - 1)
    frac = np.clip(src - lo, 0.0, 1.0)

    def interp_axis0(img):
        a = img[lo]
        b = img[hi]
        w = frac.reshape(-1, *([1] * (img.ndim - 1)))
        return a * (1.0 - w) + b * w

    rows = interp_axis0(image.astype(np.float64, copy=False))
    cols = np.swapaxes(interp_axis0(np.swapaxes(rows, 0, 1)), 0, 1)
    return cols.astype(image.dtype) if np.issubdtype(image.dtype, np.floating) else cols


def extract_tiles(image: np.ndarray, plan: PyramidPlan) -> list[np.ndarray]:
    """Resize per selected level, crop each tile; level-major, row-major order."""
    if image.shape[0] != plan.target_side or image.shape[1] != plan.target_side:
        raise ShapeError(
            f"image side {image.shape[:2]} != plan target {plan.target_side}"
        )
    out = []
    for lv in plan.selected_levels():
        resized = resize_bilinear(image, lv.resized_side)
        for t in lv.tiles:
            out.append(resized[t.y : t.y + t.side, t.x : t.x + t.side].copy())
    return out


def encode_and_stack(tiles: list[np.ndarray], plan: PyramidPlan, encoder) -> np.ndarray:
    """Encode every tile and stack kept token rows into one matrix.

    Tiles must follow :func:`extract_tiles` order. Levels flagged cls_only
    contribute one row (the CLS token) per tile; others contribute all tokens.
    """
    flags = []
    for lv in plan.selected_levels():
        flags.extend([lv.cls_only] * len(lv.tiles))
    if len(flags) != len(tiles):
        raise ShapeError(
            f"{len(tiles)} tiles given but plan selects {len(flags)}"
        )
    rows = []
    for tile, cls_only in zip(tiles, flags):
        tokens = encoder.encode_tile(tile)
        rows.append(tokens[:1] if cls_only else tokens)
    return np.concatenate(rows, axis=0)


def cost_report(plan: PyramidPlan) -> CostReport:
    """Encoder-forward units of the plan vs. token-pair units of one monolithic
    forward at target resolution (one base-size forward = 1 unit)."""
    per_level = {lv.index: lv.grid**2 for lv in plan.selected_levels()}
    pyramid_units = sum(per_level.values())
    naive_units = math.ceil(plan.scale) ** 4
    return CostReport(
        per_level_tiles=per_level,
        pyramid_units=pyramid_units,
        naive_units=naive_units,
        ratio=naive_units / pyramid_units,
    )

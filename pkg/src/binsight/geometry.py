"""Coordinate transforms between point clouds, sparse grids, and depth maps.

Conventions used throughout the toolkit:

* Coordinates are millimetres. Clouds are (N, 3) float64 arrays of x, y, z.
* Rasters are indexed [row, col] with shape (height, width). Row 0 is at
  y_min, column 0 at x_min, so row index grows with +y and column with +x.
* A point lands in column floor((x - x_min) / resolution), clamped to
  width - 1 so the point at x_max stays inside the raster (same for rows).
* Labels are uint8 with 1 = workpiece, 0 = non-workpiece.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import EmptyCloud, InvalidPoint, MissingLabels, ShapeMismatch

LABEL_WORKPIECE = 1
LABEL_BACKGROUND = 0

# Provenance value for pixels not backed by any source point.
NO_POINT = -1

_CELL_BIAS = 2**31  # shifts signed cell indices into uint64-packable range


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass
class PointCloud:
    """Ordered set of 3D points with optional per-point binary labels.

    points is an (N, 3) float64 array; labels, when present, is an (N,)
    uint8 array aligned with it.
    """

    points: np.ndarray
    labels: np.ndarray | None = None
    source_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidPoint(f"points must be (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise InvalidPoint("point cloud contains NaN or infinite coordinates")
        self.points = pts
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.uint8)
            if lab.shape != (len(pts),):
                raise ShapeMismatch(
                    f"{len(pts)} points but {lab.shape} labels"
                )
            self.labels = lab

    def __len__(self):
        return len(self.points)

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def with_labels(self, labels: np.ndarray) -> "PointCloud":
        return PointCloud(self.points, labels, self.source_id)


@dataclass
class CellGrid:
    """Sparse 2D grid bucketing point indices by cell.

    cells maps signed (cell_x, cell_y) pairs to arrays of indices into the
    cloud the grid was built from.
    """

    cell_size_mm: float
    cells: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.cell_size_mm <= 0:
            raise ValueError("cell_size_mm must be positive")


@dataclass
class DepthMap:
    """2.5D raster of heights under a top-down orthographic view.

    heights[row, col] is the height in mm of the topmost point whose (x, y)
    falls in that pixel; valid marks pixels backed by at least one point
    (or filled later by inpainting). provenance, when tracked, holds the
    index of the pixel's maximal-z source point, NO_POINT elsewhere.
    """

    resolution_mm: float
    origin_x_mm: float
    origin_y_mm: float
    heights: np.ndarray
    valid: np.ndarray
    provenance: np.ndarray | None = None

    def __post_init__(self):
        if self.resolution_mm <= 0:
            raise ValueError("resolution_mm must be positive")
        self.heights = np.asarray(self.heights, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.heights.shape != self.valid.shape:
            raise ShapeMismatch("heights and valid must have equal shape")
        if self.provenance is not None:
            self.provenance = np.asarray(self.provenance, dtype=np.int64)
            if self.provenance.shape != self.heights.shape:
                raise ShapeMismatch("provenance raster has wrong shape")

    @property
    def height(self) -> int:
        return self.heights.shape[0]

    @property
    def width(self) -> int:
        return self.heights.shape[1]


@dataclass
class LabelMask:
    """Binary {0, 1} raster aligned pixel-for-pixel with a DepthMap."""

    labels: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.labels.shape != self.valid.shape:
            raise ShapeMismatch("labels and valid must have equal shape")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def cell_of(p, cell_size_mm: float) -> tuple[int, int]:
    """Map a point to its grid cell: (floor(x / s) + 1, floor(y / s) + 1).

    Cell indices are signed; negative coordinates give indices <= 0.
    """
    if cell_size_mm <= 0:
        raise ValueError("cell_size_mm must be positive")
    x, y = float(p[0]), float(p[1])
    if not (np.isfinite(x) and np.isfinite(y)):
        raise InvalidPoint(f"non-finite point {p!r}")
    return (int(np.floor(x / cell_size_mm)) + 1, int(np.floor(y / cell_size_mm)) + 1)


def cell_indices(points: np.ndarray, cell_size_mm: float) -> np.ndarray:
    """Vectorized cell_of over an (N, >=2) array; returns (N, 2) int64."""
    return np.floor(points[:, :2] / cell_size_mm).astype(np.int64) + 1


def pack_cells(cells: np.ndarray) -> np.ndarray:
    """Pack (N, 2) signed cell indices into sortable uint64 keys."""
    cx = cells[:, 0] + _CELL_BIAS
    cy = cells[:, 1] + _CELL_BIAS
    if (cx < 0).any() or (cy < 0).any() or (cx >= 2**32).any() or (cy >= 2**32).any():
        raise InvalidPoint("cell index out of packable range")
    return (cx.astype(np.uint64) << np.uint64(32)) | cy.astype(np.uint64)


def build_cell_grid(cloud: PointCloud, cell_size_mm: float) -> CellGrid:
    """Bucket every point index into its cell; empty cloud gives empty grid."""
    grid = CellGrid(cell_size_mm=cell_size_mm)
    if len(cloud) == 0:
        return grid
    cells = cell_indices(cloud.points, cell_size_mm)
    keys = pack_cells(cells)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    ends = np.r_[starts[1:], len(sorted_keys)]
    for s, e in zip(starts, ends):
        i = order[s]
        grid.cells[(int(cells[i, 0]), int(cells[i, 1]))] = np.sort(order[s:e])
    return grid


def raster_size(extent_mm: float, resolution_mm: float) -> int:
    """Pixels needed to cover an extent: ceil(extent / r), at least 1.

    The ceiling keeps the far edge inside the raster; the lower clamp covers
    degenerate clouds whose extent is zero along an axis (e.g. one point).
    """
    return max(1, int(np.ceil(extent_mm / resolution_mm)))


def pixel_of(points: np.ndarray, dm: DepthMap) -> tuple[np.ndarray, np.ndarray]:
    """Rows and columns of points in a depth map's raster, clamped inside."""
    col = np.floor((points[:, 0] - dm.origin_x_mm) / dm.resolution_mm).astype(np.int64)
    row = np.floor((points[:, 1] - dm.origin_y_mm) / dm.resolution_mm).astype(np.int64)
    np.clip(col, 0, dm.width - 1, out=col)
    np.clip(row, 0, dm.height - 1, out=row)
    return row, col


def project_to_depth_map(
    cloud: PointCloud, resolution_mm: float
) -> tuple[DepthMap, LabelMask | None]:
    """Project a cloud orthogonally to a depth map, keeping the highest point.

    Each pixel holds the maximal z among the points mapping to it, that
    point's index as provenance (ties broken by lowest index), and, when
    the cloud is labeled, that point's label. Pixels no point maps to are
    invalid. Returns (depth_map, mask) with mask None for unlabeled clouds.
    """
    if resolution_mm <= 0:
        raise ValueError("resolution_mm must be positive")
    if len(cloud) == 0:
        raise EmptyCloud("cannot project an empty cloud")

    pts = cloud.points
    x_min = pts[:, 0].min()
    y_min = pts[:, 1].min()
    width = raster_size(pts[:, 0].max() - x_min, resolution_mm)
    height = raster_size(pts[:, 1].max() - y_min, resolution_mm)

    col = np.floor((pts[:, 0] - x_min) / resolution_mm).astype(np.int64)
    row = np.floor((pts[:, 1] - y_min) / resolution_mm).astype(np.int64)
    np.clip(col, 0, width - 1, out=col)
    np.clip(row, 0, height - 1, out=row)
    pix = row * width + col

    z = pts[:, 2]
    flat_heights = np.full(width * height, -np.inf)
    np.maximum.at(flat_heights, pix, z)
    valid = flat_heights != -np.inf

    # Among the points reaching their pixel's maximum, keep the lowest index.
    n = len(pts)
    is_max = z == flat_heights[pix]
    flat_prov = np.full(width * height, n, dtype=np.int64)
    np.minimum.at(flat_prov, pix[is_max], np.flatnonzero(is_max))
    flat_prov[~valid] = NO_POINT

    flat_heights[~valid] = np.nan
    dm = DepthMap(
        resolution_mm=float(resolution_mm),
        origin_x_mm=float(x_min),
        origin_y_mm=float(y_min),
        heights=flat_heights.reshape(height, width),
        valid=valid.reshape(height, width),
        provenance=flat_prov.reshape(height, width),
    )

    mask = None
    if cloud.is_labeled:
        flat_labels = np.zeros(width * height, dtype=np.uint8)
        flat_labels[valid] = cloud.labels[flat_prov[valid]]
        mask = LabelMask(flat_labels.reshape(height, width), dm.valid.copy())
    return dm, mask


def reproject_labels(cloud: PointCloud, mask: LabelMask, dm: DepthMap) -> PointCloud:
    """Assign every point the label of the pixel its (x, y) projects into.

    All points under a pixel inherit its label, occluded ones included;
    points over invalid mask pixels get label 0. Requires the mask to be
    pixel-aligned with dm, and dm to share the cloud's frame.
    """
    if (mask.height, mask.width) != (dm.height, dm.width):
        raise ShapeMismatch(
            f"mask {mask.height}x{mask.width} vs depth map {dm.height}x{dm.width}"
        )
    row, col = pixel_of(cloud.points, dm)
    labels = np.where(mask.valid[row, col], mask.labels[row, col], LABEL_BACKGROUND)
    return cloud.with_labels(labels.astype(np.uint8))


def split_cloud(cloud: PointCloud) -> tuple[PointCloud, PointCloud]:
    """Partition a labeled cloud into (workpiece, non-workpiece) clouds.

    Point order is preserved within each part.
    """
    if not cloud.is_labeled:
        raise MissingLabels("split_cloud needs a labeled cloud")
    is_w = cloud.labels == LABEL_WORKPIECE
    pc_w = PointCloud(cloud.points[is_w], cloud.labels[is_w], cloud.source_id)
    pc_n = PointCloud(cloud.points[~is_w], cloud.labels[~is_w], cloud.source_id)
    return pc_w, pc_n

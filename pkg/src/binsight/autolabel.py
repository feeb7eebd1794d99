"""Automatic ground-truth labeling of filled-bin scans.

A filled-bin point is labeled by comparing it against an empty-bin
reference cloud: both clouds are bucketed into the same sparse X-Y grid,
and a filled point becomes non-workpiece (0) as soon as any reference
point of its own cell lies within d_max (3D Euclidean), workpiece (1)
otherwise. A cell with no reference points labels workpiece, which is
what the distance rule degenerates to when there is nothing to compare
against; real sensor shadows can make that wrong, hence the interactive
correction workflow in the service module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import MissingLabels, NoScans, ParamMismatch
from .geometry import CellGrid, DepthMap, LabelMask, PointCloud

DEFAULT_D_MAX_MM = 5.0
DEFAULT_CELL_SIZE_MM = 5.0


@dataclass
class LabelParams:
    d_max_mm: float = DEFAULT_D_MAX_MM
    cell_size_mm: float = DEFAULT_CELL_SIZE_MM

    def __post_init__(self):
        if self.d_max_mm <= 0 or self.cell_size_mm <= 0:
            raise ValueError("d_max_mm and cell_size_mm must be positive")


@dataclass
class EmptyBinReference:
    """Merged empty-bin scans plus their cell grid."""

    merged_cloud: PointCloud
    grid: CellGrid
    cell_size_mm: float

    @classmethod
    def build(cls, scans: list[PointCloud], cell_size_mm: float = DEFAULT_CELL_SIZE_MM):
        merged = merge_scans(scans)
        return cls(
            merged_cloud=merged,
            grid=geometry.build_cell_grid(merged, cell_size_mm),
            cell_size_mm=cell_size_mm,
        )


def merge_scans(scans: list[PointCloud]) -> PointCloud:
    """Concatenate scans of the same fixed bin; duplicates are kept.

    Multiple scans are merged precisely to densify the reference so that
    dropout holes in one scan are covered by another.
    """
    if not scans:
        raise NoScans("need at least one empty-bin scan")
    if len(scans) == 1:
        return PointCloud(scans[0].points.copy(), None, scans[0].source_id)
    points = np.concatenate([s.points for s in scans])
    return PointCloud(points, None, scans[0].source_id)


def auto_label(
    filled: PointCloud,
    ref: EmptyBinReference,
    params: LabelParams,
    neighbor_cells: bool = False,
) -> PointCloud:
    """Label every filled-bin point by distance against the reference.

    neighbor_cells extends the comparison to the 3x3 cell neighborhood,
    which shields points sitting right on a cell border from missing a
    close reference point across the line. Off by default: the plain
    same-cell rule is the documented behavior.
    """
    if ref.cell_size_mm != params.cell_size_mm:
        raise ParamMismatch(
            f"reference grid cell size {ref.cell_size_mm} != params {params.cell_size_mm}"
        )
    n = len(filled)
    if n == 0:
        return filled.with_labels(np.zeros(0, dtype=np.uint8))

    ref_pts = ref.merged_cloud.points
    labels = np.ones(n, dtype=np.uint8)
    if len(ref_pts) == 0:
        return filled.with_labels(labels)

    ref_cells = geometry.cell_indices(ref_pts, params.cell_size_mm)
    ref_keys = geometry.pack_cells(ref_cells)
    order = np.argsort(ref_keys, kind="stable")
    ref_keys = ref_keys[order]
    ref_sorted = ref_pts[order]

    filled_cells = geometry.cell_indices(filled.points, params.cell_size_mm)
    offsets = [(0, 0)]
    if neighbor_cells:
        offsets = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]

    d2_max = params.d_max_mm**2
    for dx, dy in offsets:
        keys = geometry.pack_cells(filled_cells + np.array([dx, dy]))
        lo = np.searchsorted(ref_keys, keys, side="left")
        hi = np.searchsorted(ref_keys, keys, side="right")
        counts = hi - lo
        total = int(counts.sum())
        if total == 0:
            continue
        # Expand every (filled point, same-cell reference point) pair.
        pair_f = np.repeat(np.arange(n), counts)
        starts = np.zeros(n, dtype=np.int64)
        starts[1:] = np.cumsum(counts)[:-1]
        pair_r = np.arange(total) - np.repeat(starts, counts) + np.repeat(lo, counts)
        d2 = ((filled.points[pair_f] - ref_sorted[pair_r]) ** 2).sum(axis=1)
        labels[pair_f[d2 <= d2_max]] = 0

    return filled.with_labels(labels)


def label_depth_map(
    labeled: PointCloud, resolution_mm: float
) -> tuple[DepthMap, LabelMask]:
    """Project a labeled cloud; each pixel gets its highest point's label."""
    if not labeled.is_labeled:
        raise MissingLabels("label_depth_map needs a labeled cloud")
    dm, mask = geometry.project_to_depth_map(labeled, resolution_mm)
    return dm, mask

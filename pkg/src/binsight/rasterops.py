"""Raster-level transforms on depth maps and label masks.

Covers hole inpainting, binary morphology for label cleanup, the
pad/crop resize with exact inverse, standardization, and training-time
augmentation. All functions return new rasters; inputs are never
mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import NotInpainted, NothingToInpaint, ShapeMismatch
from .geometry import NO_POINT, DepthMap, LabelMask

STD_EPS_MM = 1e-9  # below this std the raster is treated as constant


@dataclass
class ResizeRecord:
    """Exact pad/crop bookkeeping: per axis one of pad or crop is nonzero."""

    original_w: int
    original_h: int
    target_size: int
    pad_right: int = 0
    pad_bottom: int = 0
    crop_right: int = 0
    crop_bottom: int = 0

    def __post_init__(self):
        for axis, pad, crop, orig in (
            ("x", self.pad_right, self.crop_right, self.original_w),
            ("y", self.pad_bottom, self.crop_bottom, self.original_h),
        ):
            if pad < 0 or crop < 0 or (pad and crop):
                raise ValueError(f"invalid pad/crop pair on {axis} axis")
            if orig + pad - crop != self.target_size:
                raise ValueError(f"{axis} axis does not add up to target_size")


@dataclass
class AugmentSpec:
    """Flip / right-angle rotation / nearest-neighbor scale combination.

    Applied in that order. Rotation is restricted to 90-degree steps so
    the permutation stays exact; arbitrary angles would create invalid
    corner regions after inpainting.
    """

    flip_h: bool = False
    flip_v: bool = False
    rotation_deg: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.rotation_deg not in (0, 90, 180, 270):
            raise ValueError("rotation_deg must be one of 0, 90, 180, 270")
        if not 0.5 <= self.scale <= 2.0:
            raise ValueError("scale must lie in [0.5, 2.0]")


@njit(cache=True)
def _inpaint_pass(heights, valid, labels, has_labels, half):
    """One raster-scan fill pass; returns the number of still-unfilled pixels.

    Pixels filled earlier in the same scan count as valid for later ones,
    so the scan order (top-left to bottom-right) is part of the contract.
    """
    rows, cols = heights.shape
    remaining = 0
    for r in range(rows):
        for c in range(cols):
            if valid[r, c]:
                continue
            r0 = r - half if r - half > 0 else 0
            r1 = r + half + 1 if r + half + 1 < rows else rows
            c0 = c - half if c - half > 0 else 0
            c1 = c + half + 1 if c + half + 1 < cols else cols
            total = 0.0
            n = 0
            ones = 0
            for rr in range(r0, r1):
                for cc in range(c0, c1):
                    if (rr != r or cc != c) and valid[rr, cc]:
                        total += heights[rr, cc]
                        n += 1
                        if has_labels and labels[rr, cc] == 1:
                            ones += 1
            if n > 0:
                heights[r, c] = total / n
                valid[r, c] = True
                if has_labels:
                    # Majority vote of the contributing neighbors; ties
                    # go to background rather than invent workpiece pixels.
                    labels[r, c] = 1 if 2 * ones > n else 0
            else:
                remaining += 1
    return remaining


def inpaint(
    dm: DepthMap, k: int, mask: LabelMask | None = None
) -> tuple[DepthMap, LabelMask | None]:
    """Fill every invalid pixel with the mean of its valid k x k neighbors.

    Full-raster passes repeat until nothing is invalid; pixels filled in an
    earlier pass (or earlier in the current scan) count as valid neighbors.
    Originally valid pixels come through bit-identical. When a mask rides
    along, filled pixels get the majority label of the same contributing
    neighbors.
    """
    if k < 3 or k % 2 == 0:
        raise ValueError("kernel size k must be an odd integer >= 3")
    if not dm.valid.any():
        raise NothingToInpaint("depth map has no valid pixels")
    if mask is not None and mask.labels.shape != dm.heights.shape:
        raise ShapeMismatch("mask does not match depth map")

    heights = dm.heights.copy()
    valid = dm.valid.copy()
    heights[~valid] = 0.0  # placeholder; every one of these gets overwritten
    has_labels = mask is not None
    labels = mask.labels.copy() if has_labels else np.zeros((1, 1), dtype=np.uint8)

    while True:
        remaining = _inpaint_pass(heights, valid, labels, has_labels, (k - 1) // 2)
        if remaining == 0:
            break

    prov = None
    if dm.provenance is not None:
        prov = dm.provenance.copy()
        prov[~dm.valid] = NO_POINT
    out_dm = DepthMap(
        resolution_mm=dm.resolution_mm,
        origin_x_mm=dm.origin_x_mm,
        origin_y_mm=dm.origin_y_mm,
        heights=heights,
        valid=valid,
        provenance=prov,
    )
    out_mask = LabelMask(labels, np.ones_like(valid)) if has_labels else None
    return out_dm, out_mask


def _binary_morph(mask: LabelMask, k: int, op) -> LabelMask:
    if k < 3 or k % 2 == 0:
        raise ValueError("kernel size k must be an odd integer >= 3")
    structure = np.ones((k, k), dtype=bool)
    out = op(mask.labels.astype(bool), structure=structure)
    return LabelMask(out.astype(np.uint8), mask.valid.copy())


def dilate(mask: LabelMask, k: int) -> LabelMask:
    """Pixel becomes 1 iff any pixel of its k x k neighborhood is 1."""
    return _binary_morph(mask, k, ndimage.binary_dilation)


def erode(mask: LabelMask, k: int) -> LabelMask:
    """Pixel stays 1 iff all of its k x k neighborhood is 1 (borders count 0)."""
    return _binary_morph(mask, k, ndimage.binary_erosion)


def close(mask: LabelMask, k: int) -> LabelMask:
    """Dilate then erode: fills holes smaller than the kernel."""
    return erode(dilate(mask, k), k)


def open(mask: LabelMask, k: int) -> LabelMask:
    """Erode then dilate: removes specks smaller than the kernel.

    Closing alone preserves isolated workpiece specks, so this is the
    opt-in counterpart for scrubbing stray workpiece pixels.
    """
    return dilate(erode(mask, k), k)


def resize_with_record(
    dm: DepthMap, mask: LabelMask | None, target_size: int
) -> tuple[DepthMap, LabelMask | None, ResizeRecord]:
    """Zero-pad or crop each axis to target_size, anchored at the top-left.

    Padded depth pixels are valid zeros with label 0; cropping keeps the
    top-left window. The returned record makes the operation invertible.
    """
    if target_size <= 0:
        raise ValueError("target size must be positive")
    if mask is not None and mask.labels.shape != dm.heights.shape:
        raise ShapeMismatch("mask does not match depth map")

    w, h = dm.width, dm.height
    rec = ResizeRecord(
        original_w=w,
        original_h=h,
        target_size=target_size,
        pad_right=max(0, target_size - w),
        pad_bottom=max(0, target_size - h),
        crop_right=max(0, w - target_size),
        crop_bottom=max(0, h - target_size),
    )

    def fit(raster, fill):
        out = raster[: min(h, target_size), : min(w, target_size)]
        pad = ((0, rec.pad_bottom), (0, rec.pad_right))
        return np.pad(out, pad, constant_values=fill)

    out_dm = DepthMap(
        resolution_mm=dm.resolution_mm,
        origin_x_mm=dm.origin_x_mm,
        origin_y_mm=dm.origin_y_mm,
        heights=fit(dm.heights, 0.0),
        valid=fit(dm.valid, True),
        provenance=None if dm.provenance is None else fit(dm.provenance, NO_POINT),
    )
    out_mask = None
    if mask is not None:
        out_mask = LabelMask(fit(mask.labels, 0), fit(mask.valid, True))
    return out_dm, out_mask, rec


def inverse_resize(mask_r: LabelMask, rec: ResizeRecord) -> LabelMask:
    """Undo resize_with_record on a mask: unpad padding, re-pad cropping.

    Re-padded pixels (regions the crop removed) come back as invalid label
    0, since no prediction exists for them.
    """
    if (mask_r.height, mask_r.width) != (rec.target_size, rec.target_size):
        raise ShapeMismatch(
            f"mask is {mask_r.height}x{mask_r.width}, record expects "
            f"{rec.target_size}x{rec.target_size}"
        )
    keep_h = rec.target_size - rec.pad_bottom
    keep_w = rec.target_size - rec.pad_right
    labels = mask_r.labels[:keep_h, :keep_w]
    valid = mask_r.valid[:keep_h, :keep_w]
    pad = ((0, rec.crop_bottom), (0, rec.crop_right))
    return LabelMask(
        np.pad(labels, pad, constant_values=0),
        np.pad(valid, pad, constant_values=False),
    )


def standardize(dm: DepthMap) -> DepthMap:
    """Shift and scale to zero mean, unit standard deviation (population).

    Statistics run over all pixels, padding included, so an external model
    sees exactly the distribution its training data was normalized with.
    A (near-)constant raster maps to all zeros instead of blowing up.
    """
    if not dm.valid.all():
        raise NotInpainted("standardize requires a fully valid depth map")
    mean = dm.heights.mean()
    std = dm.heights.std()
    if std < STD_EPS_MM:
        out = np.zeros_like(dm.heights)
    else:
        out = (dm.heights - mean) / std
    return replace(dm, heights=out, valid=dm.valid.copy())


def _nn_indices(n_out: int, n_in: int) -> np.ndarray:
    return np.minimum((np.arange(n_out) * n_in) // n_out, n_in - 1)


def _nn_resample(raster: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    rows = _nn_indices(out_h, raster.shape[0])
    cols = _nn_indices(out_w, raster.shape[1])
    return raster[np.ix_(rows, cols)]


def augment(
    dm: DepthMap, mask: LabelMask, spec: AugmentSpec
) -> tuple[DepthMap, LabelMask]:
    """Apply flips, right-angle rotation, then nearest-neighbor scaling.

    Flips and rotations are exact permutations applied identically to both
    rasters; scaling resamples nearest-neighbor so labels stay binary.
    """
    if mask.labels.shape != dm.heights.shape:
        raise ShapeMismatch("mask does not match depth map")

    def permute(raster):
        if spec.flip_h:
            raster = raster[:, ::-1]
        if spec.flip_v:
            raster = raster[::-1, :]
        if spec.rotation_deg:
            raster = np.rot90(raster, k=spec.rotation_deg // 90)
        return raster

    heights = permute(dm.heights)
    valid = permute(dm.valid)
    labels = permute(mask.labels)
    mvalid = permute(mask.valid)

    if spec.scale != 1.0:
        out_h = max(1, int(round(heights.shape[0] * spec.scale)))
        out_w = max(1, int(round(heights.shape[1] * spec.scale)))
        heights = _nn_resample(heights, out_h, out_w)
        valid = _nn_resample(valid, out_h, out_w)
        labels = _nn_resample(labels, out_h, out_w)
        mvalid = _nn_resample(mvalid, out_h, out_w)

    out_dm = DepthMap(
        resolution_mm=dm.resolution_mm,
        origin_x_mm=dm.origin_x_mm,
        origin_y_mm=dm.origin_y_mm,
        heights=np.ascontiguousarray(heights),
        valid=np.ascontiguousarray(valid),
        provenance=None,
    )
    out_mask = LabelMask(np.ascontiguousarray(labels), np.ascontiguousarray(mvalid))
    return out_dm, out_mask

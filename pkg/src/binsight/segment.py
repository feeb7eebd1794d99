"""Segmenters and the end-to-end segmentation pipeline.

A segmenter is anything with `segment(dm: DepthMap) -> LabelMask` taking a
standardized square depth map and returning a same-size binary mask. Two
implementations live here: a learned-free baseline that reuses the
empty-bin-reference labeling, and an adapter that ships frames to an
external model running as a child process. `segment_pipeline` chains
projection, inpainting, resizing, standardization, the segmenter, and the
way back down to a split point cloud.
"""

from __future__ import annotations

import os
import select
import struct
import subprocess
import tempfile
import time
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import geometry
from .autolabel import LabelParams, auto_label
from .errors import EmptyCloud, ExternalSegmenterError, ShapeMismatch, StageError
from .geometry import DepthMap, LabelMask, PointCloud
from .rasterops import inpaint, inverse_resize, resize_with_record, standardize

PROTOCOL_MAGIC = b"BSG1"
DEFAULT_TIMEOUT_S = 10.0


class Segmenter(Protocol):
    """Behavioral contract: same-size binary mask out for a depth map in.

    Implementations may additionally expose observe_cloud(cloud), which the
    pipeline calls with the raw input cloud before segment(); segmenters
    that work purely on the raster just omit it.
    """

    def segment(self, dm: DepthMap) -> LabelMask: ...


@dataclass(frozen=True)
class SegMetrics:
    """Pixel-level scores; confusion is indexed [ground truth, prediction].

    Pixels invalid in either mask are outside the counts. iou per class is
    TP/(TP+FP+FN); a class absent from both masks scores 1.0 so empty
    scenes don't zero out the mean.
    """

    pixel_accuracy: float
    iou_workpiece: float
    iou_background: float
    mean_iou: float
    confusion: np.ndarray


def evaluate(pred: LabelMask, gt: LabelMask) -> SegMetrics:
    """Score a predicted mask against ground truth over jointly valid pixels."""
    if pred.labels.shape != gt.labels.shape:
        raise ShapeMismatch(
            f"prediction {pred.height}x{pred.width} vs ground truth "
            f"{gt.height}x{gt.width}"
        )
    joint = pred.valid & gt.valid
    if not joint.any():
        raise ValueError("masks share no valid pixels to score")

    confusion = np.zeros((2, 2), dtype=np.int64)
    np.add.at(confusion, (gt.labels[joint].astype(np.intp), pred.labels[joint].astype(np.intp)), 1)

    total = int(confusion.sum())
    correct = int(confusion[0, 0] + confusion[1, 1])

    def iou(c: int) -> float:
        tp = int(confusion[c, c])
        denom = int(confusion[c, :].sum() + confusion[:, c].sum()) - tp
        return 1.0 if denom == 0 else tp / denom

    iou_bg = iou(0)
    iou_w = iou(1)
    return SegMetrics(
        pixel_accuracy=correct / total,
        iou_workpiece=iou_w,
        iou_background=iou_bg,
        mean_iou=(iou_w + iou_bg) / 2.0,
        confusion=confusion,
    )


def baseline_segment(
    filled: PointCloud,
    ref,
    params: LabelParams | None = None,
    resolution_mm: float = 1.0,
    neighbor_cells: bool = False,
) -> tuple[LabelMask, DepthMap]:
    """Segment by relabeling against an empty-bin reference and projecting.

    Exactly the automatic-labeling computation, reused at inference time:
    needs a reference of the same (empty) bin but no trained model.
    """
    params = params or LabelParams()
    labeled = auto_label(filled, ref, params, neighbor_cells=neighbor_cells)
    dm, mask = geometry.project_to_depth_map(labeled, resolution_mm)
    return mask, dm


class BaselineSegmenter:
    """Reference-based segmenter pluggable into segment_pipeline.

    observe_cloud relabels the raw cloud against the empty-bin reference;
    segment then paints those per-point labels onto the raster via the
    depth map's provenance (each pixel knows which point produced it, and
    provenance survives inpainting and resizing). Pixels that no point
    produced — hole-filled or padded ones — get label 0.
    """

    def __init__(
        self,
        ref,
        params: LabelParams | None = None,
        neighbor_cells: bool = False,
    ):
        self.ref = ref
        self.params = params or LabelParams()
        self.neighbor_cells = neighbor_cells
        self._point_labels: np.ndarray | None = None

    def observe_cloud(self, cloud: PointCloud) -> None:
        labeled = auto_label(
            cloud, self.ref, self.params, neighbor_cells=self.neighbor_cells
        )
        self._point_labels = labeled.labels

    def segment(self, dm: DepthMap) -> LabelMask:
        if self._point_labels is None:
            raise ValueError("segment() before observe_cloud()")
        if dm.provenance is None:
            raise ValueError("depth map carries no point provenance")
        labels = np.zeros(dm.heights.shape, dtype=np.uint8)
        produced = dm.provenance >= 0
        labels[produced] = self._point_labels[dm.provenance[produced]]
        return LabelMask(labels, np.ones(dm.heights.shape, dtype=bool))


@dataclass(frozen=True)
class ExternalSegmenterConfig:
    """How to reach the external model: child command line and patience."""

    command: tuple[str, ...]
    timeout_s: float = DEFAULT_TIMEOUT_S

    def __post_init__(self):
        if not self.command:
            raise ValueError("command must not be empty")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")


class ExternalSegmenter:
    """Runs an external model as a child process, one frame per request.

    Wire protocol over the child's stdin/stdout, all little-endian:

        request:  b"BSG1" | u32 width | u32 height | w*h float32 heights, row-major
        response: b"BSG1" | u32 width | u32 height | w*h u8 labels in {0,1}, row-major

    EOF on stdin tells the child the session is over. One instance owns one
    child; don't share an instance across threads.
    """

    def __init__(self, config: ExternalSegmenterConfig):
        self.config = config
        self._proc: subprocess.Popen | None = None
        self._stderr = None

    def __enter__(self) -> "ExternalSegmenter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _start(self) -> None:
        self._stderr = tempfile.TemporaryFile()
        try:
            self._proc = subprocess.Popen(
                list(self.config.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=self._stderr,
            )
        except OSError as exc:
            raise ExternalSegmenterError(
                f"could not start {self.config.command!r}: {exc}"
            ) from exc
        os.set_blocking(self._proc.stdin.fileno(), False)

    def _diagnostics(self) -> str:
        parts = []
        if self._proc is not None:
            # A child that just died may not be reaped yet; give it a beat
            # so the report can name the exit code.
            try:
                self._proc.wait(timeout=0.2)
            except subprocess.TimeoutExpired:
                pass
            if self._proc.poll() is not None:
                parts.append(f"child exited with code {self._proc.returncode}")
        if self._stderr is not None:
            self._stderr.seek(0, os.SEEK_END)
            size = self._stderr.tell()
            self._stderr.seek(max(0, size - 4096))
            tail = self._stderr.read().decode("utf-8", "replace").strip()
            if tail:
                parts.append("stderr tail: " + tail)
        return "; ".join(parts)

    def _fail(self, message: str):
        raise ExternalSegmenterError(message, diagnostics=self._diagnostics())

    def _write_all(self, data: bytes, deadline: float) -> None:
        fd = self._proc.stdin.fileno()
        view = memoryview(data)
        off = 0
        while off < len(view):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._fail("timed out sending the request frame")
            _, writable, _ = select.select([], [fd], [], remaining)
            if not writable:
                continue
            try:
                off += os.write(fd, view[off:])
            except BrokenPipeError:
                self._fail("child closed its input mid-frame")
            except BlockingIOError:
                continue

    def _read_exact(self, n: int, deadline: float) -> bytes:
        fd = self._proc.stdout.fileno()
        buf = bytearray()
        while len(buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._fail(
                    f"timed out after {self.config.timeout_s:g} s "
                    f"({len(buf)}/{n} response bytes received)"
                )
            readable, _, _ = select.select([fd], [], [], remaining)
            if not readable:
                continue
            chunk = os.read(fd, n - len(buf))
            if not chunk:
                self._fail(f"child closed its output after {len(buf)}/{n} bytes")
            buf.extend(chunk)
        return bytes(buf)

    def segment(self, dm: DepthMap) -> LabelMask:
        if self._proc is None:
            self._start()
        if self._proc.poll() is not None:
            self._fail("child process is not running")

        rows, cols = dm.heights.shape
        frame = struct.pack("<4sII", PROTOCOL_MAGIC, cols, rows)
        frame += np.ascontiguousarray(dm.heights, dtype="<f4").tobytes()
        deadline = time.monotonic() + self.config.timeout_s

        self._write_all(frame, deadline)
        magic, r_w, r_h = struct.unpack("<4sII", self._read_exact(12, deadline))
        if magic != PROTOCOL_MAGIC:
            self._fail(f"bad response magic {magic!r}")
        if (r_w, r_h) != (cols, rows):
            self._fail(f"response raster is {r_w}x{r_h}, expected {cols}x{rows}")
        raw = self._read_exact(cols * rows, deadline)
        labels = np.frombuffer(raw, dtype=np.uint8).reshape(rows, cols).copy()
        if labels.max(initial=0) > 1:
            self._fail("response labels fall outside {0, 1}")
        return LabelMask(labels, np.ones((rows, cols), dtype=bool))

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            self._proc = None
        if self._stderr is not None:
            self._stderr.close()
            self._stderr = None


def external_segment(dm_r: DepthMap, endpoint: ExternalSegmenterConfig) -> LabelMask:
    """One-shot convenience: spawn the child, segment one frame, shut down."""
    with ExternalSegmenter(endpoint) as seg:
        return seg.segment(dm_r)


def segment_pipeline(
    cloud: PointCloud,
    segmenter: Segmenter,
    s_r: int = 800,
    k_inpaint: int = 5,
    r: float = 1.0,
    trace: dict | None = None,
) -> tuple[PointCloud, PointCloud, LabelMask, SegMetrics | None]:
    """Full scan-to-split run: raster up, segment, and project back down.

    Stages run in fixed order: project, inpaint, resize, standardize,
    segment, inverse resize, reproject, split — with metrics appended when
    the input cloud carries ground-truth labels. Any stage failure is
    re-raised as StageError naming the stage. Pass a dict as `trace` to
    receive the intermediate artifacts under per-stage keys.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot segment an empty cloud")

    def stage(name, fn):
        try:
            result = fn()
        except Exception as exc:
            raise StageError(name, exc) from exc
        if trace is not None:
            trace[name] = result
        return result

    dm, gt_mask = stage("project", lambda: geometry.project_to_depth_map(cloud, r))
    dm_filled = stage("inpaint", lambda: inpaint(dm, k_inpaint)[0])
    dm_sized, _, record = stage(
        "resize", lambda: resize_with_record(dm_filled, None, s_r)
    )
    dm_std = stage("standardize", lambda: standardize(dm_sized))

    def run_segmenter():
        observe = getattr(segmenter, "observe_cloud", None)
        if observe is not None:
            observe(cloud)
        pred = segmenter.segment(dm_std)
        if pred.labels.shape != dm_std.heights.shape:
            raise ShapeMismatch(
                f"segmenter returned {pred.height}x{pred.width} "
                f"for a {dm_std.height}x{dm_std.width} input"
            )
        return pred

    pred_sized = stage("segment", run_segmenter)
    pred = stage("inverse_resize", lambda: inverse_resize(pred_sized, record))
    labeled = stage("reproject", lambda: geometry.reproject_labels(cloud, pred, dm))
    pc_w, pc_n = stage("split", lambda: geometry.split_cloud(labeled))

    metrics = None
    if gt_mask is not None:
        metrics = stage("evaluate", lambda: evaluate(pred, gt_mask))
    return pc_w, pc_n, pred, metrics

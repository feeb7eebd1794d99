"""HTTP API behind the label-correction UI.

Serves red/blue renderings of labeled depth maps, takes rectangle
corrections against a per-scan revision counter, and commits the result
back to disk — mask, manifest, and re-labeled point cloud together.

Revisions implement optimistic concurrency: every successful corrections
POST bumps the scan's revision, and a POST carrying a stale revision is
rejected with 409 plus the current one, so two sessions can't silently
overwrite each other.
"""

from __future__ import annotations

import base64
import io
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from PIL import Image
from pydantic import BaseModel

from . import dataset, geometry
from .errors import BadRectangle, NotFound, ShapeMismatch, StaleRevision
from .geometry import DepthMap, LabelMask

ACTIONS = ("to_non_workpiece", "to_workpiece")


@dataclass(frozen=True)
class CorrectionRect:
    """Half-open pixel rectangle [x0, x1) x [y0, y1) with a flip action."""

    x0: int
    y0: int
    x1: int
    y1: int
    action: str = "to_non_workpiece"

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"action must be one of {ACTIONS}")


def render_rgb(dm: DepthMap, mask: LabelMask) -> np.ndarray:
    """Height-shaded red (workpiece) / blue (everything else) image.

    Intensity is the height normalized over valid pixels; invalid pixels
    render black. Returns an (H, W, 3) uint8 array.
    """
    if mask.labels.shape != dm.heights.shape:
        raise ShapeMismatch("mask does not match depth map")
    shown = dm.valid & mask.valid
    intensity = np.zeros(dm.heights.shape, dtype=np.uint8)
    if shown.any():
        vals = dm.heights[shown]
        lo, hi = vals.min(), vals.max()
        if hi > lo:
            intensity[shown] = np.round((vals - lo) / (hi - lo) * 255).astype(np.uint8)
        else:
            intensity[shown] = 255
    rgb = np.zeros((*dm.heights.shape, 3), dtype=np.uint8)
    red = shown & (mask.labels == 1)
    blue = shown & (mask.labels == 0)
    rgb[red, 0] = intensity[red]
    rgb[blue, 2] = intensity[blue]
    return rgb


def apply_corrections(mask: LabelMask, rects: list[CorrectionRect]) -> LabelMask:
    """Flip labels inside each rectangle, in order.

    to_non_workpiece turns the rectangle's label-1 pixels to 0 (the label-0
    ones are already there); to_workpiece is the symmetric extension. No
    pixel outside the rectangles changes, and either action is idempotent.
    """
    labels = mask.labels.copy()
    h, w = labels.shape
    for rect in rects:
        if not (0 <= rect.x0 < rect.x1 <= w and 0 <= rect.y0 < rect.y1 <= h):
            raise BadRectangle(
                f"rectangle ({rect.x0},{rect.y0})-({rect.x1},{rect.y1}) outside "
                f"a {w}x{h} mask"
            )
        region = labels[rect.y0 : rect.y1, rect.x0 : rect.x1]
        region[:] = 0 if rect.action == "to_non_workpiece" else 1
    return LabelMask(labels, mask.valid.copy())


@dataclass
class _ScanState:
    entry: dataset.ScanEntry
    dm: DepthMap
    mask: LabelMask
    revision: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


class LabelStore:
    """Loads a dataset directory and tracks per-scan correction state."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest = dataset.load_manifest(self.root / "manifest.json")
        self._states: dict[str, _ScanState] = {}
        self._lock = threading.Lock()

    def _state(self, scan_id: str) -> _ScanState:
        with self._lock:
            state = self._states.get(scan_id)
            if state is None:
                entry = self.manifest.entry(scan_id)
                if entry is None:
                    raise NotFound(f"no scan {scan_id!r}")
                dm, mask = dataset.load_depthmap(self.root / entry.depthmap_path)
                if mask is None:
                    # Nothing labeled yet: correcting starts from all-background.
                    mask = LabelMask(
                        np.zeros(dm.heights.shape, dtype=np.uint8), dm.valid.copy()
                    )
                state = _ScanState(entry=entry, dm=dm, mask=mask)
                self._states[scan_id] = state
            return state

    def list_scans(self) -> list[dict]:
        return [
            {
                "id": e.id,
                "corrected": e.corrected,
                "workpiece": e.workpiece,
                "bin": e.bin,
            }
            for e in self.manifest.scans
        ]

    def labels(self, scan_id: str) -> tuple[LabelMask, int]:
        state = self._state(scan_id)
        with state.lock:
            return state.mask, state.revision

    def render(self, scan_id: str) -> np.ndarray:
        state = self._state(scan_id)
        with state.lock:
            return render_rgb(state.dm, state.mask)

    def apply(self, scan_id: str, revision: int, rects: list[CorrectionRect]) -> int:
        state = self._state(scan_id)
        with state.lock:
            if revision != state.revision:
                raise StaleRevision(
                    f"revision {revision} is stale (current {state.revision})",
                    state.revision,
                )
            state.mask = apply_corrections(state.mask, rects)
            state.revision += 1
            return state.revision

    def commit(self, scan_id: str, corrected_mask: LabelMask | None = None) -> None:
        """Persist the scan's mask and back-project it onto the point cloud."""
        state = self._state(scan_id)
        with state.lock:
            if corrected_mask is not None:
                if corrected_mask.labels.shape != state.dm.heights.shape:
                    raise ShapeMismatch("corrected mask does not match depth map")
                state.mask = corrected_mask
                state.revision += 1
            entry = state.entry
            dataset.save_depthmap(
                self.root / entry.depthmap_path, state.dm, state.mask
            )
            cloud = dataset.load_cloud(self.root / entry.cloud_path)
            labeled = geometry.reproject_labels(cloud, state.mask, state.dm)
            dataset.save_cloud(self.root / entry.cloud_path, labeled)
            entry.corrected = True
        dataset.save_manifest(self.root / "manifest.json", self.manifest)


commit_corrections = LabelStore.commit


class _RectBody(BaseModel):
    x0: int
    y0: int
    x1: int
    y1: int
    action: Literal["to_non_workpiece", "to_workpiece"] = "to_non_workpiece"


class _CorrectionsBody(BaseModel):
    revision: int
    rects: list[_RectBody]


def create_app(store) -> FastAPI:
    """Build the FastAPI app over a LabelStore (or a dataset directory)."""
    if not isinstance(store, LabelStore):
        store = LabelStore(store)

    app = FastAPI(title="binsight label correction")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.store = store

    @app.exception_handler(NotFound)
    async def _not_found(request, exc):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(BadRectangle)
    async def _bad_rect(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ShapeMismatch)
    async def _bad_shape(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(StaleRevision)
    async def _stale(request, exc):
        return JSONResponse(
            status_code=409,
            content={"detail": str(exc), "revision": exc.current_revision},
        )

    @app.get("/api/scans")
    def scans():
        return store.list_scans()

    @app.get("/api/scans/{scan_id}/render.png")
    def render(scan_id: str):
        rgb = store.render(scan_id)
        buf = io.BytesIO()
        Image.fromarray(rgb).save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/api/scans/{scan_id}/labels")
    def labels(scan_id: str):
        mask, revision = store.labels(scan_id)
        return {
            "width": mask.width,
            "height": mask.height,
            "labels": base64.b64encode(mask.labels.tobytes()).decode("ascii"),
            "revision": revision,
        }

    @app.post("/api/scans/{scan_id}/corrections")
    def corrections(scan_id: str, body: _CorrectionsBody):
        rects = [
            CorrectionRect(r.x0, r.y0, r.x1, r.y1, r.action) for r in body.rects
        ]
        new_revision = store.apply(scan_id, body.revision, rects)
        return {"revision": new_revision}

    @app.post("/api/scans/{scan_id}/commit")
    def commit(scan_id: str):
        store.commit(scan_id)
        return {"committed": True}

    return app

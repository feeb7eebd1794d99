"""Persistence: point-cloud PLY files, binary depth maps, manifests, splits.

Two on-disk formats plus bookkeeping:

* Point clouds as a PLY subset — element `vertex` with float x, y, z and an
  optional `uchar label`. Written ASCII; binary little-endian accepted on
  load. Coordinates are stored float32.
* Depth maps in a little-endian container: magic "BDM1", u32 width, u32
  height, f32 resolution_mm, f32 origin_x, f32 origin_y, u8 has_mask
  (25-byte header), then width*height float32 heights row-major with
  quiet NaN marking invalid pixels, then optionally width*height u8
  labels. A stored mask shares the depth map's validity.
* A JSON manifest listing scans with their file paths and split
  assignment; paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError, ShapeMismatch, StratifyError
from .geometry import DepthMap, LabelMask, PointCloud

BDM_MAGIC = b"BDM1"
BDM_HEADER = struct.Struct("<4sIIfffB")

_PLY_TYPES = {
    "float": np.dtype("<f4"),
    "float32": np.dtype("<f4"),
    "double": np.dtype("<f8"),
    "float64": np.dtype("<f8"),
    "uchar": np.dtype("u1"),
    "uint8": np.dtype("u1"),
}

SPLITS = ("train", "val", "test", "unassigned")


def save_cloud(path, cloud: PointCloud) -> None:
    """Write a cloud as ASCII PLY; labels become a `uchar label` property."""
    path = Path(path)
    pts = cloud.points.astype(np.float32)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if cloud.is_labeled:
        header.append("property uchar label")
    header.append("end_header")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(header) + "\n")
        if cloud.is_labeled:
            rows = np.column_stack([pts, cloud.labels])
            np.savetxt(f, rows, fmt=["%.9g", "%.9g", "%.9g", "%d"])
        else:
            np.savetxt(f, pts, fmt="%.9g")


def _parse_ply_header(lines: list[str]):
    """Returns (format, vertex_count, properties, header_line_count)."""
    if not lines or lines[0].strip() != "ply":
        raise ParseError("line 1: not a PLY file (missing 'ply' magic)")
    fmt = None
    count = None
    props: list[tuple[str, np.dtype]] = []
    in_vertex = False
    for i, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if line.startswith("comment") or not line:
            continue
        if line == "end_header":
            if fmt is None:
                raise ParseError(f"line {i}: end_header before format line")
            if count is None:
                raise ParseError(f"line {i}: no vertex element declared")
            return fmt, count, props, i
        fields = line.split()
        if fields[0] == "format":
            if len(fields) != 3 or fields[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"line {i}: unsupported format {line!r}")
            fmt = fields[1]
        elif fields[0] == "element":
            if fields[1] != "vertex" or len(fields) != 3:
                raise ParseError(f"line {i}: only a vertex element is supported")
            try:
                count = int(fields[2])
            except ValueError:
                raise ParseError(f"line {i}: bad vertex count {fields[2]!r}") from None
            if count < 0:
                raise ParseError(f"line {i}: negative vertex count")
            in_vertex = True
        elif fields[0] == "property":
            if not in_vertex:
                raise ParseError(f"line {i}: property outside vertex element")
            if len(fields) != 3 or fields[1] not in _PLY_TYPES:
                raise ParseError(f"line {i}: unsupported property {line!r}")
            props.append((fields[2], _PLY_TYPES[fields[1]]))
        else:
            raise ParseError(f"line {i}: unexpected header line {line!r}")
    raise ParseError(f"line {len(lines)}: missing end_header")


def _check_ply_layout(props: list[tuple[str, np.dtype]]):
    names = [name for name, _ in props]
    if names not in (["x", "y", "z"], ["x", "y", "z", "label"]):
        raise ParseError(
            f"unsupported vertex layout {names}; expected x, y, z and an "
            "optional label"
        )
    for name, dtype in props:
        if name == "label" and dtype != np.dtype("u1"):
            raise ParseError("label property must be uchar")
        if name != "label" and dtype.kind != "f":
            raise ParseError(f"coordinate property {name} must be float")
    return "label" in names


def load_cloud(path) -> PointCloud:
    """Read a PLY subset file (ASCII or binary little-endian)."""
    path = Path(path)
    blob = path.read_bytes()
    marker = b"end_header\n"
    cut = blob.find(marker)
    if cut < 0:
        raise ParseError(f"{path.name}: missing end_header")
    try:
        head_lines = blob[: cut + len(marker)].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path.name}: non-ASCII header: {exc}") from None
    fmt, count, props, header_lines = _parse_ply_header(head_lines)
    labeled = _check_ply_layout(props)
    body = blob[cut + len(marker) :]

    if fmt == "ascii":
        pts, labels = _load_ascii_vertices(body, count, labeled, header_lines)
    else:
        pts, labels = _load_binary_vertices(body, count, props, labeled, path.name)
    return PointCloud(pts, labels, source_id=path.stem)


def _load_ascii_vertices(body: bytes, count: int, labeled: bool, header_lines: int):
    width = 4 if labeled else 3
    try:
        text = body.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError(f"non-ASCII vertex data: {exc}") from None
    pts = np.empty((count, 3), dtype=np.float64)
    labels = np.empty(count, dtype=np.uint8) if labeled else None
    filled = 0
    for offset, line in enumerate(text.splitlines(), start=header_lines + 1):
        line = line.strip()
        if not line:
            continue
        if filled >= count:
            raise ParseError(f"line {offset}: data beyond declared vertex count")
        tokens = line.split()
        if len(tokens) != width:
            raise ParseError(
                f"line {offset}: expected {width} values, got {len(tokens)}"
            )
        try:
            pts[filled] = [float(t) for t in tokens[:3]]
            if labeled:
                value = int(tokens[3])
                if value not in (0, 1):
                    raise ValueError
                labels[filled] = value
        except ValueError:
            raise ParseError(f"line {offset}: bad vertex values {line!r}") from None
        filled += 1
    if filled != count:
        raise ParseError(
            f"line {header_lines + filled + 1}: vertex count is {count} "
            f"but only {filled} rows present"
        )
    return pts, labels


def _load_binary_vertices(body, count, props, labeled, name):
    dtype = np.dtype([(p, d.str) for p, d in props])
    expected = count * dtype.itemsize
    if len(body) != expected:
        raise ParseError(
            f"{name}: binary payload is {len(body)} bytes, expected {expected}"
        )
    rows = np.frombuffer(body, dtype=dtype)
    pts = np.column_stack(
        [rows["x"], rows["y"], rows["z"]]
    ).astype(np.float64)
    labels = None
    if labeled:
        labels = rows["label"].copy()
        if labels.max(initial=0) > 1:
            raise ParseError(f"{name}: label values outside {{0, 1}}")
    return pts, labels


def save_depthmap(path, dm: DepthMap, mask: LabelMask | None = None) -> None:
    """Write the binary depth-map container; NaN encodes invalid pixels."""
    path = Path(path)
    heights = dm.heights.astype("<f4")
    heights[~dm.valid] = np.nan
    blob = BDM_HEADER.pack(
        BDM_MAGIC,
        dm.width,
        dm.height,
        dm.resolution_mm,
        dm.origin_x_mm,
        dm.origin_y_mm,
        1 if mask is not None else 0,
    )
    blob += heights.tobytes()
    if mask is not None:
        if mask.labels.shape != dm.heights.shape:
            raise ShapeMismatch("mask does not match depth map dimensions")
        blob += np.ascontiguousarray(mask.labels).tobytes()
    path.write_bytes(blob)


def load_depthmap(path) -> tuple[DepthMap, LabelMask | None]:
    """Read the binary container back; see save_depthmap for the layout."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < BDM_HEADER.size:
        raise ParseError(f"{path.name}: truncated header ({len(blob)} bytes)")
    magic, w, h, res, ox, oy, has_mask = BDM_HEADER.unpack_from(blob)
    if magic != BDM_MAGIC:
        raise ParseError(f"{path.name}: bad magic {magic!r}")
    if has_mask not in (0, 1):
        raise ParseError(f"{path.name}: has_mask byte is {has_mask}")
    expected = BDM_HEADER.size + 4 * w * h + has_mask * w * h
    if len(blob) != expected:
        raise ParseError(
            f"{path.name}: file is {len(blob)} bytes, expected {expected}"
        )
    heights = (
        np.frombuffer(blob, dtype="<f4", count=w * h, offset=BDM_HEADER.size)
        .reshape(h, w)
        .astype(np.float64)
    )
    valid = ~np.isnan(heights)
    dm = DepthMap(
        resolution_mm=res,
        origin_x_mm=ox,
        origin_y_mm=oy,
        heights=heights,
        valid=valid,
    )
    mask = None
    if has_mask:
        labels = np.frombuffer(
            blob, dtype=np.uint8, count=w * h, offset=BDM_HEADER.size + 4 * w * h
        ).reshape(h, w)
        if labels.max(initial=0) > 1:
            raise ParseError(f"{path.name}: label values outside {{0, 1}}")
        mask = LabelMask(labels.copy(), valid.copy())
    return dm, mask


def export_png(path, dm: DepthMap) -> None:
    """Render heights as min-max scaled 16-bit grayscale, for eyeballs only."""
    path = Path(path)
    out = np.zeros(dm.heights.shape, dtype=np.uint16)
    if dm.valid.any():
        vals = dm.heights[dm.valid]
        lo, hi = vals.min(), vals.max()
        if hi > lo:
            out[dm.valid] = np.round(
                (dm.heights[dm.valid] - lo) / (hi - lo) * 65535
            ).astype(np.uint16)
        else:
            out[dm.valid] = 65535
    Image.fromarray(out).save(path)


@dataclass
class ScanEntry:
    """One scan's bookkeeping row in the manifest."""

    id: str
    kind: str
    cloud_path: str
    depthmap_path: str
    mask_path: str
    sensor: str = ""
    bin: str = ""
    workpiece: str = ""
    split: str = "unassigned"
    corrected: bool = False
    synth: dict | None = None

    def __post_init__(self):
        if self.kind not in ("real", "synthetic"):
            raise ValueError(f"unknown scan kind {self.kind!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class Manifest:
    """All scans of a dataset; file paths are relative to `root`."""

    scans: list[ScanEntry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    root: Path | None = None

    def entry(self, scan_id: str) -> ScanEntry | None:
        for entry in self.scans:
            if entry.id == scan_id:
                return entry
        return None


def save_manifest(path, manifest: Manifest) -> None:
    path = Path(path)
    doc = {
        "meta": manifest.meta,
        "scans": [
            {k: v for k, v in asdict(entry).items() if not (k == "synth" and v is None)}
            for entry in manifest.scans
        ],
    }
    with open(path, "w", newline="\n") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_manifest(path, check_files: bool = True) -> Manifest:
    """Read a manifest and verify ids are unique and referenced files exist."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path.name}: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("scans"), list):
        raise ParseError(f"{path.name}: expected an object with a 'scans' list")

    known = {f.name for f in ScanEntry.__dataclass_fields__.values()}
    scans = []
    for i, raw in enumerate(doc["scans"]):
        try:
            scans.append(ScanEntry(**{k: v for k, v in raw.items() if k in known}))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path.name}: scan entry {i}: {exc}") from None

    ids = [s.id for s in scans]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ParseError(f"{path.name}: duplicate scan ids {dupes}")

    root = path.parent
    if check_files:
        missing = []
        for entry in scans:
            for p in (entry.cloud_path, entry.depthmap_path, entry.mask_path):
                if p and not (root / p).exists():
                    missing.append(f"{entry.id}: {p}")
        if missing:
            raise ParseError(
                f"{path.name}: missing referenced files: " + "; ".join(missing)
            )
    return Manifest(scans=scans, meta=doc.get("meta", {}), root=root)


def split_dataset(
    manifest: Manifest, fractions: tuple[float, float, float], seed: int
) -> Manifest:
    """Assign train/val/test splits, stratified by workpiece.

    Shuffling is seeded and per-workpiece, so every workpiece contributes
    to the test set (at least one scan whenever the test fraction is
    nonzero). Fractions must sum to 1.
    """
    f_train, f_val, f_test = fractions
    if min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1: {fractions}")

    groups: dict[str, list[int]] = {}
    for i, entry in enumerate(manifest.scans):
        groups.setdefault(entry.workpiece, []).append(i)

    rng = np.random.default_rng(seed)
    assignment = ["train"] * len(manifest.scans)
    for key in sorted(groups):
        idx = np.array(groups[key])
        n = len(idx)
        n_test = int(round(f_test * n))
        if f_test > 0:
            n_test = max(1, n_test)
        n_val = int(round(f_val * n))
        if n_test + n_val > n:
            raise StratifyError(
                f"workpiece {key!r} has {n} scans, needs {n_test} test + "
                f"{n_val} val"
            )
        perm = idx[rng.permutation(n)]
        for j in perm[:n_test]:
            assignment[j] = "test"
        for j in perm[n_test : n_test + n_val]:
            assignment[j] = "val"

    scans = [
        replace(entry, split=assignment[i]) for i, entry in enumerate(manifest.scans)
    ]
    return Manifest(scans=scans, meta=dict(manifest.meta), root=manifest.root)

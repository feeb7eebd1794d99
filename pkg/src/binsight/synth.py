"""Synthetic bin scenes with exact ground truth.

Replaces a physics simulator with heightmap stacking: workpieces drop at
random (x, y, yaw) poses and come to rest on the tallest surface under
their footprint. Scenes render through a top-down orthographic virtual
sensor — one ray per pixel — into labeled point clouds, with Gaussian
z-noise and random dropout layered on top. Everything is driven by a
single seed, so identical configs reproduce bit-identical clouds.

Fidelity limits, by design: yaw is the only rotation (flat parts lie
flat), pieces never interpenetrate or lean, and walls are extruded
profiles rather than CAD meshes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset
from .errors import WorkpieceDoesNotFit
from .geometry import PointCloud, project_to_depth_map

OWNER_FLOOR = 0
OWNER_WALL = -1

WALL_PROFILES = ("solid", "lattice")
SHAPES = ("flat_plate", "disc", "ring", "cylinder", "gear_shaft_profile")
FLAT_LIMIT_MM = 15.0

_LATTICE_CELL_MM = 60.0
_LATTICE_LOW = 0.55  # rail height as a fraction of wall height
_NOTCH_SPAN_MM = 80.0

DEFAULT_NOISE_SIGMA_MM = 1.0
DEFAULT_DROPOUT_PROB = 0.02


@dataclass(frozen=True)
class BinSpec:
    """Rectangular bin: inner cavity dimensions plus wall build."""

    inner_x_mm: float
    inner_y_mm: float
    inner_z_mm: float
    wall_thickness_mm: float
    wall_profile: str = "solid"
    damage: tuple[int, float] | None = None  # (wall index 0..3, notch depth)

    def __post_init__(self):
        for name in ("inner_x_mm", "inner_y_mm", "inner_z_mm", "wall_thickness_mm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.wall_profile not in WALL_PROFILES:
            raise ValueError(f"wall_profile must be one of {WALL_PROFILES}")
        if self.damage is not None:
            wall, depth = self.damage
            if wall not in (0, 1, 2, 3):
                raise ValueError("damage wall index must be 0..3")
            if not 0 < depth <= self.inner_z_mm:
                raise ValueError("notch depth must be in (0, wall height]")

    @property
    def outer_x_mm(self) -> float:
        return self.inner_x_mm + 2 * self.wall_thickness_mm

    @property
    def outer_y_mm(self) -> float:
        return self.inner_y_mm + 2 * self.wall_thickness_mm


@dataclass(frozen=True)
class WorkpieceSpec:
    """A parameterized part; dims_mm keys depend on the shape.

    flat_plate: length_mm, width_mm, thickness_mm
    disc: radius_mm, thickness_mm
    ring: outer_radius_mm, inner_radius_mm, thickness_mm
    cylinder (lying on its side): length_mm, radius_mm
    gear_shaft_profile (lying on its side): length_mm, shaft_radius_mm,
        gear_radius_mm, gear_width_mm
    """

    shape: str
    dims_mm: dict
    flat: bool

    _REQUIRED = {
        "flat_plate": ("length_mm", "width_mm", "thickness_mm"),
        "disc": ("radius_mm", "thickness_mm"),
        "ring": ("outer_radius_mm", "inner_radius_mm", "thickness_mm"),
        "cylinder": ("length_mm", "radius_mm"),
        "gear_shaft_profile": (
            "length_mm",
            "shaft_radius_mm",
            "gear_radius_mm",
            "gear_width_mm",
        ),
    }

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        for key in self._REQUIRED[self.shape]:
            if key not in self.dims_mm or self.dims_mm[key] <= 0:
                raise ValueError(f"{self.shape} needs positive {key}")
        d = self.dims_mm
        if self.shape == "ring" and d["inner_radius_mm"] >= d["outer_radius_mm"]:
            raise ValueError("ring inner radius must be below the outer radius")
        if self.shape == "gear_shaft_profile":
            if d["gear_width_mm"] >= d["length_mm"]:
                raise ValueError("gear width must be below the shaft length")
            if d["shaft_radius_mm"] >= d["gear_radius_mm"]:
                raise ValueError("shaft radius must be below the gear radius")
        if self.flat and self.height_mm > FLAT_LIMIT_MM:
            raise ValueError(
                f"flat workpieces must stand at most {FLAT_LIMIT_MM:g} mm tall"
            )

    @property
    def height_mm(self) -> float:
        d = self.dims_mm
        if self.shape in ("flat_plate", "disc", "ring"):
            return d["thickness_mm"]
        if self.shape == "cylinder":
            return 2 * d["radius_mm"]
        return 2 * d["gear_radius_mm"]

    @property
    def bounding_radius_mm(self) -> float:
        d = self.dims_mm
        if self.shape == "flat_plate":
            return math.hypot(d["length_mm"], d["width_mm"]) / 2
        if self.shape == "disc":
            return d["radius_mm"]
        if self.shape == "ring":
            return d["outer_radius_mm"]
        if self.shape == "cylinder":
            return math.hypot(d["length_mm"], 2 * d["radius_mm"]) / 2
        return math.hypot(d["length_mm"], 2 * d["gear_radius_mm"]) / 2


@dataclass(frozen=True)
class SceneConfig:
    """Everything a scene needs; the seed drives placement and sensor noise."""

    bin: BinSpec
    workpiece: WorkpieceSpec
    count_range: tuple[int, int] = (30, 130)
    camera_height_mm: float = 2400.0
    image_size: int = 512
    noise_sigma_mm: float = DEFAULT_NOISE_SIGMA_MM
    dropout_prob: float = DEFAULT_DROPOUT_PROB
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.count_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad count_range {self.count_range}")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if self.noise_sigma_mm < 0:
            raise ValueError("noise_sigma_mm must be non-negative")
        if not 0 <= self.dropout_prob < 1:
            raise ValueError("dropout_prob must lie in [0, 1)")
        if self.camera_height_mm <= self.bin.inner_z_mm:
            raise ValueError("camera must sit above the bin")


@dataclass(frozen=True)
class Instance:
    """One placed workpiece: center position, resting bottom height, yaw."""

    x_mm: float
    y_mm: float
    z_mm: float
    yaw_rad: float


@dataclass
class Scene:
    """Placed geometry on the sensor grid.

    height_field[row, col] is the top surface in mm; ownership holds
    OWNER_FLOOR, OWNER_WALL, or the 1-based index of the topmost instance.
    Pixel (row, col) is centered at ((col+0.5)*pitch_x, (row+0.5)*pitch_y)
    with the origin at the bin's outer corner.
    """

    config: SceneConfig
    instances: list[Instance] = field(default_factory=list)
    height_field: np.ndarray = None
    ownership: np.ndarray = None
    pitch_x_mm: float = 0.0
    pitch_y_mm: float = 0.0


def _profile_heights(spec: WorkpieceSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Top height above the resting plane at local footprint coords (u, v).

    Zero marks points outside the footprint. Side-lying round shapes rest
    on their largest radius, so their tops bulge: axis height plus the
    circular section at offset v.
    """
    d = spec.dims_mm
    if spec.shape == "flat_plate":
        inside = (np.abs(u) <= d["length_mm"] / 2) & (np.abs(v) <= d["width_mm"] / 2)
        return np.where(inside, d["thickness_mm"], 0.0)
    if spec.shape == "disc":
        inside = u**2 + v**2 <= d["radius_mm"] ** 2
        return np.where(inside, d["thickness_mm"], 0.0)
    if spec.shape == "ring":
        rr = u**2 + v**2
        inside = (rr <= d["outer_radius_mm"] ** 2) & (rr >= d["inner_radius_mm"] ** 2)
        return np.where(inside, d["thickness_mm"], 0.0)
    if spec.shape == "cylinder":
        radius = d["radius_mm"]
        inside = (np.abs(u) <= d["length_mm"] / 2) & (np.abs(v) <= radius)
        bulge = np.sqrt(np.maximum(radius**2 - v**2, 0.0))
        return np.where(inside, radius + bulge, 0.0)
    # gear_shaft_profile: a wide gear section between two shaft sections
    half_gear = d["gear_width_mm"] / 2
    half_len = d["length_mm"] / 2
    r_at = np.where(
        np.abs(u) <= half_gear,
        d["gear_radius_mm"],
        np.where(np.abs(u) <= half_len, d["shaft_radius_mm"], 0.0),
    )
    inside = np.abs(v) <= r_at
    bulge = np.sqrt(np.maximum(r_at**2 - v**2, 0.0))
    return np.where(inside, d["gear_radius_mm"] + bulge, 0.0)


def _base_rasters(config: SceneConfig):
    """Floor and walls on the sensor grid, before any workpiece lands."""
    spec = config.bin
    n = config.image_size
    pitch_x = spec.outer_x_mm / n
    pitch_y = spec.outer_y_mm / n
    xs = (np.arange(n) + 0.5) * pitch_x
    ys = (np.arange(n) + 0.5) * pitch_y
    gx, gy = np.meshgrid(xs, ys)

    t = spec.wall_thickness_mm
    on_wall = (
        (gx < t)
        | (gx >= t + spec.inner_x_mm)
        | (gy < t)
        | (gy >= t + spec.inner_y_mm)
    )

    wall_top = np.full((n, n), spec.inner_z_mm)
    if spec.wall_profile == "lattice":
        checker = (
            np.floor(gx / _LATTICE_CELL_MM) + np.floor(gy / _LATTICE_CELL_MM)
        ).astype(np.int64) % 2
        wall_top = np.where(checker == 0, spec.inner_z_mm, spec.inner_z_mm * _LATTICE_LOW)
    if spec.damage is not None:
        wall, depth = spec.damage
        along = gy if wall in (0, 1) else gx
        center = spec.outer_y_mm / 2 if wall in (0, 1) else spec.outer_x_mm / 2
        sides = {
            0: gx < t,
            1: gx >= t + spec.inner_x_mm,
            2: gy < t,
            3: gy >= t + spec.inner_y_mm,
        }
        notched = sides[wall] & (np.abs(along - center) <= _NOTCH_SPAN_MM / 2)
        wall_top = np.where(
            notched, np.minimum(wall_top, spec.inner_z_mm - depth), wall_top
        )

    height_field = np.where(on_wall, wall_top, 0.0)
    ownership = np.where(on_wall, OWNER_WALL, OWNER_FLOOR).astype(np.int32)
    return height_field, ownership, pitch_x, pitch_y, xs, ys


def generate_scene(config: SceneConfig) -> Scene:
    """Drop a seeded number of workpieces into the bin by heightmap stacking.

    Each instance rests on the tallest surface under its footprint and
    claims ownership of every pixel where it ends up topmost.
    """
    height_field, ownership, pitch_x, pitch_y, xs, ys = _base_rasters(config)
    spec = config.bin
    wp = config.workpiece

    margin = wp.bounding_radius_mm
    x_lo = spec.wall_thickness_mm + margin
    x_hi = spec.wall_thickness_mm + spec.inner_x_mm - margin
    y_lo = spec.wall_thickness_mm + margin
    y_hi = spec.wall_thickness_mm + spec.inner_y_mm - margin
    if x_lo > x_hi or y_lo > y_hi:
        raise WorkpieceDoesNotFit(
            f"{wp.shape} with bounding diameter {2 * margin:.0f} mm does not "
            f"fit a {spec.inner_x_mm:.0f}x{spec.inner_y_mm:.0f} mm bin"
        )

    rng = np.random.default_rng([config.seed, 0])
    lo, hi = config.count_range
    count = int(rng.integers(lo, hi + 1))

    instances = []
    for index in range(1, count + 1):
        x = rng.uniform(x_lo, x_hi)
        y = rng.uniform(y_lo, y_hi)
        yaw = rng.uniform(0.0, 2 * math.pi)

        c0 = max(0, int((x - margin) / pitch_x) - 1)
        c1 = min(config.image_size, int((x + margin) / pitch_x) + 2)
        r0 = max(0, int((y - margin) / pitch_y) - 1)
        r1 = min(config.image_size, int((y + margin) / pitch_y) + 2)
        gx, gy = np.meshgrid(xs[c0:c1] - x, ys[r0:r1] - y)
        cos, sin = math.cos(-yaw), math.sin(-yaw)
        u = cos * gx - sin * gy
        v = sin * gx + cos * gy
        profile = _profile_heights(wp, u, v)
        footprint = profile > 0

        bottom = 0.0
        if footprint.any():
            patch_h = height_field[r0:r1, c0:c1]
            patch_o = ownership[r0:r1, c0:c1]
            bottom = float(patch_h[footprint].max())
            top = np.where(footprint, bottom + profile, -np.inf)
            wins = top > patch_h
            patch_h[wins] = top[wins]
            patch_o[wins] = index
        instances.append(Instance(x, y, bottom, yaw))

    return Scene(
        config=config,
        instances=instances,
        height_field=height_field,
        ownership=ownership,
        pitch_x_mm=pitch_x,
        pitch_y_mm=pitch_y,
    )


def render_point_cloud(scene: Scene) -> PointCloud:
    """Sample the scene with one orthographic ray per pixel.

    Points come back in row-major ray order (minus dropped ones), labeled
    1 where a workpiece owns the pixel. Noise perturbs z only — the (x, y)
    ray grid is a property of the sensor, not the surface.
    """
    config = scene.config
    n = config.image_size
    xs = (np.arange(n) + 0.5) * scene.pitch_x_mm
    ys = (np.arange(n) + 0.5) * scene.pitch_y_mm
    gx, gy = np.meshgrid(xs, ys)

    points = np.column_stack(
        [gx.ravel(), gy.ravel(), scene.height_field.ravel().astype(np.float64)]
    )
    labels = (scene.ownership.ravel() >= 1).astype(np.uint8)

    rng = np.random.default_rng([config.seed, 1])
    if config.noise_sigma_mm > 0:
        points[:, 2] += rng.normal(0.0, config.noise_sigma_mm, len(points))
    if config.dropout_prob > 0:
        keep = rng.random(len(points)) >= config.dropout_prob
        points = points[keep]
        labels = labels[keep]
    return PointCloud(points, labels, source_id=f"synth-{config.seed}")


def _config_record(config: SceneConfig) -> dict:
    return asdict(config)


def scene_config_from_record(record: dict) -> SceneConfig:
    """Rebuild a SceneConfig from its manifest record (exact regeneration)."""
    bin_spec = dict(record["bin"])
    if bin_spec.get("damage") is not None:
        bin_spec["damage"] = tuple(bin_spec["damage"])
    wp = record["workpiece"]
    return SceneConfig(
        bin=BinSpec(**bin_spec),
        workpiece=WorkpieceSpec(wp["shape"], dict(wp["dims_mm"]), wp["flat"]),
        count_range=tuple(record["count_range"]),
        camera_height_mm=record["camera_height_mm"],
        image_size=record["image_size"],
        noise_sigma_mm=record["noise_sigma_mm"],
        dropout_prob=record["dropout_prob"],
        seed=record["seed"],
    )


def _generate_one(task) -> dataset.ScanEntry:
    """Build, render, and write one scene; picklable for worker processes."""
    config, scan_id, out_dir, resolution_mm = task
    out = Path(out_dir)
    scene = generate_scene(config)
    cloud = render_point_cloud(scene)
    dm, mask = project_to_depth_map(cloud, resolution_mm)

    cloud_path = f"{scan_id}.ply"
    dm_path = f"{scan_id}.bdm"
    dataset.save_cloud(out / cloud_path, cloud)
    dataset.save_depthmap(out / dm_path, dm, mask)
    spec = config.bin
    return dataset.ScanEntry(
        id=scan_id,
        kind="synthetic",
        cloud_path=cloud_path,
        depthmap_path=dm_path,
        mask_path=dm_path,
        sensor="virtual-ortho",
        bin=f"{spec.inner_x_mm:g}x{spec.inner_y_mm:g}x{spec.inner_z_mm:g}",
        workpiece=config.workpiece.shape,
        synth=_config_record(config),
    )


def generate_dataset(
    configs: list[SceneConfig],
    n_scenes: int,
    out_dir,
    resolution_mm: float = 2.0,
    jobs: int = 1,
) -> dataset.Manifest:
    """Write n_scenes labeled clouds + depth maps + manifest under out_dir.

    Scene i uses configs[i % len(configs)] with seed shifted by i, and the
    manifest records the exact per-scene config, so the whole directory
    regenerates byte-identically from the same call — regardless of jobs,
    since every scene is seeded independently and the manifest keeps scene
    order.
    """
    if not configs:
        raise ValueError("configs must not be empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tasks = []
    for i in range(n_scenes):
        base = configs[i % len(configs)]
        config = replace(base, seed=base.seed + i)
        tasks.append((config, f"scene_{i:04d}", str(out), resolution_mm))

    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_generate_one, tasks))
    else:
        entries = [_generate_one(t) for t in tasks]

    manifest = dataset.Manifest(
        scans=entries,
        meta={"n_scenes": n_scenes, "resolution_mm": resolution_mm},
        root=out,
    )
    dataset.save_manifest(out / "manifest.json", manifest)
    return manifest


BIN_PRESETS = {
    "small_solid": BinSpec(700, 900, 600, 20),
    "medium_solid": BinSpec(800, 1000, 700, 25),
    "medium_lattice": BinSpec(800, 1000, 700, 25, wall_profile="lattice"),
    "large_solid": BinSpec(1000, 1200, 900, 30),
    "large_damaged": BinSpec(1000, 1200, 900, 30, damage=(1, 120.0)),
}

WORKPIECE_PRESETS = {
    "plate_s": WorkpieceSpec(
        "flat_plate", {"length_mm": 80, "width_mm": 50, "thickness_mm": 6}, True
    ),
    "plate_m": WorkpieceSpec(
        "flat_plate", {"length_mm": 120, "width_mm": 80, "thickness_mm": 10}, True
    ),
    "plate_l": WorkpieceSpec(
        "flat_plate", {"length_mm": 180, "width_mm": 120, "thickness_mm": 15}, True
    ),
    "plate_thin": WorkpieceSpec(
        "flat_plate", {"length_mm": 100, "width_mm": 100, "thickness_mm": 4}, True
    ),
    "disc_s": WorkpieceSpec("disc", {"radius_mm": 30, "thickness_mm": 8}, True),
    "disc_m": WorkpieceSpec("disc", {"radius_mm": 50, "thickness_mm": 12}, True),
    "disc_l": WorkpieceSpec("disc", {"radius_mm": 75, "thickness_mm": 15}, True),
    "ring_s": WorkpieceSpec(
        "ring", {"outer_radius_mm": 40, "inner_radius_mm": 20, "thickness_mm": 10}, True
    ),
    "ring_m": WorkpieceSpec(
        "ring", {"outer_radius_mm": 60, "inner_radius_mm": 35, "thickness_mm": 12}, True
    ),
    "ring_l": WorkpieceSpec(
        "ring", {"outer_radius_mm": 90, "inner_radius_mm": 55, "thickness_mm": 15}, True
    ),
    "rod": WorkpieceSpec("cylinder", {"length_mm": 150, "radius_mm": 20}, False),
    "stepped_shaft": WorkpieceSpec(
        "gear_shaft_profile",
        {
            "length_mm": 160,
            "shaft_radius_mm": 15,
            "gear_radius_mm": 45,
            "gear_width_mm": 30,
        },
        False,
    ),
}


def bin_preset(name: str) -> BinSpec:
    if name not in BIN_PRESETS:
        raise ValueError(f"unknown bin preset {name!r}; have {sorted(BIN_PRESETS)}")
    return BIN_PRESETS[name]


def workpiece_preset(name: str) -> WorkpieceSpec:
    if name not in WORKPIECE_PRESETS:
        raise ValueError(
            f"unknown workpiece preset {name!r}; have {sorted(WORKPIECE_PRESETS)}"
        )
    return WORKPIECE_PRESETS[name]

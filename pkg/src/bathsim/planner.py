"""Caregiving motion primitives from segmentation masks.

Pipeline per task: pick the target class (dry skin for washing, soap for
rinsing, water for drying), keep the largest connected blob, slice its
bounding box into tool-width strips, drop stroke/pat waypoints on each strip
centerline, lift them to 3D through the depth image, and expand them into a
timed pose+force sequence at the tracker rate.

Conventions: the limb runs along image rows, so strips partition columns
(across the limb) and strokes run along rows (along the limb). "Distal" is
the larger row index. The tool faces bed-normal throughout; contour
adaptation is left to the compliant tool and the force controller.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .geometry import Pose6, quat_from_axis_angle
from .perception import DepthImage, SegMask, DRY_SKIN, WATER, SOAP
from .tasks import TaskKind

FORCE_SAFETY_CAP_N = 20.0
MIN_COMPONENT_PX = 25
TRACKER_RATE_HZ = 70.0

TASK_TARGET_CLASS = {TaskKind.WASH: DRY_SKIN, TaskKind.RINSE: SOAP, TaskKind.DRY: WATER}

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])

# tool z points along -world z while wiping (face down onto the bed)
FACE_DOWN = quat_from_axis_angle([1.0, 0.0, 0.0], math.pi)


class PlanningError(RuntimeError):
    """Raised when a waypoint cannot be lifted to 3D."""


class Phase(enum.Enum):
    APPROACH = "approach"
    STROKE = "stroke"
    LIFT = "lift"
    PAT = "pat"


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus camera-to-base extrinsics."""

    fx: float
    fy: float
    cx: float
    cy: float
    pose: Pose6 = field(default_factory=Pose6.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def backproject(self, col: float, row: float, depth_m: float) -> np.ndarray:
        """Pixel + pinhole depth -> base-frame point."""
        cam = np.array([(col - self.cx) * depth_m / self.fx,
                        (row - self.cy) * depth_m / self.fy,
                        depth_m])
        return self.pose.apply(cam)

    def project(self, point_base) -> tuple[float, float, float]:
        """Base-frame point -> (col, row, pinhole depth)."""
        cam = self.pose.inverse().apply(point_base)
        z = cam[2]
        return (self.cx + cam[0] * self.fx / z, self.cy + cam[1] * self.fy / z, z)


@dataclass(frozen=True)
class ToolFootprint:
    length_m: float   # along the stroke (image rows)
    width_m: float    # across strips (image columns)
    length_px: float
    width_px: float

    def __post_init__(self):
        if min(self.length_m, self.width_m, self.length_px, self.width_px) <= 0:
            raise ValueError("footprint dimensions must be positive")

    @staticmethod
    def from_camera(length_m: float, width_m: float, camera: CameraModel,
                    depth_m: float) -> "ToolFootprint":
        return ToolFootprint(length_m=length_m, width_m=width_m,
                             length_px=length_m * camera.fy / depth_m,
                             width_px=width_m * camera.fx / depth_m)


@dataclass(frozen=True)
class WaypointSet:
    """Per-strip ordered pixel waypoints, optionally lifted to base frame."""

    task: TaskKind
    strips: tuple              # tuple of tuples of (row, col)
    points3d: tuple = None     # parallel structure of 3-vectors once lifted

    def pixels(self) -> list:
        return [wp for strip in self.strips for wp in strip]

    def is_empty(self) -> bool:
        return not any(self.strips)


def target_region(mask: SegMask, task: TaskKind) -> np.ndarray:
    """Boolean target region: task's class, largest 4-connected blob >= 25 px."""
    cls = TASK_TARGET_CLASS.get(task)
    if cls is None:
        raise ValueError(f"no target class for task {task!r}")
    binary = mask.labels == cls
    if not binary.any():
        return np.zeros_like(binary)
    labeled, n = ndimage.label(binary, structure=FOUR_CONNECTED)
    sizes = np.bincount(labeled.reshape(-1))
    sizes[0] = 0
    best = int(sizes.argmax())
    if sizes[best] < MIN_COMPONENT_PX:
        return np.zeros_like(binary)
    return labeled == best


def plan_waypoints(region: np.ndarray, footprint: ToolFootprint,
                   task: TaskKind) -> WaypointSet:
    """Strip the region's bounding box at tool width and drop waypoints.

    The strip array is centered on the bounding box so a partial last strip
    overhangs both sides evenly. Strip centerlines are clamped to the region's
    bounding columns.
    """
    region = np.asarray(region, dtype=bool)
    rows_any = region.any(axis=1)
    if not rows_any.any():
        return WaypointSet(task=task, strips=())
    cols_any = region.any(axis=0)
    col_min, col_max = np.flatnonzero(cols_any)[[0, -1]]

    width = float(footprint.width_px)
    bbox_w = col_max - col_min + 1
    n_strips = max(1, math.ceil(bbox_w / width))
    start = col_min - (n_strips * width - bbox_w) / 2.0

    # centerlines are pulled inward so the tool stays over the bounding box
    # (a centerline at the box edge would press half the tool off target)
    c_lo = min(col_min + width / 2.0, (col_min + col_max) / 2.0)
    c_hi = max(col_max - width / 2.0, (col_min + col_max) / 2.0)

    strips = []
    for i in range(n_strips):
        lo = int(math.floor(start + i * width))
        hi = int(math.ceil(start + (i + 1) * width)) - 1
        lo_c = max(lo, int(col_min))
        hi_c = min(hi, int(col_max))
        if lo_c > hi_c:
            continue
        strip_mask = region[:, lo_c:hi_c + 1].any(axis=1)
        strip_rows = np.flatnonzero(strip_mask)
        if strip_rows.size == 0:
            continue
        center = int(round(min(max(start + (i + 0.5) * width, c_lo), c_hi)))
        # stroke between the rows where the centerline crosses the region, so
        # the reference stays on target; fall back to the strip extent when
        # the centerline column itself is empty
        center_rows = np.flatnonzero(region[:, center])
        if center_rows.size == 0:
            center_rows = strip_rows
        r_min, r_max = int(center_rows[0]), int(center_rows[-1])
        strips.append(_strip_waypoints(task, r_min, r_max, center, footprint,
                                       reverse=(task is TaskKind.WASH and len(strips) % 2 == 1)))
    return WaypointSet(task=task, strips=tuple(strips))


def _strip_waypoints(task: TaskKind, r_min: int, r_max: int, col: int,
                     footprint: ToolFootprint, reverse: bool) -> tuple:
    height = r_max - r_min + 1
    if task is TaskKind.DRY:
        n_pats = max(1, math.ceil(height / (0.8 * footprint.length_px)))
        half = footprint.length_px / 2.0
        if height > footprint.length_px and n_pats > 1:
            centers = np.linspace(r_min + half, r_max - half, n_pats)
        else:
            centers = np.full(n_pats, (r_min + r_max) / 2.0)
        return tuple((int(round(r)), col) for r in centers)
    # strokes span the region with the tool footprint, not the tool center:
    # pull the endpoints in by half a tool length (same rule as the lateral
    # centerline clamp) so the reference stays on the treatable plateau
    inset = int(min(footprint.length_px / 2.0, (height - 1) / 2.0))
    lo, hi = r_min + inset, r_max - inset
    if task is TaskKind.RINSE:
        # distal (large row) -> proximal, every stroke in the same direction
        return ((hi, col), (lo, col))
    ends = [(lo, col), (hi, col)]
    if reverse:
        ends.reverse()
    return tuple(ends)


def lift_to_3d(waypoints: WaypointSet, depth: DepthImage,
               camera: CameraModel) -> WaypointSet:
    """Back-project pixel waypoints using the depth image (mm, 0 = missing)."""
    depth_mm = depth.data_mm
    h, w = depth_mm.shape
    lifted = []
    for strip in waypoints.strips:
        pts = []
        for row, col in strip:
            z_mm = int(depth_mm[row, col])
            if z_mm == 0:
                lo_r, hi_r = max(0, row - 2), min(h, row + 3)
                lo_c, hi_c = max(0, col - 2), min(w, col + 3)
                patch = depth_mm[lo_r:hi_r, lo_c:hi_c]
                valid = patch[patch > 0]
                if valid.size == 0:
                    raise PlanningError(f"no valid depth near waypoint ({row}, {col})")
                z_mm = float(np.median(valid))
            pts.append(camera.backproject(col, row, z_mm / 1000.0))
        lifted.append(tuple(pts))
    return replace(waypoints, points3d=tuple(lifted))


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    pose: Pose6
    force: np.ndarray     # desired 3-DoF force, N
    phase: Phase

    def __post_init__(self):
        f = np.asarray(self.force, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(f)):
            raise ValueError("desired force must be finite")
        if float(np.linalg.norm(f)) > FORCE_SAFETY_CAP_N:
            raise ValueError(f"desired force exceeds {FORCE_SAFETY_CAP_N} N safety cap")
        object.__setattr__(self, "force", f)


@dataclass(frozen=True)
class MotionPrimitive:
    task: TaskKind
    points: tuple

    def __post_init__(self):
        ts = [p.t for p in self.points]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must be non-decreasing")

    @property
    def duration(self) -> float:
        return self.points[-1].t - self.points[0].t if self.points else 0.0


@dataclass(frozen=True)
class PrimitiveConfig:
    stroke_speed: float = 0.03     # m/s while wiping
    travel_speed: float = 0.10     # m/s for lifts and lateral moves
    descend_speed: float = 0.04    # m/s when closing on the skin
    lift_height: float = 0.04      # m
    pat_hold_s: float = 0.7
    wash_force_n: float = 5.0
    rinse_force_n: float = 5.0
    dry_force_n: float = 3.0
    tracker_rate_hz: float = TRACKER_RATE_HZ
    # waypoints are skin points; the EE reference rides above them by the
    # tool rest length minus a small bias that guarantees first contact
    tool_standoff: float = 0.025


class _PathBuilder:
    def __init__(self, start_pose: Pose6, rate_hz: float):
        self.dt = 1.0 / rate_hz
        self.t = 0.0
        self.pos = start_pose.position.copy()
        self.quat = FACE_DOWN
        self.points = [TrajectoryPoint(0.0, Pose6(self.pos, self.quat),
                                       np.zeros(3), Phase.APPROACH)]

    def line_to(self, target, speed: float, force, phase: Phase):
        target = np.asarray(target, dtype=float)
        dist = float(np.linalg.norm(target - self.pos))
        n_steps = max(1, math.ceil(dist / (speed * self.dt)))
        force = np.asarray(force, dtype=float)
        for i in range(1, n_steps + 1):
            p = self.pos + (target - self.pos) * (i / n_steps)
            self.t += self.dt
            self.points.append(TrajectoryPoint(self.t, Pose6(p, self.quat), force, phase))
        self.pos = target.copy()

    def hold(self, duration: float, force, phase: Phase):
        n_steps = max(1, round(duration / self.dt))
        force = np.asarray(force, dtype=float)
        for _ in range(n_steps):
            self.t += self.dt
            self.points.append(TrajectoryPoint(self.t, Pose6(self.pos, self.quat), force, phase))


def generate_primitive(task: TaskKind, waypoints: WaypointSet, config: PrimitiveConfig,
                       start_pose: Pose6) -> MotionPrimitive:
    """Expand lifted waypoints into the timed pose+force sequence for a task."""
    if waypoints.points3d is None:
        raise ValueError("waypoints must be lifted to 3D first")
    if waypoints.is_empty():
        return MotionPrimitive(task=task, points=())

    builder = _PathBuilder(start_pose, config.tracker_rate_hz)
    lift = np.array([0.0, 0.0, config.lift_height])
    standoff = np.array([0.0, 0.0, config.tool_standoff])
    no_force = np.zeros(3)

    if task is TaskKind.WASH:
        force = np.array([0.0, 0.0, -config.wash_force_n])
        flat = [p + standoff for strip in waypoints.points3d for p in strip]
        builder.line_to(flat[0] + lift, config.travel_speed, no_force, Phase.APPROACH)
        builder.line_to(flat[0], config.descend_speed, no_force, Phase.APPROACH)
        for target in flat[1:]:
            builder.line_to(target, config.stroke_speed, force, Phase.STROKE)
    elif task is TaskKind.RINSE:
        force = np.array([0.0, 0.0, -config.rinse_force_n])
        first = True
        for strip in waypoints.points3d:
            start, end = strip[0] + standoff, strip[-1] + standoff
            approach = Phase.APPROACH if first else Phase.LIFT
            builder.line_to(start + lift, config.travel_speed, no_force, approach)
            builder.line_to(start, config.descend_speed, no_force, approach)
            first = False
            builder.line_to(end, config.stroke_speed, force, Phase.STROKE)
            # lather pass: lift back to the strip start and repeat the stroke
            builder.line_to(end + lift, config.travel_speed, no_force, Phase.LIFT)
            builder.line_to(start + lift, config.travel_speed, no_force, Phase.LIFT)
            builder.line_to(start, config.descend_speed, no_force, Phase.LIFT)
            builder.line_to(end, config.stroke_speed, force, Phase.STROKE)
    elif task is TaskKind.DRY:
        force = np.array([0.0, 0.0, -config.dry_force_n])
        centers = [p + standoff for strip in waypoints.points3d for p in strip]
        builder.line_to(centers[0] + lift, config.travel_speed, no_force, Phase.APPROACH)
        for center in centers:
            builder.line_to(center + lift, config.travel_speed, no_force, Phase.LIFT)
            builder.line_to(center, config.descend_speed, no_force, Phase.LIFT)
            builder.hold(config.pat_hold_s, force, Phase.PAT)
            builder.line_to(center + lift, config.travel_speed, no_force, Phase.LIFT)
    else:
        raise ValueError(f"no primitive for task {task!r}")

    return MotionPrimitive(task=task, points=tuple(builder.points))


# ---------------------------------------------------------------------------
# serialization and geometric coverage
# ---------------------------------------------------------------------------

PRIMITIVE_COLUMNS = ["t", "x", "y", "z", "qw", "qx", "qy", "qz", "fx", "fy", "fz", "phase"]


def write_primitive_csv(path, primitive: MotionPrimitive) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PRIMITIVE_COLUMNS)
        for p in primitive.points:
            writer.writerow([f"{p.t:.9g}",
                             *(f"{v:.9g}" for v in p.pose.position),
                             *(f"{v:.9g}" for v in p.pose.orientation),
                             *(f"{v:.9g}" for v in p.force),
                             p.phase.value])


def read_primitive_csv(path, task: TaskKind) -> MotionPrimitive:
    points = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pose = Pose6(position=[float(row["x"]), float(row["y"]), float(row["z"])],
                         orientation=[float(row["qw"]), float(row["qx"]),
                                      float(row["qy"]), float(row["qz"])])
            points.append(TrajectoryPoint(t=float(row["t"]), pose=pose,
                                          force=[float(row["fx"]), float(row["fy"]), float(row["fz"])],
                                          phase=Phase(row["phase"])))
    return MotionPrimitive(task=task, points=tuple(points))


def footprint_sweep_mask(primitive: MotionPrimitive, camera: CameraModel,
                         footprint: ToolFootprint, shape: tuple,
                         contact_phases=(Phase.STROKE, Phase.PAT)) -> np.ndarray:
    """Pixels the tool rectangle passes over during contact phases.

    Pure geometry (projects the commanded poses back through the camera);
    used for coverage checks and report figures, independent of dynamics.
    """
    cover = np.zeros(shape, dtype=bool)
    half_l = footprint.length_px / 2.0
    half_w = footprint.width_px / 2.0
    for p in primitive.points:
        if p.phase not in contact_phases:
            continue
        col, row, _ = camera.project(p.pose.position)
        lo_r = max(0, int(math.floor(row - half_l)))
        hi_r = min(shape[0], int(math.ceil(row + half_l)))
        lo_c = max(0, int(math.floor(col - half_w)))
        hi_c = min(shape[1], int(math.ceil(col + half_w)))
        cover[lo_r:hi_r, lo_c:hi_c] = True
    return cover

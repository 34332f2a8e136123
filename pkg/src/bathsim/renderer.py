"""Synthetic overhead RGB / thermal / depth renderer with ground-truth masks.

Ray-casts each pixel against the limb capsule and the bed plane. RGB comes
from one of six skin-tone presets modulated by cell state (soap whitens and
desaturates, water darkens ~10%); thermal comes from cell temperature with
the bed at a constant 22 C; depth is the pinhole z in millimeters. The
ground-truth mask is derived from the same hit test, so renderer and labels
share geometry by construction.

All randomness is drawn from a caller-seeded generator: a fixed seed yields
bit-identical images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose6, quat_from_axis_angle, quat_mul
from .limb import CELL_DRY, CELL_SOAPY, CELL_WET, LimbSurface, SOAP_TEMP_C, WATER_TEMP_C
from .perception import (BACKGROUND, DRY_SKIN, SOAP, WATER, DepthImage, RgbImage,
                         Scene, SegMask, ThermalImage, celsius_to_ck,
                         THERMAL_CK_MAX, THERMAL_CK_MIN)
from .planner import CameraModel

# Fitzpatrick-inspired tone presets, light to dark (R > G > B throughout)
SKIN_TONES = (
    (241, 194, 167),
    (232, 180, 143),
    (209, 151, 107),
    (171, 114, 69),
    (128, 77, 44),
    (84, 49, 30),
)

BED_COLOR = (168, 178, 192)
BED_TEMP_C = 22.0
SOAP_BASE = 252.0
SOAP_BLEND = 0.88          # fraction of white in soapy pixels
WET_DARKEN = 0.9

COVERAGE_CATEGORIES = ("none", "partial_soap", "partial_water", "full_soap", "full_water")

CELL_STATE_TO_CLASS = np.array([DRY_SKIN, SOAP, WATER], dtype=np.uint8)


@dataclass(frozen=True)
class RenderNoise:
    rgb_sigma: float = 3.0 / 255.0     # on the 0..1 scale
    thermal_sigma_c: float = 0.5

    @staticmethod
    def off() -> "RenderNoise":
        return RenderNoise(rgb_sigma=0.0, thermal_sigma_c=0.0)


def overhead_camera(center, height: float, fx: float = 170.0, fy: float = 170.0,
                    width: int = 160, height_px: int = 120,
                    lateral=(0.0, 0.0), tilt_deg: float = 0.0) -> CameraModel:
    """Camera looking down with image rows along world +x (the limb axis)."""
    center = np.asarray(center, dtype=float)
    position = center + np.array([lateral[0], lateral[1], height])
    # columns along +y, rows along +x, optical axis straight down
    base = quat_mul(quat_from_axis_angle([0.0, 0.0, 1.0], -math.pi / 2.0),
                    quat_from_axis_angle([1.0, 0.0, 0.0], math.pi))
    if tilt_deg:
        base = quat_mul(quat_from_axis_angle([0.0, 1.0, 0.0], math.radians(tilt_deg)), base)
    return CameraModel(fx=fx, fy=fy, cx=(width - 1) / 2.0, cy=(height_px - 1) / 2.0,
                       pose=Pose6(position=position, orientation=base))


def camera_presets(center, base_height: float = 0.65) -> tuple:
    """Six overhead viewpoints: height, lateral shift, and small tilts vary."""
    return (
        overhead_camera(center, base_height),
        overhead_camera(center, base_height - 0.08),
        overhead_camera(center, base_height + 0.08),
        overhead_camera(center, base_height, lateral=(0.03, 0.02)),
        overhead_camera(center, base_height, lateral=(-0.03, -0.02), tilt_deg=4.0),
        overhead_camera(center, base_height, tilt_deg=-6.0),
    )


def _ray_capsule(origins, dirs, p0, p1, radius):
    """Smallest positive ray parameter hitting the capsule; inf on miss.

    origins: (3,), dirs: (N, 3) not necessarily unit (t is in dir units).
    """
    axis = p1 - p0
    length = float(np.linalg.norm(axis))
    a_dir = axis / length
    rel = origins - p0
    d_a = dirs @ a_dir
    r_a = float(rel @ a_dir)

    best = np.full(dirs.shape[0], np.inf)

    dd = np.einsum("ij,ij->i", dirs, dirs)
    rd = dirs @ rel
    rr = float(rel @ rel)

    # infinite cylinder: |perp(o + t d)|^2 = r^2
    a = dd - d_a ** 2
    b = 2.0 * (rd - r_a * d_a)
    c = rr - r_a ** 2 - radius ** 2
    nz = np.abs(a) > 1e-14
    disc = b ** 2 - 4.0 * a * c
    ok = nz & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    for sign in (-1.0, +1.0):
        t = np.where(nz, (-b + sign * sq) / (2.0 * np.where(nz, a, 1.0)), np.inf)
        s_at = r_a + t * d_a
        valid = ok & (t > 1e-9) & (s_at >= 0.0) & (s_at <= length)
        best = np.where(valid & (t < best), t, best)

    # end-cap spheres
    for cap_rel, side in ((rel, -1.0), (origins - p1, +1.0)):
        b2 = 2.0 * (dirs @ cap_rel)
        c2 = float(cap_rel @ cap_rel) - radius ** 2
        disc = b2 ** 2 - 4.0 * dd * c2
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        for sign in (-1.0, +1.0):
            t = (-b2 + sign * sq) / (2.0 * dd)
            s_at = r_a + t * d_a
            beyond = s_at < 0.0 if side < 0 else s_at > length
            valid = ok & (t > 1e-9) & beyond
            best = np.where(valid & (t < best), t, best)
    return best


def render_rgbt(surface: LimbSurface, camera: CameraModel, width: int, height: int,
                bed_height: float, tone_index: int,
                noise: RenderNoise | None = None,
                rng: np.random.Generator | None = None) -> Scene:
    """Render one registered RGB/thermal/depth triple plus ground truth."""
    noise = noise or RenderNoise.off()
    if (noise.rgb_sigma > 0 or noise.thermal_sigma_c > 0) and rng is None:
        raise ValueError("noisy rendering needs a seeded generator")
    tone = np.asarray(SKIN_TONES[tone_index], dtype=float)

    cols, rows = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    dirs_cam = np.stack([(cols - camera.cx) / camera.fx,
                         (rows - camera.cy) / camera.fy,
                         np.ones_like(cols)], axis=-1).reshape(-1, 3)
    rot = camera.pose.rotation_matrix()
    origin = camera.pose.position
    dirs = dirs_cam @ rot.T  # camera z = +1 per ray, so t equals pinhole depth

    t_limb = _ray_capsule(origin, dirs, surface.p0, surface.p1, surface.radius)
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_bed = np.where(dz < -1e-9, (bed_height - origin[2]) / dz, np.inf)
    hit_limb = t_limb < t_bed
    t = np.where(hit_limb, t_limb, t_bed)

    points = origin + dirs * t[:, None]
    n_px = dirs.shape[0]

    rgb = np.tile(np.asarray(BED_COLOR, dtype=float), (n_px, 1))
    temp = np.full(n_px, BED_TEMP_C)
    labels = np.full(n_px, BACKGROUND, dtype=np.uint8)

    if hit_limb.any():
        pts = points[hit_limb]
        rel = pts - surface.p0
        s = np.clip(rel @ surface.axis_dir, 0.0, surface.length - 1e-12)
        u_idx = np.minimum((s / surface.length * surface.n_axial).astype(int),
                           surface.n_axial - 1)
        closest = surface.p0 + s[:, None] * surface.axis_dir
        radial = pts - closest
        ang = np.arctan2(radial @ surface.n2, radial @ surface.n1) % (2.0 * math.pi)
        v_idx = np.minimum((ang / (2.0 * math.pi) * surface.n_circ).astype(int),
                           surface.n_circ - 1)

        cell_state = surface.state[u_idx, v_idx]
        cell_temp = surface.temperature[u_idx, v_idx]

        color = np.tile(tone, (pts.shape[0], 1))
        wet = cell_state == CELL_WET
        color[wet] *= WET_DARKEN
        soapy = cell_state == CELL_SOAPY
        color[soapy] = (1.0 - SOAP_BLEND) * tone + SOAP_BLEND * SOAP_BASE

        rgb[hit_limb] = color
        temp[hit_limb] = cell_temp
        labels[hit_limb] = CELL_STATE_TO_CLASS[cell_state]

    if noise.rgb_sigma > 0:
        rgb += rng.normal(0.0, noise.rgb_sigma * 255.0, size=rgb.shape)
    if noise.thermal_sigma_c > 0:
        temp += rng.normal(0.0, noise.thermal_sigma_c, size=temp.shape)

    rgb8 = np.clip(np.round(rgb), 0, 255).astype(np.uint8).reshape(height, width, 3)
    ck = np.clip(celsius_to_ck(temp), THERMAL_CK_MIN, THERMAL_CK_MAX).astype(np.uint16)
    depth_mm = np.clip(np.round(np.where(np.isfinite(t), t * 1000.0, 0.0)), 0, 65535).astype(np.uint16)

    return Scene(rgb=RgbImage(rgb8),
                 thermal=ThermalImage(ck.reshape(height, width)),
                 depth=DepthImage(depth_mm.reshape(height, width)),
                 mask=SegMask(labels.reshape(height, width)))


# ---------------------------------------------------------------------------
# scene generation for the synthetic dataset
# ---------------------------------------------------------------------------

def apply_coverage(surface: LimbSurface, category: str) -> None:
    """Put the limb grid into one of the dataset coverage categories."""
    if category not in COVERAGE_CATEGORIES:
        raise ValueError(f"unknown coverage category {category!r}")
    surface.state[:] = CELL_DRY
    surface.amount[:] = 0.0
    surface.temperature[:] = 36.6
    if category == "none":
        return
    state = CELL_SOAPY if "soap" in category else CELL_WET
    temp = SOAP_TEMP_C if state == CELL_SOAPY else WATER_TEMP_C
    amount = 1.0 if state == CELL_SOAPY else 0.8
    if category.startswith("partial"):
        u0 = surface.n_axial // 3
        u1 = 2 * surface.n_axial // 3
        region = np.zeros_like(surface.state, dtype=bool)
        region[u0:u1, :] = True
    else:
        region = np.ones_like(surface.state, dtype=bool)
    # only the camera-facing upper half carries fluid in the dataset scenes
    upper = surface.cell_normals[..., 2] > 0.05
    region &= upper
    surface.state[region] = state
    surface.amount[region] = amount
    surface.temperature[region] = temp

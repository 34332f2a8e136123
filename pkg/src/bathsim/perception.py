"""RGB-thermal segmentation into {background, dry skin, water, soap}.

The segmenter is rule-based: a skin gate (warm-chroma test or skin-band
temperature) followed by per-pixel classification from froth appearance and
temperature, then one pass of 3x3 majority smoothing. It stands in for a
learned model behind the same mask contract, so the evaluation harness and
planner do not care which produced the mask.

Thermal images are stored as centi-kelvin uint16 for exact file round trips
and converted to Celsius at the segmenter boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import pnm

BACKGROUND, DRY_SKIN, WATER, SOAP = 0, 1, 2, 3
CLASS_NAMES = ("background", "dry_skin", "water", "soap")
N_CLASSES = 4

THERMAL_CK_MIN = 23315
THERMAL_CK_MAX = 37315


def celsius_to_ck(t_c) -> np.ndarray:
    return np.round((np.asarray(t_c, dtype=float) + 273.15) * 100.0).astype(np.uint16)


def ck_to_celsius(ck) -> np.ndarray:
    return np.asarray(ck, dtype=float) / 100.0 - 273.15


@dataclass(frozen=True)
class RgbImage:
    data: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3 or d.shape[2] != 3 or d.dtype != np.uint8:
            raise ValueError("RgbImage wants (H, W, 3) uint8")
        object.__setattr__(self, "data", d)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class ThermalImage:
    data_ck: np.ndarray  # (H, W) uint16, centi-kelvin

    def __post_init__(self):
        d = np.asarray(self.data_ck)
        if d.ndim != 2 or d.dtype != np.uint16:
            raise ValueError("ThermalImage wants (H, W) uint16 centi-kelvin")
        if d.min(initial=THERMAL_CK_MIN) < THERMAL_CK_MIN or d.max(initial=THERMAL_CK_MAX) > THERMAL_CK_MAX:
            raise ValueError(f"thermal samples outside [{THERMAL_CK_MIN}, {THERMAL_CK_MAX}] cK")
        object.__setattr__(self, "data_ck", d)

    def celsius(self) -> np.ndarray:
        return ck_to_celsius(self.data_ck)

    @property
    def width(self):
        return self.data_ck.shape[1]

    @property
    def height(self):
        return self.data_ck.shape[0]


@dataclass(frozen=True)
class DepthImage:
    data_mm: np.ndarray  # (H, W) uint16, millimeters (0 = missing)

    def __post_init__(self):
        d = np.asarray(self.data_mm)
        if d.ndim != 2 or d.dtype != np.uint16:
            raise ValueError("DepthImage wants (H, W) uint16 millimeters")
        object.__setattr__(self, "data_mm", d)


@dataclass(frozen=True)
class SegMask:
    labels: np.ndarray  # (H, W) uint8 in {0, 1, 2, 3}

    def __post_init__(self):
        d = np.asarray(self.labels)
        if d.ndim != 2 or d.dtype != np.uint8:
            raise ValueError("SegMask wants (H, W) uint8")
        if d.max(initial=0) >= N_CLASSES:
            raise ValueError("mask labels must be in {0, 1, 2, 3}")
        object.__setattr__(self, "labels", d)

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def height(self):
        return self.labels.shape[0]


@dataclass(frozen=True)
class SegParams:
    """Thresholds for the rule-based segmenter.

    Chroma gate: R > G > B with a minimum red-blue spread, spanning the six
    renderer skin tones (darkest preset keeps spread > 40 even when wet).
    Temperature bands bracket skin (~36.6 C) and bathing water (20 +- 2 C)
    with margin.
    """

    chroma_min_spread: int = 12          # min (R - B) for the warm-chroma gate
    chroma_min_red: int = 45
    skin_gate_temp: tuple = (27.0, 41.0)  # C, thermal path into the skin gate
    soap_min_brightness: float = 0.85     # HSV value, 0..1
    soap_max_saturation: float = 0.15     # HSV saturation, 0..1
    water_temp: tuple = (16.0, 26.0)      # C
    dry_temp: tuple = (30.0, 40.0)        # C


def segment_rgbt(rgb: RgbImage, thermal: ThermalImage,
                 params: SegParams | None = None) -> SegMask:
    """Classify every pixel; images must be registered and equally sized."""
    params = params or SegParams()
    if (rgb.height, rgb.width) != (thermal.height, thermal.width):
        raise ValueError(f"size mismatch: rgb {rgb.data.shape[:2]} vs "
                         f"thermal {thermal.data_ck.shape}")

    px = rgb.data.astype(np.int16)
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    temp = thermal.celsius()

    chroma = (r > g) & (g > b) & (r - b >= params.chroma_min_spread) & (r >= params.chroma_min_red)
    thermal_gate = (temp >= params.skin_gate_temp[0]) & (temp <= params.skin_gate_temp[1])
    skin = chroma | thermal_gate

    vmax = px.max(axis=2).astype(np.float64)
    vmin = px.min(axis=2).astype(np.float64)
    brightness = vmax / 255.0
    saturation = np.where(vmax > 0, (vmax - vmin) / np.maximum(vmax, 1), 0.0)
    frothy = (brightness > params.soap_min_brightness) & (saturation < params.soap_max_saturation)

    in_water = (temp >= params.water_temp[0]) & (temp <= params.water_temp[1])
    in_dry = (temp >= params.dry_temp[0]) & (temp <= params.dry_temp[1])
    # out-of-band pixels fall to whichever band edge is nearer in temperature
    dist_water = np.minimum(np.abs(temp - params.water_temp[0]), np.abs(temp - params.water_temp[1]))
    dist_dry = np.minimum(np.abs(temp - params.dry_temp[0]), np.abs(temp - params.dry_temp[1]))

    labels = np.full(temp.shape, BACKGROUND, dtype=np.uint8)
    labels[skin & frothy] = SOAP
    plain = skin & ~frothy
    labels[plain & in_water] = WATER
    labels[plain & in_dry] = DRY_SKIN
    stray = plain & ~in_water & ~in_dry
    labels[stray & (dist_water < dist_dry)] = WATER
    labels[stray & (dist_water >= dist_dry)] = DRY_SKIN

    return SegMask(labels=_majority_smooth(labels))


def _majority_smooth(labels: np.ndarray) -> np.ndarray:
    """One 3x3 majority-vote pass; ties go to the lowest class id."""
    kernel = np.ones((3, 3), dtype=np.int32)
    counts = np.stack([
        ndimage.convolve((labels == c).astype(np.int32), kernel, mode="nearest")
        for c in range(N_CLASSES)
    ])
    return counts.argmax(axis=0).astype(np.uint8)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IoUReport:
    per_class: tuple      # 4 entries, float in [0,1] or None when undefined
    miou: float

    def to_dict(self) -> dict:
        return {"per_class": {name: val for name, val in zip(CLASS_NAMES, self.per_class)},
                "miou": self.miou}


def iou(pred: SegMask, truth: SegMask) -> IoUReport:
    """Per-class intersection over union; classes absent from both are undefined."""
    if pred.labels.shape != truth.labels.shape:
        raise ValueError(f"size mismatch: {pred.labels.shape} vs {truth.labels.shape}")
    inter, union = iou_counts(pred, truth)
    return report_from_counts(inter, union)


def iou_counts(pred: SegMask, truth: SegMask) -> tuple[np.ndarray, np.ndarray]:
    """Raw per-class intersection/union pixel counts (for dataset aggregation)."""
    p = pred.labels.reshape(-1)
    t = truth.labels.reshape(-1)
    inter = np.zeros(N_CLASSES, dtype=np.int64)
    union = np.zeros(N_CLASSES, dtype=np.int64)
    for c in range(N_CLASSES):
        pc = p == c
        tc = t == c
        inter[c] = np.count_nonzero(pc & tc)
        union[c] = np.count_nonzero(pc | tc)
    return inter, union


def report_from_counts(inter: np.ndarray, union: np.ndarray) -> IoUReport:
    per_class = []
    defined = []
    for c in range(N_CLASSES):
        if union[c] == 0:
            per_class.append(None)
        else:
            val = float(inter[c]) / float(union[c])
            per_class.append(val)
            defined.append(val)
    miou = float(np.mean(defined)) if defined else float("nan")
    return IoUReport(per_class=tuple(per_class), miou=miou)


# ---------------------------------------------------------------------------
# dataset split
# ---------------------------------------------------------------------------

_XORSHIFT_MULT = 2685821657736338717
_U64 = (1 << 64) - 1


def _xorshift64star(state: int) -> tuple[int, int]:
    x = state & _U64
    x ^= x >> 12
    x = (x ^ (x << 25)) & _U64
    x ^= x >> 27
    return x, (x * _XORSHIFT_MULT) & _U64


def split_dataset(ids, seed: int) -> tuple[list, list, list]:
    """Deterministic 8:1:1 split (remainder to train), same on every platform."""
    ids = list(ids)
    if len(ids) < 10:
        raise ValueError(f"need at least 10 ids to split 8:1:1, got {len(ids)}")
    order = list(range(len(ids)))
    state = seed & _U64 or 0x9E3779B97F4A7C15
    # Fisher-Yates with the xorshift64* stream
    for i in range(len(order) - 1, 0, -1):
        state, rnd = _xorshift64star(state)
        j = rnd % (i + 1)
        order[i], order[j] = order[j], order[i]
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:])


# ---------------------------------------------------------------------------
# dataset directory layout
# ---------------------------------------------------------------------------

MANIFEST_COLUMNS = ["id", "tone", "hair", "coverage", "camera_pose"]


@dataclass(frozen=True)
class Scene:
    rgb: RgbImage
    thermal: ThermalImage
    depth: DepthImage
    mask: SegMask


def scene_paths(directory, scene_id: str) -> dict:
    d = Path(directory)
    return {"rgb": d / f"{scene_id}_rgb.ppm",
            "thermal": d / f"{scene_id}_thermal.pgm",
            "depth": d / f"{scene_id}_depth.pgm",
            "mask": d / f"{scene_id}_mask.pgm"}


def save_scene(directory, scene_id: str, scene: Scene) -> None:
    paths = scene_paths(directory, scene_id)
    pnm.save_ppm(paths["rgb"], scene.rgb.data)
    pnm.save_pgm(paths["thermal"], scene.thermal.data_ck, maxval=65535)
    pnm.save_pgm(paths["depth"], scene.depth.data_mm, maxval=65535)
    pnm.save_pgm(paths["mask"], scene.mask.labels, maxval=255)


def load_scene(directory, scene_id: str) -> Scene:
    paths = scene_paths(directory, scene_id)
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise FileNotFoundError("missing scene files: " + ", ".join(missing))
    rgb = RgbImage(pnm.load_ppm(paths["rgb"]))
    thermal_raw, _ = pnm.load_pgm(paths["thermal"], expected_maxval=65535)
    depth_raw, _ = pnm.load_pgm(paths["depth"], expected_maxval=65535)
    mask_raw, _ = pnm.load_pgm(paths["mask"], expected_maxval=255)
    return Scene(rgb=rgb,
                 thermal=ThermalImage(thermal_raw.astype(np.uint16)),
                 depth=DepthImage(depth_raw.astype(np.uint16)),
                 mask=SegMask(mask_raw.astype(np.uint8)))


def write_manifest(directory, rows: list) -> Path:
    path = Path(directory) / "manifest.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in MANIFEST_COLUMNS})
    return path


def read_manifest(directory) -> list:
    path = Path(directory) / "manifest.csv"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.csv in {directory}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

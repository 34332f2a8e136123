"""Scenario configuration: documented defaults, strict JSON loading, builders.

The default dict below is the single source of truth; `data/default.json`
ships the same content for CLI use. Loading merges user values over the
defaults, rejects unknown keys, and checks the schema version.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .control import FrictionObserverState, GainSchedule, GainSet
from .geometry import Pose6
from .limb import LimbSurface, TreatmentRules
from .perception import SegParams
from .planner import PrimitiveConfig
from .renderer import RenderNoise, overhead_camera
from .robot import DynamicsParams, KinematicChain
from .tasks import TaskKind
from .tool import ToolModel

SCHEMA_VERSION = "1"


class ConfigError(ValueError):
    """Unknown key, bad schema version, or malformed scenario JSON."""


def default_config() -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 7,
        "robot": {
            "chain": {
                "d": [0.28, 0.0, 0.30, 0.0, 0.22, 0.0, 0.10],
                "a": [0.0] * 7,
                "alpha": [-90.0, 90.0, -90.0, 90.0, -90.0, 90.0, 0.0],
                "theta_offset_deg": [0.0] * 7,
                "q_lower": [-2.9] * 7,
                "q_upper": [2.9] * 7,
            },
            "dynamics": {
                "inertia": [1.2, 1.2, 0.8, 0.8, 0.4, 0.3, 0.2],
                "viscous": [0.4] * 7,
                "coulomb": [0.3] * 7,
                "stiction": [0.8] * 7,
                "stribeck_velocity": 0.05,
                "link_masses": [3.0, 2.5, 2.2, 1.8, 1.2, 0.8, 0.5],
                "link_coms": [
                    [0.0, 0.0, -0.12],
                    [0.0, 0.05, 0.0],
                    [0.0, 0.0, -0.12],
                    [0.0, 0.05, 0.0],
                    [0.0, 0.0, -0.10],
                    [0.0, 0.03, 0.0],
                    [0.0, 0.0, -0.04],
                ],
                "torque_limits": [85.0, 85.0, 85.0, 85.0, 39.0, 39.0, 39.0],
            },
            # FK(home) hovers face-down 0.24 m over the limb center
            "home_q": [-0.430301, 1.374838, -1.681042, -1.032261,
                       -1.346417, -1.578015, 0.591927],
        },
        "controller": {
            "gains": {
                "wash": _gain_dict([800.0, 800.0, 600.0, 60.0, 60.0, 30.0],
                                   [90.0, 90.0, 70.0, 4.0, 4.0, 2.0],
                                   [40.0, 40.0, 40.0, 5.0, 5.0, 5.0]),
                "rinse": _gain_dict([800.0, 800.0, 600.0, 60.0, 60.0, 30.0],
                                    [90.0, 90.0, 70.0, 4.0, 4.0, 2.0],
                                    [40.0, 40.0, 40.0, 5.0, 5.0, 5.0]),
                "dry": _gain_dict([400.0, 400.0, 150.0, 60.0, 60.0, 30.0],
                                  [60.0, 60.0, 35.0, 4.0, 4.0, 2.0],
                                  [40.0, 40.0, 40.0, 5.0, 5.0, 5.0]),
                "free": _gain_dict([500.0, 500.0, 400.0, 60.0, 60.0, 30.0],
                                   [70.0, 70.0, 60.0, 4.0, 4.0, 2.0],
                                   [20.0, 20.0, 20.0, 2.0, 2.0, 2.0]),
            },
            "contact_threshold_n": 0.5,
            "contact_hysteresis_n": 0.2,
            "observer": {"enabled": True, "gain": 20.0, "clamp_margin_nm": 0.4},
        },
        "tool": {
            "plate_length": 0.10,
            "plate_width": 0.06,
            "spring_k": 300.0,
            "rest_length": 0.03,
            "max_compression": 0.02,
            "shear_limit": 0.01,
            "damping": 25.0,
        },
        "limb": {
            "center": [0.45, 0.0, 0.10],
            "length": 0.25,
            "radius": 0.04,
            "n_axial": 48,
            "n_circ": 48,
            "tone": 3,
            "initial_coverage": "none",
        },
        "bed_height": 0.06,
        "camera": {
            "height_above_limb": 0.65,
            "fx": 170.0,
            "fy": 170.0,
            "image_width": 160,
            "image_height": 120,
        },
        "render_noise": {"enabled": True, "rgb_sigma_8bit": 3.0, "thermal_sigma_c": 0.5},
        "sensor": {"noise_sigma_n": 0.05, "bias_drift_n_per_s": 1e-4, "latency_ticks": 2},
        "primitives": {
            "stroke_speed": 0.03,
            "travel_speed": 0.10,
            "descend_speed": 0.04,
            "lift_height": 0.04,
            "pat_hold_s": 0.7,
            "wash_force_n": 5.0,
            "rinse_force_n": 5.0,
            "dry_force_n": 3.0,
            "contact_bias_m": 0.005,
        },
        "treatment": {
            "wash_band_n": [2.0, 8.0],
            "rinse_band_n": [2.0, 8.0],
            "dry_band_n": [1.0, 6.0],
            "soap_rate_per_s": 1.0,
            "rinse_rate_per_s": 0.4,
            "rinse_wet_amount": 0.8,
            "dry_absorption_per_pat": 1.0,
        },
        "segmentation": {
            "chroma_min_spread": 12,
            "chroma_min_red": 45,
            "skin_gate_temp_c": [27.0, 41.0],
            "soap_min_brightness": 0.85,
            "soap_max_saturation": 0.15,
            "water_temp_c": [16.0, 26.0],
            "dry_temp_c": [30.0, 40.0],
        },
        "loop": {
            "control_dt": 0.001,
            "ticks_per_tracker": 14,
            "fluid_spread_every_ticks": 10,
            "max_phase_s": 240.0,
        },
    }


def _gain_dict(kp, kd, ki) -> dict:
    return {"kp": kp, "kd": kd, "ki": ki,
            "kf_p": [0.8, 0.8, 0.8], "kf_d": [0.02, 0.02, 0.02],
            "windup_cap": 30.0}


def _merge(defaults, override, path=""):
    if isinstance(defaults, dict):
        if not isinstance(override, dict):
            raise ConfigError(f"{path or 'config'}: expected object, got {type(override).__name__}")
        unknown = set(override) - set(defaults)
        if unknown:
            raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
        merged = {}
        for key, value in defaults.items():
            if key in override:
                merged[key] = _merge(value, override[key], f"{path}.{key}" if path else key)
            else:
                merged[key] = value
        return merged
    if isinstance(defaults, bool) and not isinstance(override, bool):
        raise ConfigError(f"{path}: expected boolean")
    if isinstance(defaults, (int, float)) and not isinstance(override, (int, float)):
        raise ConfigError(f"{path}: expected number")
    if isinstance(defaults, str) and not isinstance(override, str):
        raise ConfigError(f"{path}: expected string")
    if isinstance(defaults, list) and not isinstance(override, list):
        raise ConfigError(f"{path}: expected list")
    return override


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: line {exc.lineno} "
                          f"column {exc.colno}: {exc.msg}") from exc
    version = user.get("schema_version")
    if version is not None and str(version) != SCHEMA_VERSION:
        raise ConfigError(f"schema version {version!r} unsupported (expected {SCHEMA_VERSION})")
    return _merge(default_config(), user)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_chain(cfg: dict) -> KinematicChain:
    c = cfg["robot"]["chain"]
    return KinematicChain(
        d=np.asarray(c["d"], dtype=float),
        a=np.asarray(c["a"], dtype=float),
        alpha=np.radians(np.asarray(c["alpha"], dtype=float)),
        theta_offset=np.radians(np.asarray(c["theta_offset_deg"], dtype=float)),
        q_lower=np.asarray(c["q_lower"], dtype=float),
        q_upper=np.asarray(c["q_upper"], dtype=float),
    )


def build_dynamics(cfg: dict) -> DynamicsParams:
    d = cfg["robot"]["dynamics"]
    return DynamicsParams(
        inertia=np.asarray(d["inertia"], dtype=float),
        viscous=np.asarray(d["viscous"], dtype=float),
        coulomb=np.asarray(d["coulomb"], dtype=float),
        stiction=np.asarray(d["stiction"], dtype=float),
        stribeck_velocity=float(d["stribeck_velocity"]),
        link_masses=np.asarray(d["link_masses"], dtype=float),
        link_coms=np.asarray(d["link_coms"], dtype=float),
        torque_limits=np.asarray(d["torque_limits"], dtype=float),
    )


def build_gain_schedule(cfg: dict) -> GainSchedule:
    gains = {}
    for name, task in (("wash", TaskKind.WASH), ("rinse", TaskKind.RINSE),
                       ("dry", TaskKind.DRY), ("free", TaskKind.FREE_MOTION)):
        g = cfg["controller"]["gains"][name]
        gains[task] = GainSet(kp=g["kp"], kd=g["kd"], ki=g["ki"],
                              kf_p=g["kf_p"], kf_d=g["kf_d"],
                              windup_cap=float(g["windup_cap"]))
    return GainSchedule(gains=gains)


def build_observer(cfg: dict, dynamics: DynamicsParams) -> FrictionObserverState | None:
    obs = cfg["controller"]["observer"]
    if not obs["enabled"]:
        return None
    gain = float(obs["gain"])
    clamp = dynamics.stiction + float(obs["clamp_margin_nm"])
    return FrictionObserverState(gain=np.full(7, gain), tau_clamp=clamp)


def build_tool(cfg: dict) -> ToolModel:
    t = cfg["tool"]
    return ToolModel(plate_length=t["plate_length"], plate_width=t["plate_width"],
                     spring_k=t["spring_k"], rest_length=t["rest_length"],
                     max_compression=t["max_compression"], shear_limit=t["shear_limit"],
                     damping=t["damping"])


def build_limb(cfg: dict) -> LimbSurface:
    l = cfg["limb"]
    center = np.asarray(l["center"], dtype=float)
    half = np.array([l["length"] / 2.0, 0.0, 0.0])
    return LimbSurface(p0=center - half, p1=center + half, radius=float(l["radius"]),
                       n_axial=int(l["n_axial"]), n_circ=int(l["n_circ"]))


def build_camera(cfg: dict):
    cam = cfg["camera"]
    limb_center = np.asarray(cfg["limb"]["center"], dtype=float)
    return overhead_camera(limb_center, float(cam["height_above_limb"]),
                           fx=float(cam["fx"]), fy=float(cam["fy"]),
                           width=int(cam["image_width"]), height_px=int(cam["image_height"]))


def build_render_noise(cfg: dict) -> RenderNoise:
    n = cfg["render_noise"]
    if not n["enabled"]:
        return RenderNoise.off()
    return RenderNoise(rgb_sigma=float(n["rgb_sigma_8bit"]) / 255.0,
                       thermal_sigma_c=float(n["thermal_sigma_c"]))


def build_primitive_config(cfg: dict) -> PrimitiveConfig:
    p = cfg["primitives"]
    standoff = float(cfg["tool"]["rest_length"]) - float(p["contact_bias_m"])
    return PrimitiveConfig(stroke_speed=p["stroke_speed"], travel_speed=p["travel_speed"],
                           descend_speed=p["descend_speed"],
                           lift_height=p["lift_height"], pat_hold_s=p["pat_hold_s"],
                           wash_force_n=p["wash_force_n"], rinse_force_n=p["rinse_force_n"],
                           dry_force_n=p["dry_force_n"], tool_standoff=standoff)


def build_treatment(cfg: dict) -> TreatmentRules:
    t = cfg["treatment"]
    return TreatmentRules(
        force_bands={TaskKind.WASH: tuple(t["wash_band_n"]),
                     TaskKind.RINSE: tuple(t["rinse_band_n"]),
                     TaskKind.DRY: tuple(t["dry_band_n"])},
        soap_rate_per_s=float(t["soap_rate_per_s"]),
        rinse_rate_per_s=float(t["rinse_rate_per_s"]),
        rinse_wet_amount=float(t["rinse_wet_amount"]),
        dry_absorption_per_pat=float(t["dry_absorption_per_pat"]),
    )


def build_seg_params(cfg: dict) -> SegParams:
    s = cfg["segmentation"]
    return SegParams(chroma_min_spread=int(s["chroma_min_spread"]),
                     chroma_min_red=int(s["chroma_min_red"]),
                     skin_gate_temp=tuple(s["skin_gate_temp_c"]),
                     soap_min_brightness=float(s["soap_min_brightness"]),
                     soap_max_saturation=float(s["soap_max_saturation"]),
                     water_temp=tuple(s["water_temp_c"]),
                     dry_temp=tuple(s["dry_temp_c"]))


def write_default_config(path) -> None:
    Path(path).write_text(json.dumps(default_config(), indent=2) + "\n")

"""Command-line entry point.

Subcommands: `run` (closed-loop trial), `bench-seg` (IoU evaluation over a
dataset split), `gen-scene` (synthetic dataset generation), `calibrate`
(tactile flow-to-force regression). Exit codes: 0 ok, 2 runtime fault,
3 usage/config error. RABBIT_SIM_THREADS caps the bench worker pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import report as report_mod
from .config import ConfigError, default_config, load_config
from .control import CalibrationError, ControllerFault, fit_digit_calibration
from .limb import LimbSurface
from .perception import (CLASS_NAMES, SegParams, iou_counts, read_manifest,
                         report_from_counts, load_scene, save_scene, segment_rgbt,
                         split_dataset, write_manifest)
from .planner import write_primitive_csv
from .renderer import (COVERAGE_CATEGORIES, RenderNoise, apply_coverage,
                       camera_presets, render_rgbt)
from .robot import NonFiniteStateError
from .sim import LOG_COLUMNS, TrialError, run_trial
from .tasks import TaskKind

EXIT_OK = 0
EXIT_RUNTIME = 2
EXIT_USAGE = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the documented convention is 3."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_cfg(path: str | None) -> dict:
    if path is None:
        return default_config()
    return load_config(path)


def _worker_count() -> int:
    env = os.environ.get("RABBIT_SIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"RABBIT_SIM_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    try:
        cfg = _load_cfg(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        phases = [TaskKind.parse(p) for p in args.phases.split(",") if p]
    except ValueError as exc:
        print(f"bad --phases: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = run_trial(cfg, phases=phases)
    except (ControllerFault, NonFiniteStateError, TrialError) as exc:
        print(f"controller fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    result.log.write_csv(out / "trial.csv", verbose=args.verbose)
    report_mod.write_json(out / "report.json", result.report.to_dict())
    for task, primitive in result.primitives.items():
        write_primitive_csv(out / f"primitive_{task.value}.csv", primitive)

    arr = result.log.as_array()
    if arr.size:
        report_mod.save_force_trace(out / "force_trace.png", arr, LOG_COLUMNS)
        report_mod.save_tracking_trace(out / "tracking_trace.png", arr, LOG_COLUMNS)
    report_mod.save_surface_map(out / "surface_map.png", result.surface,
                                treated=None)
    for warning in result.log.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(json.dumps(result.report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench-seg
# ---------------------------------------------------------------------------

def _evaluate_scene(data_dir, scene_id, params: SegParams):
    scene = load_scene(data_dir, scene_id)
    predicted = segment_rgbt(scene.rgb, scene.thermal, params)
    return iou_counts(predicted, scene.mask)


def cmd_bench_seg(args) -> int:
    data_dir = Path(args.data)
    try:
        rows = read_manifest(data_dir)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    if not rows:
        print(f"empty dataset: {data_dir}", file=sys.stderr)
        return EXIT_USAGE

    ids = [row["id"] for row in rows]
    missing = []
    for scene_id in ids:
        for path in (data_dir / f"{scene_id}_rgb.ppm", data_dir / f"{scene_id}_thermal.pgm",
                     data_dir / f"{scene_id}_depth.pgm", data_dir / f"{scene_id}_mask.pgm"):
            if not path.exists():
                missing.append(path.name)
    if missing:
        print("missing dataset files: " + ", ".join(sorted(missing)), file=sys.stderr)
        return EXIT_USAGE

    train, val, test = split_dataset(ids, args.seed)
    chosen = {"train": train, "val": val, "test": test}[args.split]
    chosen = sorted(chosen)

    params = SegParams()
    inter = np.zeros(4, dtype=np.int64)
    union = np.zeros(4, dtype=np.int64)
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        for i, u in pool.map(lambda sid: _evaluate_scene(data_dir, sid, params), chosen):
            inter += i
            union += u
    rep = report_from_counts(inter, union)

    writer = csv.writer(sys.stdout)
    writer.writerow(["class", "iou"])
    for name, value in zip(CLASS_NAMES, rep.per_class):
        writer.writerow([name, "" if value is None else f"{value:.6f}"])
    writer.writerow(["miou", f"{rep.miou:.6f}"])

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "split": args.split,
        "seed": args.seed,
        "ids": chosen,
        "per_class": {name: val for name, val in zip(CLASS_NAMES, rep.per_class)},
        "miou": rep.miou,
    }
    report_mod.write_json(out_dir / "iou_report.json", payload)
    report_mod.save_iou_bars(out_dir / "iou_report.png", payload["per_class"], rep.miou)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-scene
# ---------------------------------------------------------------------------

def _parse_tones(spec: str) -> list:
    spec = spec.strip()
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        tones = list(range(int(lo), int(hi) + 1))
    else:
        tones = [int(tok) for tok in spec.split(",") if tok]
    for tone in tones:
        if not 1 <= tone <= 6:
            raise ValueError(f"tone {tone} out of range 1..6")
    return tones


def cmd_gen_scene(args) -> int:
    try:
        tones = _parse_tones(args.tones)
    except ValueError as exc:
        print(f"bad --tones: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    cfg = default_config()
    limb_cfg = cfg["limb"]
    center = np.asarray(limb_cfg["center"], dtype=float)
    cameras = camera_presets(center, base_height=cfg["camera"]["height_above_limb"])
    noise = (RenderNoise(rgb_sigma=cfg["render_noise"]["rgb_sigma_8bit"] / 255.0,
                         thermal_sigma_c=cfg["render_noise"]["thermal_sigma_c"])
             if args.noise == "on" else RenderNoise.off())

    seeds = np.random.SeedSequence(args.seed).spawn(max(args.count, 1))
    manifest_rows = []
    for i in range(args.count):
        tone = tones[i % len(tones)]
        coverage = COVERAGE_CATEGORIES[(i // len(tones)) % len(COVERAGE_CATEGORIES)]
        pose_idx = (i // (len(tones) * len(COVERAGE_CATEGORIES))) % len(cameras)
        rng = np.random.default_rng(seeds[i])

        half = np.array([limb_cfg["length"] / 2.0, 0.0, 0.0])
        surface = LimbSurface(p0=center - half, p1=center + half,
                              radius=limb_cfg["radius"],
                              n_axial=limb_cfg["n_axial"], n_circ=limb_cfg["n_circ"])
        apply_coverage(surface, coverage)
        scene = render_rgbt(surface, cameras[pose_idx],
                            cfg["camera"]["image_width"], cfg["camera"]["image_height"],
                            cfg["bed_height"], tone - 1, noise=noise, rng=rng)
        scene_id = f"scene{i:04d}"
        save_scene(out_dir, scene_id, scene)
        manifest_rows.append({"id": scene_id, "tone": tone, "hair": 0,
                              "coverage": coverage, "camera_pose": pose_idx})
    write_manifest(out_dir, manifest_rows)
    print(f"wrote {args.count} scenes to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    path = Path(args.samples)
    if not path.exists():
        print(f"no such sample file: {path}", file=sys.stderr)
        return EXIT_USAGE
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[-3:] != ["Fx", "Fy", "Fz"] or not header[:-3]:
            print("expected CSV header fx1..fxk, Fx, Fy, Fz", file=sys.stderr)
            return EXIT_USAGE
        k = len(header) - 3
        samples = []
        for row in reader:
            if not row:
                continue
            values = [float(v) for v in row]
            samples.append((np.asarray(values[:k]), np.asarray(values[k:])))
    try:
        calib = fit_digit_calibration(samples)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    report_mod.write_json(args.out, calib.to_dict())
    print(f"residual RMS: {calib.residual_rms:.6f} N")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bathsim",
                     description=__doc__,
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a closed-loop bathing trial",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_run.add_argument("--config", help="scenario JSON (defaults to the built-in scenario)")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--seed", type=int, help="override the scenario seed")
    p_run.add_argument("--phases", default="wash,rinse,dry",
                       help="comma-separated subset of wash,rinse,dry")
    p_run.add_argument("--verbose", action="store_true",
                       help="include tool equilibrium iterations in trial.csv")
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench-seg", help="evaluate segmentation IoU on a dataset",
                             formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_bench.add_argument("--data", required=True, help="dataset directory with manifest.csv")
    p_bench.add_argument("--split", choices=("train", "val", "test"), default="test")
    p_bench.add_argument("--seed", type=int, default=0, help="split shuffle seed")
    p_bench.add_argument("--out", default=".", help="directory for iou_report.json")
    p_bench.set_defaults(func=cmd_bench_seg)

    p_gen = sub.add_parser("gen-scene", help="generate synthetic RGB-T-D scenes",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--count", type=int, default=60)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--tones", default="1..6", help="skin tones, e.g. 1..6 or 2,4")
    p_gen.add_argument("--noise", choices=("on", "off"), default="off")
    p_gen.set_defaults(func=cmd_gen_scene)

    p_cal = sub.add_parser("calibrate", help="fit the tactile flow-to-force map",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_cal.add_argument("--samples", required=True, help="CSV with header fx1..fxk, Fx, Fy, Fz")
    p_cal.add_argument("--out", default="calibration.json", help="output JSON path")
    p_cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

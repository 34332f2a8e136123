"""Closed-loop trial executive: perceive, plan, and execute bathing phases.

The loop structure mirrors the target system: a behavior sequencer walks the
phases in order (wash, rinse, dry), querying perception once per phase. The
inner dynamics/controller loop runs at 1 kHz; the trajectory tracker advances
the reference point every `ticks_per_tracker` inner ticks (14 -> ~71.4 Hz);
tool equilibrium and treatment run every inner tick and fluid spreading every
10 ms. Everything is seeded, so a trial is bit-reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import control, planner, renderer
from .config import (build_camera, build_chain, build_dynamics, build_gain_schedule,
                     build_limb, build_observer, build_primitive_config,
                     build_render_noise, build_seg_params, build_tool, build_treatment)
from .control import (ContactDetector, ControllerState, FrictionObserverState,
                      friction_observer_update, resultant_torque, select_gains, task_torque)
from .geometry import Pose6, matrix_to_quat, pose_error
from .limb import (CELL_SOAPY, CELL_WET, FlatSurface, LimbSurface, TreatmentRules,
                   apply_treatment, fluid_spread)
from .perception import segment_rgbt
from .planner import (CameraModel, MotionPrimitive, Phase, PrimitiveConfig, ToolFootprint,
                      generate_primitive, lift_to_3d, plan_waypoints, target_region)
from .robot import (ChainFrames, DynamicsParams, JointState, KinematicChain, chain_frames,
                    gravity_torque, jacobian, step_dynamics)
from .tasks import TaskKind
from .tool import ToolModel, ToolState, contact_patch, solve_tool_equilibrium


class TrialError(RuntimeError):
    """Trial could not complete (tracker starvation or plant fault)."""


@dataclass
class ForceSensorModel:
    """Latency, Gaussian noise, and linear bias drift on the 3-DoF force."""

    noise_sigma: float = 0.05        # N
    bias_drift_per_s: float = 1e-4   # N/s
    latency_ticks: int = 2
    dt: float = 0.001
    rng: np.random.Generator = None

    def __post_init__(self):
        if self.noise_sigma < 0 or self.latency_ticks < 0:
            raise ValueError("sigma and latency must be non-negative")
        self._buffer = []
        if self.rng is None:
            self.rng = np.random.default_rng(0)

    def measure(self, true_force, tick: int) -> np.ndarray:
        self._buffer.append(np.asarray(true_force, dtype=float).copy())
        idx = len(self._buffer) - 1 - self.latency_ticks
        delayed = self._buffer[idx] if idx >= 0 else np.zeros(3)
        if len(self._buffer) > self.latency_ticks + 1:
            self._buffer.pop(0)
        bias = self.bias_drift_per_s * tick * self.dt
        noise = self.rng.normal(0.0, self.noise_sigma, 3) if self.noise_sigma > 0 else 0.0
        return delayed + bias + noise


PHASE_CODES = {TaskKind.WASH: 0, TaskKind.RINSE: 1, TaskKind.DRY: 2}
PHASE_NAMES = {v: k.value for k, v in PHASE_CODES.items()}

LOG_COLUMNS = ["t", "phase", "tracker_idx", "x", "y", "z", "xd", "yd", "zd",
               "fz_meas", "fz_des", "f_normal", "in_contact", "saturated", "eq_iters"]


@dataclass
class TrialLog:
    rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def append(self, *values):
        self.rows.append(values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float)

    def write_csv(self, path, verbose: bool = False) -> None:
        columns = LOG_COLUMNS if verbose else LOG_COLUMNS[:-1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in self.rows:
                out = row if verbose else row[:-1]
                writer.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in out])


@dataclass(frozen=True)
class CoverageReport:
    coverage_pct: float
    residual_soap_pct: float
    residual_water_pct: float
    peak_force_n: float
    force_rms_err_n: float
    duration_s: float
    saturation_events: int

    def to_dict(self) -> dict:
        return {
            "coverage_pct": round(self.coverage_pct, 6),
            "residual_soap_pct": round(self.residual_soap_pct, 6),
            "residual_water_pct": round(self.residual_water_pct, 6),
            "peak_force_n": round(self.peak_force_n, 6),
            "force_rms_err_n": round(self.force_rms_err_n, 6),
            "duration_s": round(self.duration_s, 6),
            "saturation_events": self.saturation_events,
        }


@dataclass
class TrialResult:
    log: TrialLog
    report: CoverageReport
    primitives: dict          # TaskKind -> MotionPrimitive
    scenes: dict              # TaskKind -> Scene (per-phase perception input)
    surface: LimbSurface


class TrialRunner:
    """Owns the full stack for one scenario config."""

    def __init__(self, cfg: dict, phases=None):
        self.cfg = cfg
        self.phases = phases or [TaskKind.WASH, TaskKind.RINSE, TaskKind.DRY]
        self.chain = build_chain(cfg)
        self.dynamics = build_dynamics(cfg)
        self.schedule = build_gain_schedule(cfg)
        self.tool = build_tool(cfg)
        self.limb = build_limb(cfg)
        self.camera = build_camera(cfg)
        self.noise = build_render_noise(cfg)
        self.primitive_cfg = build_primitive_config(cfg)
        self.treatment = build_treatment(cfg)
        self.seg_params = build_seg_params(cfg)
        self.bed_height = float(cfg["bed_height"])
        self.dt = float(cfg["loop"]["control_dt"])
        self.ticks_per_tracker = int(cfg["loop"]["ticks_per_tracker"])
        self.spread_every = int(cfg["loop"]["fluid_spread_every_ticks"])
        self.max_phase_ticks = int(float(cfg["loop"]["max_phase_s"]) / self.dt)

        seed = int(cfg["seed"])
        seq = np.random.SeedSequence(seed)
        self._render_seeds, sensor_seed = seq.spawn(2)
        s = cfg["sensor"]
        self.sensor = ForceSensorModel(noise_sigma=float(s["noise_sigma_n"]),
                                       bias_drift_per_s=float(s["bias_drift_n_per_s"]),
                                       latency_ticks=int(s["latency_ticks"]),
                                       dt=self.dt,
                                       rng=np.random.default_rng(sensor_seed))
        self.detector = ContactDetector(threshold=float(cfg["controller"]["contact_threshold_n"]),
                                        hysteresis=float(cfg["controller"]["contact_hysteresis_n"]))
        self.observer = build_observer(cfg, self.dynamics)

        self.joint_state = JointState.at_rest(np.asarray(cfg["robot"]["home_q"], dtype=float))
        self.ctrl_state = ControllerState()
        self.tick = 0
        self.treated = np.zeros((self.limb.n_axial, self.limb.n_circ), dtype=bool)

        coverage = cfg["limb"]["initial_coverage"]
        if coverage != "none":
            renderer.apply_coverage(self.limb, coverage)

    # -- perception + planning per phase ------------------------------------

    def perceive_and_plan(self, task: TaskKind, phase_index: int):
        rng = np.random.default_rng(self._render_seeds.spawn(phase_index + 1)[phase_index])
        cam_cfg = self.cfg["camera"]
        scene = renderer.render_rgbt(self.limb, self.camera,
                                     int(cam_cfg["image_width"]), int(cam_cfg["image_height"]),
                                     self.bed_height, int(self.cfg["limb"]["tone"]),
                                     noise=self.noise, rng=rng)
        mask = segment_rgbt(scene.rgb, scene.thermal, self.seg_params)
        region = target_region(mask, task)
        if not region.any():
            return scene, None, None

        depths = scene.depth.data_mm[region]
        depth_m = float(np.median(depths[depths > 0])) / 1000.0
        footprint = ToolFootprint.from_camera(self.tool.plate_length, self.tool.plate_width,
                                              self.camera, depth_m)
        waypoints = plan_waypoints(region, footprint, task)
        if waypoints.is_empty():
            return scene, None, None
        waypoints = lift_to_3d(waypoints, scene.depth, self.camera)

        frames = chain_frames(self.chain, self.joint_state.q)
        start = Pose6(position=frames.tool_position,
                      orientation=matrix_to_quat(frames.tool_rotation))
        primitive = generate_primitive(task, waypoints, self.primitive_cfg, start)
        return scene, primitive, footprint

    # -- execution -----------------------------------------------------------

    def execute_primitive(self, task: TaskKind, primitive: MotionPrimitive, log: TrialLog):
        gains = select_gains(self.schedule, task)
        self.ctrl_state.reset()
        self.detector.engaged = False
        if self.observer is not None:
            self.observer.reset()
        tau_fr_prev = np.zeros(7)
        # seed the damping reference from the current equilibrium so a phase
        # boundary does not look like an instantaneous compression jump
        frames0 = chain_frames(self.chain, self.joint_state.q)
        pose0 = Pose6(position=frames0.tool_position,
                      orientation=matrix_to_quat(frames0.tool_rotation))
        state0, _ = solve_tool_equilibrium(self.tool, pose0, self.limb)
        prev_compressions = state0.compressions
        warm_multipliers = state0.multipliers
        points = primitive.points
        total_ticks = self.ticks_per_tracker * len(points)
        if total_ticks > self.max_phase_ticks:
            raise TrialError(f"{task.value} phase would exceed the phase budget "
                             f"({total_ticks} ticks)")
        phase_code = PHASE_CODES[task]
        # dry pats decrement once per descend-hold: accumulate the union of
        # in-band contact patches over the hold, apply it when the hold ends
        pat_union = np.zeros((self.limb.n_axial, self.limb.n_circ), dtype=bool)
        pat_force = 0.0
        prev_ref_phase = None

        peak_force = 0.0
        force_err_sq = 0.0
        force_err_n = 0

        for i in range(total_ticks):
            tracker_idx = min(i // self.ticks_per_tracker, len(points) - 1)
            ref = points[tracker_idx]
            if prev_ref_phase is Phase.PAT and ref.phase is not Phase.PAT and pat_union.any():
                apply_treatment(self.limb, pat_union, task, pat_force, self.dt,
                                self.treatment, pat_event=True)
                pat_union[:] = False
            prev_ref_phase = ref.phase

            frames = chain_frames(self.chain, self.joint_state.q)
            actual = Pose6(position=frames.tool_position,
                           orientation=matrix_to_quat(frames.tool_rotation))
            jac = jacobian(self.chain, self.joint_state.q, frames=frames)

            tool_state, wrench = solve_tool_equilibrium(
                self.tool, actual, self.limb,
                prev_compressions=prev_compressions, dt=self.dt,
                warm_start=warm_multipliers)
            prev_compressions = tool_state.compressions
            warm_multipliers = tool_state.multipliers
            normal_force = float(wrench.force @ (-tool_state.plate_down))
            applied_on_surface = -wrench.force  # what the tool presses with

            measured = self.sensor.measure(applied_on_surface, self.tick)
            in_contact = self.detector.update(measured)

            self.ctrl_state.in_contact = in_contact
            self.ctrl_state.measured_force = measured
            self.ctrl_state.desired_force = ref.force

            err = pose_error(ref.pose, actual)
            e_x = -err.as_vector()              # tracking error, actual - desired
            e_f = measured - ref.force
            tau_task = task_torque(gains, self.ctrl_state, jac, e_x, e_f, self.dt)

            g = gravity_torque(self.chain, self.dynamics, self.joint_state.q, frames=frames)
            if self.observer is not None:
                # contact torque estimated from the measured force so the
                # nominal friction-free plant is also "blocked" by contact
                tau_contact_est = jac.T @ np.concatenate([measured, np.zeros(3)])
                tau_fr = friction_observer_update(self.observer,
                                                  tau_task + tau_fr_prev - tau_contact_est,
                                                  self.joint_state.dq,
                                                  self.dynamics.inertia, self.dt)
            else:
                tau_fr = np.zeros(7)
            tau_res, saturated = resultant_torque(tau_task, tau_fr, g,
                                                  self.dynamics.torque_limits)
            self.ctrl_state.saturated = saturated
            tau_fr_prev = tau_fr

            tau_contact = -(jac.T @ wrench.as_vector())
            self.joint_state = step_dynamics(self.chain, self.dynamics, self.joint_state,
                                             tau_res, self.dt, tau_contact=tau_contact,
                                             frames=frames, gravity=g)

            if tool_state.in_contact:
                patch = contact_patch(tool_state, self.limb)
                if task is TaskKind.DRY:
                    if (ref.phase is Phase.PAT
                            and self.treatment.in_band(task, normal_force)):
                        pat_union |= patch
                        pat_force = normal_force
                        self.treated |= patch
                else:
                    if apply_treatment(self.limb, patch, task, normal_force,
                                       self.dt, self.treatment):
                        self.treated |= patch

            if (self.tick + 1) % self.spread_every == 0:
                fluid_spread(self.limb, self.dt * self.spread_every)

            peak_force = max(peak_force, normal_force)
            if np.linalg.norm(ref.force) > 0:
                force_err_sq += float((measured[2] - ref.force[2]) ** 2)
                force_err_n += 1
            if i == total_ticks - 1 and pat_union.any():
                apply_treatment(self.limb, pat_union, task, pat_force, self.dt,
                                self.treatment, pat_event=True)
                pat_union[:] = False

            log.append(round(self.tick * self.dt, 6), phase_code, tracker_idx,
                       float(actual.position[0]), float(actual.position[1]),
                       float(actual.position[2]),
                       float(ref.pose.position[0]), float(ref.pose.position[1]),
                       float(ref.pose.position[2]),
                       float(measured[2]), float(ref.force[2]), normal_force,
                       int(in_contact), int(saturated), tool_state.iterations)
            self.tick += 1

        return peak_force, force_err_sq, force_err_n

    def run(self) -> TrialResult:
        log = TrialLog()
        primitives = {}
        scenes = {}
        peak = 0.0
        err_sq = 0.0
        err_n = 0
        saturations = 0
        for phase_index, task in enumerate(self.phases):
            scene, primitive, _ = self.perceive_and_plan(task, phase_index)
            scenes[task] = scene
            if primitive is None or not primitive.points:
                if task is TaskKind.WASH and self.limb.fraction_in_state(0) > 0.5:
                    log.warnings.append(f"{task.value}: empty target region on a "
                                        "visibly dry limb; phase skipped")
                continue
            primitives[task] = primitive
            p, e, n = self.execute_primitive(task, primitive, log)
            peak = max(peak, p)
            err_sq += e
            err_n += n

        arr = log.as_array()
        if arr.size:
            saturations = int(arr[:, LOG_COLUMNS.index("saturated")].sum())
        total = self.limb.n_cells()
        report = CoverageReport(
            coverage_pct=100.0 * float(self.treated.sum()) / total,
            residual_soap_pct=100.0 * float(np.count_nonzero(self.limb.state == CELL_SOAPY)) / total,
            residual_water_pct=100.0 * float(np.count_nonzero(self.limb.state == CELL_WET)) / total,
            peak_force_n=peak,
            force_rms_err_n=math.sqrt(err_sq / err_n) if err_n else 0.0,
            duration_s=round(self.tick * self.dt, 6),
            saturation_events=saturations,
        )
        return TrialResult(log=log, report=report, primitives=primitives,
                           scenes=scenes, surface=self.limb)


def run_trial(cfg: dict, phases=None) -> TrialResult:
    return TrialRunner(cfg, phases=phases).run()


# ---------------------------------------------------------------------------
# canonical verification scenarios
# ---------------------------------------------------------------------------

def run_force_step(cfg: dict, task: TaskKind = TaskKind.WASH,
                   desired_force_n: float | None = None,
                   duration_s: float = 3.0, sensor_noise: bool = True) -> dict:
    """Press the tool onto a rigid flat surface with a step force reference.

    Returns tick arrays for force-tracking analysis: the tool starts just
    above the plane, descends under position control, and holds the desired
    force after contact.
    """
    chain = build_chain(cfg)
    dynamics = build_dynamics(cfg)
    schedule = build_gain_schedule(cfg)
    tool = build_tool(cfg)
    gains = select_gains(schedule, task)
    dt = float(cfg["loop"]["control_dt"])
    if desired_force_n is None:
        key = {TaskKind.WASH: "wash_force_n", TaskKind.RINSE: "rinse_force_n",
               TaskKind.DRY: "dry_force_n"}[task]
        desired_force_n = float(cfg["primitives"][key])

    home = np.asarray(cfg["robot"]["home_q"], dtype=float)
    state = JointState.at_rest(home)
    frames = chain_frames(chain, home)
    start = Pose6(position=frames.tool_position,
                  orientation=matrix_to_quat(frames.tool_rotation))
    # plane placed so the tool face starts 2 mm above it
    surface = FlatSurface(height=float(frames.tool_position[2])
                          - build_tool(cfg).rest_length - 0.002)

    sensor_cfg = cfg["sensor"]
    sensor = ForceSensorModel(
        noise_sigma=float(sensor_cfg["noise_sigma_n"]) if sensor_noise else 0.0,
        bias_drift_per_s=float(sensor_cfg["bias_drift_n_per_s"]) if sensor_noise else 0.0,
        latency_ticks=int(sensor_cfg["latency_ticks"]),
        dt=dt, rng=np.random.default_rng(12345))
    detector = ContactDetector(threshold=float(cfg["controller"]["contact_threshold_n"]),
                               hysteresis=float(cfg["controller"]["contact_hysteresis_n"]))
    observer = build_observer(cfg, dynamics)
    ctrl = ControllerState()
    tau_fr_prev = np.zeros(7)
    prev_comp = np.zeros(4)
    warm = None

    desired_force = np.array([0.0, 0.0, -desired_force_n])
    # ramp the reference down into the plane at a gentle approach speed;
    # once contact engages the z channel belongs to the force controller
    descend_speed = 0.03
    descend_total = 0.010
    z0 = start.position[2]

    n_ticks = int(duration_s / dt)
    out = {"t": np.empty(n_ticks), "normal": np.empty(n_ticks),
           "measured_z": np.empty(n_ticks), "desired_z": np.full(n_ticks, -desired_force_n),
           "in_contact": np.zeros(n_ticks, dtype=bool)}

    for i in range(n_ticks):
        z_ref = z0 - min(descend_speed * i * dt, descend_total)
        desired_pose = Pose6(position=np.array([start.position[0], start.position[1], z_ref]),
                             orientation=planner.FACE_DOWN)
        frames = chain_frames(chain, state.q)
        actual = Pose6(position=frames.tool_position,
                       orientation=matrix_to_quat(frames.tool_rotation))
        jac = jacobian(chain, state.q, frames=frames)
        tool_state, wrench = solve_tool_equilibrium(tool, actual, surface,
                                                    prev_compressions=prev_comp, dt=dt,
                                                    warm_start=warm)
        prev_comp = tool_state.compressions
        warm = tool_state.multipliers
        normal = float(wrench.force @ (-tool_state.plate_down))
        measured = sensor.measure(-wrench.force, i)
        in_contact = detector.update(measured)

        ctrl.in_contact = in_contact
        ctrl.measured_force = measured
        ctrl.desired_force = desired_force
        e_x = -pose_error(desired_pose, actual).as_vector()
        e_f = measured - desired_force
        tau_task = task_torque(gains, ctrl, jac, e_x, e_f, dt)
        g = gravity_torque(chain, dynamics, state.q, frames=frames)
        if observer is not None:
            tau_contact_est = jac.T @ np.concatenate([measured, np.zeros(3)])
            tau_fr = friction_observer_update(observer,
                                              tau_task + tau_fr_prev - tau_contact_est,
                                              state.dq, dynamics.inertia, dt)
        else:
            tau_fr = np.zeros(7)
        tau_res, saturated = resultant_torque(tau_task, tau_fr, g, dynamics.torque_limits)
        ctrl.saturated = saturated
        tau_fr_prev = tau_fr
        tau_contact = -(jac.T @ wrench.as_vector())
        state = step_dynamics(chain, dynamics, state, tau_res, dt,
                              tau_contact=tau_contact, frames=frames, gravity=g)

        out["t"][i] = i * dt
        out["normal"][i] = normal
        out["measured_z"][i] = measured[2]
        out["in_contact"][i] = in_contact
    return out


def run_stiction_demo(observer_enabled: bool, duration_s: float = 4.0,
                      target_rad: float = 0.5, kp: float = 10.0, kd: float = 2.0,
                      observer_gain: float = 20.0) -> dict:
    """Canonical 1-joint stiction scenario: PD position step with/without the
    friction observer. Returns the trace and the steady-state |error|."""
    dt = 0.001
    inertia = np.full(7, 0.4)
    params = DynamicsParams(
        inertia=inertia, viscous=np.full(7, 0.3), coulomb=np.full(7, 0.4),
        stiction=np.full(7, 1.2), stribeck_velocity=0.05,
        link_masses=np.zeros(7), link_coms=np.zeros((7, 3)),
        torque_limits=np.full(7, 30.0))
    from .robot import friction_torque

    obs = FrictionObserverState(gain=np.full(7, observer_gain),
                                tau_clamp=params.stiction + 0.4)
    q = 0.0
    dq = 0.0
    tau_fr_prev = 0.0
    n = int(duration_s / dt)
    err = np.empty(n)
    for i in range(n):
        e = target_rad - q
        tau_pd = kp * e - kd * dq
        tau_fr = 0.0
        if observer_enabled:
            vec = friction_observer_update(
                obs, np.r_[tau_pd + tau_fr_prev, np.zeros(6)],
                np.r_[dq, np.zeros(6)], inertia, dt)
            tau_fr = float(vec[0])
        tau = tau_pd + tau_fr
        tau_fr_prev = tau_fr
        fr = float(friction_torque(params, np.r_[dq, np.zeros(6)],
                                   np.r_[tau, np.zeros(6)])[0])
        ddq = (tau - fr) / float(inertia[0])
        dq += ddq * dt
        q += dq * dt
        err[i] = abs(target_rad - q)
    steady = float(np.mean(err[int(0.75 * n):]))
    return {"error": err, "steady_state_error": steady, "dt": dt}

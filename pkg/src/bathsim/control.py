"""Gain-scheduled task-space compliance controller with friction observer.

The control law maps 6-DoF tracking error (and, on contact, a z-axis force
error) through PID gains and the transposed jacobian into joint torques:

    tau_task = -J^T (Kp e_x + Kd de_x/dt + Ki int(e_x) + force channel)
    tau_res  = tau_task + tau_fr_nom + g

Sign convention: the error inputs are tracking errors in the
actual-minus-desired sense (e_x = x - x_d, e_f = f_meas - f_d), so the
leading minus drives both toward zero. While in contact the z translational
row of the position PID is replaced by the force channel
(-f_d_z + Kf_p e_f_z + Kf_d de_f_z/dt); the desired-force feedforward removes
the proportional droop a pure PD force term would leave. The z integral is
frozen during contact.

Derivatives are first differences through a one-pole low-pass (50 Hz cutoff)
so 1 kHz sensor noise is not amplified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tasks import TaskKind

DERIVATIVE_CUTOFF_HZ = 50.0
RIDGE_EPS = 1e-9


class ControllerFault(RuntimeError):
    """Non-finite controller input or output."""


class UnknownTaskError(KeyError):
    """Gain schedule has no entry for the requested task."""


class CalibrationError(ValueError):
    """Calibration sample set is underdetermined or rank deficient."""


def _vec(x, n):
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise ValueError(f"expected length-{n} vector, got shape {np.shape(x)}")
    return v


@dataclass(frozen=True)
class GainSet:
    """Diagonal task-space PID gains plus z-force PD gains."""

    kp: np.ndarray              # 6, N/m and N m/rad
    kd: np.ndarray              # 6, N s/m and N m s/rad
    ki: np.ndarray              # 6, N/(m s) and N m/(rad s)
    kf_p: np.ndarray            # 3, dimensionless force P
    kf_d: np.ndarray            # 3, seconds, force D
    windup_cap: float = 50.0    # task-space magnitude the integral term may reach

    def __post_init__(self):
        object.__setattr__(self, "kp", _vec(self.kp, 6).copy())
        object.__setattr__(self, "kd", _vec(self.kd, 6).copy())
        object.__setattr__(self, "ki", _vec(self.ki, 6).copy())
        object.__setattr__(self, "kf_p", _vec(self.kf_p, 3).copy())
        object.__setattr__(self, "kf_d", _vec(self.kf_d, 3).copy())
        if np.any(self.kp < 0) or np.any(self.kd < 0) or np.any(self.ki < 0):
            raise ValueError("gains must be non-negative")
        if np.any(self.kp[:3] <= 0):
            raise ValueError("translational Kp entries must be positive")
        ki = np.where(self.ki > 0, self.ki, np.inf)
        object.__setattr__(self, "_integral_limit", self.windup_cap / ki)

    def integral_limit(self) -> np.ndarray:
        """Per-axis anti-windup clamp on the integral state."""
        return self._integral_limit


@dataclass(frozen=True)
class GainSchedule:
    gains: dict

    def __post_init__(self):
        wash = self.gains.get(TaskKind.WASH)
        rinse = self.gains.get(TaskKind.RINSE)
        dry = self.gains.get(TaskKind.DRY)
        if dry is not None:
            for stiff in (wash, rinse):
                if stiff is not None and not dry.kp[2] < stiff.kp[2]:
                    raise ValueError("drying stiffness (Kp z) must be strictly "
                                     "below wash/rinse stiffness")


def select_gains(schedule: GainSchedule, task: TaskKind) -> GainSet:
    try:
        return schedule.gains[task]
    except KeyError:
        raise UnknownTaskError(f"no gains configured for task {task!r}") from None


@dataclass
class ControllerState:
    """Mutated in place by task_torque; owned by the 1 kHz simulation thread."""

    integral: np.ndarray = field(default_factory=lambda: np.zeros(6))
    prev_err: np.ndarray = field(default_factory=lambda: np.zeros(6))
    derr_filt: np.ndarray = field(default_factory=lambda: np.zeros(6))
    prev_ef: np.ndarray = field(default_factory=lambda: np.zeros(3))
    def_filt: np.ndarray = field(default_factory=lambda: np.zeros(3))
    in_contact: bool = False
    measured_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    desired_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    saturated: bool = False
    initialized: bool = False

    def reset(self):
        self.integral[:] = 0.0
        self.prev_err[:] = 0.0
        self.derr_filt[:] = 0.0
        self.prev_ef[:] = 0.0
        self.def_filt[:] = 0.0
        self.in_contact = False
        self.saturated = False
        self.initialized = False


def task_torque(gains: GainSet, state: ControllerState, jac: np.ndarray,
                e_x, e_f, dt: float) -> np.ndarray:
    """One tick of the task-space compliance law; returns 7 joint torques."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    e_x = _vec(e_x, 6)
    e_f = _vec(e_f, 3)
    jac = np.asarray(jac, dtype=float)
    # a non-finite jacobian is caught by the output check below
    if not (np.all(np.isfinite(e_x)) and np.all(np.isfinite(e_f))):
        raise ControllerFault("non-finite controller input")

    alpha = dt / (dt + 1.0 / (2.0 * math.pi * DERIVATIVE_CUTOFF_HZ))
    if not state.initialized:
        state.prev_err = e_x.copy()
        state.prev_ef = e_f.copy()
        state.initialized = True
    state.derr_filt += alpha * ((e_x - state.prev_err) / dt - state.derr_filt)
    state.def_filt += alpha * ((e_f - state.prev_ef) / dt - state.def_filt)
    state.prev_err = e_x.copy()
    state.prev_ef = e_f.copy()

    if not state.saturated:
        new_integral = state.integral + e_x * dt
        if state.in_contact:
            new_integral[2] = state.integral[2]  # z channel handed to force control
        limit = gains.integral_limit()
        state.integral = np.clip(new_integral, -limit, limit)

    w = gains.kp * e_x + gains.kd * state.derr_filt + gains.ki * state.integral
    if state.in_contact:
        w[2] = (-state.desired_force[2]
                + gains.kf_p[2] * e_f[2]
                + gains.kf_d[2] * state.def_filt[2])

    tau = -(jac.T @ w)
    if not np.all(np.isfinite(tau)):
        raise ControllerFault("non-finite task torque")
    return tau


def resultant_torque(tau_task, tau_fr_nom, g, torque_limits) -> tuple[np.ndarray, bool]:
    """Sum command components and clamp to per-joint limits; flags saturation."""
    total = _vec(tau_task, 7) + _vec(tau_fr_nom, 7) + _vec(g, 7)
    if not np.all(np.isfinite(total)):
        raise ControllerFault("non-finite resultant torque")
    limits = _vec(torque_limits, 7)
    clamped = np.clip(total, -limits, limits)
    return clamped, bool(np.any(clamped != total))


# ---------------------------------------------------------------------------
# friction observer
# ---------------------------------------------------------------------------

@dataclass
class FrictionObserverState:
    """Nominal friction-free plant velocity plus compensation clamp.

    The nominal plant integrates the applied (gravity-free) command; the
    mismatch against measured velocity, scaled by L * inertia, is the friction
    estimate. A leak with time constant 1/L keeps the nominal velocity bounded,
    and the output clamp (stiction + margin) bounds the compensation when a
    joint stays blocked.
    """

    gain: np.ndarray                 # L, 1/s, per joint
    tau_clamp: np.ndarray            # N m, per joint
    nominal_dq: np.ndarray = field(default_factory=lambda: np.zeros(7))

    def __post_init__(self):
        self.gain = _vec(self.gain, 7).copy()
        self.tau_clamp = _vec(self.tau_clamp, 7).copy()
        self.nominal_dq = _vec(self.nominal_dq, 7).copy()
        if np.any(self.gain < 0):
            raise ValueError("observer gain must be non-negative")

    def reset(self):
        self.nominal_dq[:] = 0.0


def friction_observer_update(obs: FrictionObserverState, tau_command, dq_measured,
                             inertia, dt: float) -> np.ndarray:
    """Advance the nominal plant one tick and return the friction estimate.

    tau_command is the net torque a friction-free plant would see: the applied
    command minus gravity and minus the (estimated) contact torque. Leaving the
    contact torque in would make a blocked-in-contact joint look like friction
    and ratchet the compensation to the clamp.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    tau_command = _vec(tau_command, 7)
    dq_measured = _vec(dq_measured, 7)
    inertia = _vec(inertia, 7)

    obs.nominal_dq += (tau_command / inertia) * dt
    obs.nominal_dq += obs.gain * (dq_measured - obs.nominal_dq) * dt
    tau_fr_nom = obs.gain * inertia * (obs.nominal_dq - dq_measured)
    return np.clip(tau_fr_nom, -obs.tau_clamp, obs.tau_clamp)


# ---------------------------------------------------------------------------
# contact detection
# ---------------------------------------------------------------------------

class ContactDetector:
    """Hysteretic threshold on |f_z|: engage above threshold, release below
    threshold - hysteresis."""

    def __init__(self, threshold: float = 0.5, hysteresis: float = 0.2):
        if not threshold > hysteresis > 0:
            raise ValueError("require threshold > hysteresis > 0")
        self.threshold = threshold
        self.hysteresis = hysteresis
        self.engaged = False

    def update(self, measured_force) -> bool:
        fz = abs(float(np.asarray(measured_force, dtype=float).reshape(-1)[2]))
        if self.engaged:
            if fz < self.threshold - self.hysteresis:
                self.engaged = False
        elif fz > self.threshold:
            self.engaged = True
        return self.engaged


# ---------------------------------------------------------------------------
# tactile sensor calibration (optical-flow features -> force)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DigitCalibration:
    matrix: np.ndarray        # 3 x k
    bias: np.ndarray          # 3
    residual_rms: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != 3 or m.shape[1] < 3:
            raise ValueError("calibration matrix must be 3 x k with k >= 3")
        object.__setattr__(self, "matrix", m.copy())
        object.__setattr__(self, "bias", _vec(self.bias, 3).copy())
        if not math.isfinite(self.residual_rms):
            raise ValueError("residual must be finite")

    def apply(self, features) -> np.ndarray:
        return self.matrix @ np.asarray(features, dtype=float) + self.bias

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist(), "bias": self.bias.tolist(),
                "residual_rms": self.residual_rms}

    @staticmethod
    def from_dict(d: dict) -> "DigitCalibration":
        return DigitCalibration(matrix=np.asarray(d["matrix"], dtype=float),
                                bias=np.asarray(d["bias"], dtype=float),
                                residual_rms=float(d["residual_rms"]))


def fit_digit_calibration(samples) -> DigitCalibration:
    """Ordinary least squares (normal equations, tiny ridge) per force axis."""
    if len(samples) == 0:
        raise CalibrationError("no calibration samples")
    feats = np.asarray([np.asarray(f, dtype=float).reshape(-1) for f, _ in samples])
    forces = np.asarray([_vec(w, 3) for _, w in samples])
    n, k = feats.shape
    if k < 3:
        raise CalibrationError(f"need at least 3 flow features, got {k}")
    if n < k + 1:
        raise CalibrationError(f"underdetermined: {n} samples for {k} features")

    design = np.hstack([feats, np.ones((n, 1))])
    svals = np.linalg.svd(design, compute_uv=False)
    if svals[-1] < 1e-10 * svals[0]:
        raise CalibrationError("feature matrix is rank deficient")

    gram = design.T @ design + RIDGE_EPS * np.eye(k + 1)
    theta = np.linalg.solve(gram, design.T @ forces)   # (k+1) x 3
    residual = design @ theta - forces
    rms = float(np.sqrt(np.mean(residual ** 2)))
    return DigitCalibration(matrix=theta[:k].T, bias=theta[k], residual_rms=rms)

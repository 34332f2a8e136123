"""7-DoF serial arm: kinematics, gravity statics, joint friction, plant stepping.

The chain is parameterized by standard DH rows (link offset d, link length a,
twist alpha, joint angle offset). The default table is a generic
anthropomorphic 7-DoF arm with alternating joint axes and ~0.9 m reach;
real arm values can be substituted through the scenario config.

Dynamics are diagonal-inertia with gravity, viscous/Coulomb/stiction friction
(Stribeck decay) and external contact torque, integrated with semi-implicit
Euler. Good enough for quasi-static bathing speeds; no Coriolis terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose6, matrix_to_quat, quat_rotate, quat_to_matrix

GRAVITY = np.array([0.0, 0.0, -9.81])
STICTION_VELOCITY_EPS = 1e-4  # rad/s below which stiction clamps the joint

N_JOINTS = 7


class NonFiniteStateError(RuntimeError):
    """Raised when integration produces NaN/inf joint state."""


def _vec7(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape[0] != N_JOINTS:
        raise ValueError(f"expected 7-vector, got shape {np.shape(x)}")
    return v


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    dq: np.ndarray
    tau_applied: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _vec7(self.q).copy())
        object.__setattr__(self, "dq", _vec7(self.dq).copy())
        object.__setattr__(self, "tau_applied", _vec7(self.tau_applied).copy())

    @staticmethod
    def at_rest(q) -> "JointState":
        return JointState(q=q, dq=np.zeros(N_JOINTS), tau_applied=np.zeros(N_JOINTS))


@dataclass(frozen=True)
class KinematicChain:
    """Standard DH table (7 revolute joints) plus base and tool-mount poses."""

    d: np.ndarray          # link offsets along z, meters
    a: np.ndarray          # link lengths along x, meters
    alpha: np.ndarray      # twists, radians
    theta_offset: np.ndarray
    base_pose: Pose6 = field(default_factory=Pose6.identity)
    tool_offset: Pose6 = field(default_factory=Pose6.identity)
    q_lower: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, -2.9))
    q_upper: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, 2.9))

    def __post_init__(self):
        for name in ("d", "a", "alpha", "theta_offset", "q_lower", "q_upper"):
            object.__setattr__(self, name, _vec7(getattr(self, name)).copy())


@dataclass(frozen=True)
class DynamicsParams:
    inertia: np.ndarray            # kg m^2, diagonal
    viscous: np.ndarray            # N m s / rad
    coulomb: np.ndarray            # N m
    stiction: np.ndarray           # N m (breakaway), >= coulomb
    stribeck_velocity: float       # rad/s
    link_masses: np.ndarray        # kg, one per link
    link_coms: np.ndarray          # 7x3, COM offset in each link frame
    torque_limits: np.ndarray = field(default_factory=lambda: np.array([85.0, 85.0, 85.0, 85.0, 39.0, 39.0, 39.0]))

    def __post_init__(self):
        for name in ("inertia", "viscous", "coulomb", "stiction", "link_masses", "torque_limits"):
            object.__setattr__(self, name, _vec7(getattr(self, name)).copy())
        object.__setattr__(self, "link_coms", np.asarray(self.link_coms, dtype=float).reshape(7, 3).copy())
        if np.any(self.inertia <= 0):
            raise ValueError("inertia entries must be positive")
        if np.any(self.stiction < self.coulomb) or np.any(self.coulomb < 0):
            raise ValueError("require stiction >= coulomb >= 0")


def default_chain() -> KinematicChain:
    """Generic anthropomorphic 7-DoF table, alternating z/x axes, ~0.9 m reach."""
    return KinematicChain(
        d=np.array([0.28, 0.0, 0.30, 0.0, 0.22, 0.0, 0.10]),
        a=np.zeros(N_JOINTS),
        alpha=np.array([-np.pi / 2, np.pi / 2, -np.pi / 2, np.pi / 2, -np.pi / 2, np.pi / 2, 0.0]),
        theta_offset=np.zeros(N_JOINTS),
    )


def default_dynamics() -> DynamicsParams:
    return DynamicsParams(
        inertia=np.array([1.2, 1.2, 0.8, 0.8, 0.4, 0.3, 0.2]),
        viscous=np.full(N_JOINTS, 0.4),
        coulomb=np.full(N_JOINTS, 0.3),
        stiction=np.full(N_JOINTS, 0.8),
        stribeck_velocity=0.05,
        link_masses=np.array([3.0, 2.5, 2.2, 1.8, 1.2, 0.8, 0.5]),
        link_coms=np.array([
            [0.0, 0.0, -0.12],
            [0.0, 0.05, 0.0],
            [0.0, 0.0, -0.12],
            [0.0, 0.05, 0.0],
            [0.0, 0.0, -0.10],
            [0.0, 0.03, 0.0],
            [0.0, 0.0, -0.04],
        ]),
    )


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainFrames:
    """One FK pass: everything jacobian/gravity need without recomputation."""

    joint_origins: np.ndarray   # 7x3, frame origin each joint rotates about
    joint_axes: np.ndarray      # 7x3, world-frame joint axes
    link_rotations: np.ndarray  # 7x3x3, world rotation of each link frame
    link_origins: np.ndarray    # 7x3, world origin of each link frame
    tool_rotation: np.ndarray   # 3x3
    tool_position: np.ndarray   # 3


def _chain_static(chain: KinematicChain) -> tuple:
    """Constant per-chain matrices, cached on the frozen instance."""
    cached = getattr(chain, "_static", None)
    if cached is None:
        cached = (quat_to_matrix(chain.base_pose.orientation),
                  quat_to_matrix(chain.tool_offset.orientation),
                  np.cos(chain.alpha), np.sin(chain.alpha))
        object.__setattr__(chain, "_static", cached)
    return cached


def chain_frames(chain: KinematicChain, q) -> ChainFrames:
    q = _vec7(q)
    base_rot, tool_rot_off, ca, sa = _chain_static(chain)
    rot = base_rot
    pos = chain.base_pose.position

    joint_origins = np.empty((N_JOINTS, 3))
    joint_axes = np.empty((N_JOINTS, 3))
    link_rotations = np.empty((N_JOINTS, 3, 3))
    link_origins = np.empty((N_JOINTS, 3))

    theta = q + chain.theta_offset
    ct_all = np.cos(theta)
    st_all = np.sin(theta)
    local = np.empty((N_JOINTS, 3, 3))
    # standard DH: Rz(theta) Tz(d) Tx(a) Rx(alpha)
    local[:, 0, 0] = ct_all
    local[:, 0, 1] = -st_all * ca
    local[:, 0, 2] = st_all * sa
    local[:, 1, 0] = st_all
    local[:, 1, 1] = ct_all * ca
    local[:, 1, 2] = -ct_all * sa
    local[:, 2, 0] = 0.0
    local[:, 2, 1] = sa
    local[:, 2, 2] = ca
    offsets = np.stack([chain.a * ct_all, chain.a * st_all, chain.d], axis=1)

    for i in range(N_JOINTS):
        joint_origins[i] = pos
        joint_axes[i] = rot[:, 2]
        pos = pos + rot @ offsets[i]
        rot = rot @ local[i]
        link_rotations[i] = rot
        link_origins[i] = pos

    tool_rot = rot @ tool_rot_off
    tool_pos = pos + rot @ chain.tool_offset.position
    return ChainFrames(joint_origins, joint_axes, link_rotations, link_origins,
                       tool_rot, tool_pos)


def forward_kinematics(chain: KinematicChain, q) -> Pose6:
    """Tool-mount pose in the base (world) frame."""
    fr = chain_frames(chain, q)
    return Pose6(position=fr.tool_position, orientation=matrix_to_quat(fr.tool_rotation))


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product without np.cross's axis-juggling overhead."""
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def jacobian(chain: KinematicChain, q, frames: ChainFrames | None = None) -> np.ndarray:
    """Geometric jacobian, 6x7: rows = [linear; angular] tool twist per unit dq."""
    fr = frames if frames is not None else chain_frames(chain, q)
    jac = np.empty((6, N_JOINTS))
    arm = fr.tool_position - fr.joint_origins          # 7x3
    jac[:3, :] = _cross_rows(fr.joint_axes, arm).T
    jac[3:, :] = fr.joint_axes.T
    return jac


def gravity_torque(chain: KinematicChain, params: DynamicsParams, q,
                   frames: ChainFrames | None = None) -> np.ndarray:
    """Joint torques statically balancing link weights (point mass per link).

    tau_i = -axis_i . sum_{j>=i} (com_j - origin_i) x w_j, evaluated with
    reversed cumulative sums so the whole vector comes out of one pass.
    """
    fr = frames if frames is not None else chain_frames(chain, q)
    coms = fr.link_origins + np.einsum("ijk,ik->ij", fr.link_rotations, params.link_coms)
    weights = params.link_masses[:, None] * GRAVITY  # 7x3 force per link
    # suffix sums over links j >= i of w_j and com_j x w_j
    f_suffix = np.cumsum(weights[::-1], axis=0)[::-1]
    m_suffix = np.cumsum(_cross_rows(coms, weights)[::-1], axis=0)[::-1]
    moments = m_suffix - _cross_rows(fr.joint_origins, f_suffix)
    return -np.einsum("ij,ij->i", fr.joint_axes, moments)


# ---------------------------------------------------------------------------
# friction and plant stepping
# ---------------------------------------------------------------------------

def friction_torque(params: DynamicsParams, dq, tau_external) -> np.ndarray:
    """Resistive joint torque (sign follows dq while moving).

    Below the stiction velocity threshold the joint holds against up to
    +-stiction of net external torque; while moving, Coulomb + viscous with
    a Stribeck decay from stiction down to Coulomb.
    """
    dq = _vec7(dq)
    tau_external = _vec7(tau_external)
    moving = np.abs(dq) >= STICTION_VELOCITY_EPS
    speed = np.abs(dq)
    stribeck = (params.stiction - params.coulomb) * np.exp(-(speed / params.stribeck_velocity) ** 2)
    sliding = np.sign(dq) * (params.coulomb + stribeck) + params.viscous * dq
    stuck = np.clip(tau_external, -params.stiction, params.stiction)
    return np.where(moving, sliding, stuck)


def step_dynamics(chain: KinematicChain, params: DynamicsParams, state: JointState,
                  tau_command, dt: float, tau_contact=None,
                  frames: ChainFrames | None = None,
                  gravity: np.ndarray | None = None) -> JointState:
    """Semi-implicit Euler step of the diagonal-inertia plant."""
    if not 0.0 < dt <= 0.01:
        raise ValueError("dt must be in (0, 0.01] s")
    tau_command = _vec7(tau_command)
    tau_contact = np.zeros(N_JOINTS) if tau_contact is None else _vec7(tau_contact)

    g = gravity_torque(chain, params, state.q, frames=frames) if gravity is None else gravity
    tau_ext = tau_command - g - tau_contact
    fr = friction_torque(params, state.dq, tau_ext)
    ddq = (tau_ext - fr) / params.inertia

    dq = state.dq + ddq * dt
    q = state.q + dq * dt

    at_lower = q < chain.q_lower
    at_upper = q > chain.q_upper
    if at_lower.any() or at_upper.any():
        q = np.clip(q, chain.q_lower, chain.q_upper)
        dq = np.where(at_lower | at_upper, 0.0, dq)

    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(dq))):
        raise NonFiniteStateError("joint state diverged (non-finite q or dq)")
    return JointState(q=q, dq=dq, tau_applied=tau_command)


def joint_move_cubic(q_start, q_end, duration: float, t: float) -> np.ndarray:
    """Point-to-point joint interpolation with zero endpoint velocities."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    s = min(max(t / duration, 0.0), 1.0)
    blend = 3.0 * s * s - 2.0 * s ** 3
    q_start = _vec7(q_start)
    return q_start + blend * (_vec7(q_end) - q_start)

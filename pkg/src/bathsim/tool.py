"""Quasi-static model of the compliant wiper: two plates, four corner springs.

The top plate is rigid on the end-effector; the bottom plate hangs one rest
length below it and may compress and tilt against the surface. Equilibrium is
the spring-energy minimum subject to non-penetration, solved by a projected
fixed-point iteration (Dykstra) over the corner compressions constrained to
the rigid-plate (coplanar) subspace. Non-penetration is enforced at the four
corners plus the plate center and edge midpoints: with corner-only samples a
plate wider than the limb's curvature sinks through the crest, which inverts
the contact patch. The springs still sit only at the corners. The wire tether
is modeled as the parallel-at-rest constraint plus a hard shear clamp, so the
bottom plate never shifts laterally.

The plate is light and the loop runs at 1 kHz, so plate inertia is ignored;
a compression-rate damping term (supplied via the previous compressions) adds
numerical contact stability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose6, Wrench, quat_to_matrix

MAX_ITERATIONS = 50
CONVERGENCE_TOL_M = 1e-6
PATCH_PLANE_TOL_M = 1e-3


@dataclass(frozen=True)
class ToolModel:
    plate_length: float = 0.10      # m, along tool x
    plate_width: float = 0.06       # m, along tool y
    spring_k: float = 300.0         # N/m per spring
    rest_length: float = 0.03       # m
    max_compression: float = 0.02   # m
    shear_limit: float = 0.01       # m
    damping: float = 25.0           # N s/m per spring

    def __post_init__(self):
        if self.spring_k <= 0 or self.shear_limit <= 0:
            raise ValueError("spring stiffness and shear limit must be positive")
        if not self.rest_length > self.max_compression >= 0:
            raise ValueError("require rest length > max compression >= 0")

    def corner_offsets(self) -> np.ndarray:
        """Tool-frame (x, y) corner coordinates, 4x2."""
        hl, hw = self.plate_length / 2.0, self.plate_width / 2.0
        return np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])

    def midpoint_offsets(self) -> np.ndarray:
        """Extra non-penetration samples: center and edge midpoints, 5x2."""
        hl, hw = self.plate_length / 2.0, self.plate_width / 2.0
        return np.array([[0.0, 0.0], [hl, 0.0], [-hl, 0.0], [0.0, hw], [0.0, -hw]])


@dataclass(frozen=True)
class ToolState:
    top_pose: Pose6
    compressions: np.ndarray        # 4, m
    in_contact: bool
    lateral_offset: float           # m, bottom vs top plate (tether keeps it 0)
    converged: bool
    iterations: int
    bottom_corners: np.ndarray      # 4x3 world positions
    plate_down: np.ndarray          # world direction the tool face points
    multipliers: np.ndarray = None  # contact multipliers, warm start for the next tick

    def __post_init__(self):
        object.__setattr__(self, "compressions",
                           np.asarray(self.compressions, dtype=float).reshape(4).copy())
        object.__setattr__(self, "bottom_corners",
                           np.asarray(self.bottom_corners, dtype=float).reshape(4, 3).copy())
        object.__setattr__(self, "plate_down",
                           np.asarray(self.plate_down, dtype=float).reshape(3).copy())


def _solver_tables(model: ToolModel) -> tuple:
    """Constant QP tables for the plate equilibrium, cached on the model.

    Plate pose is parameterized by theta = (descent, tilt_u, tilt_v); sample
    compressions are N theta. Spring energy uses the corner rows only:
    E = k/2 |A_c theta|^2 with metric M = A_c^T A_c.
    """
    cached = getattr(model, "_solver", None)
    if cached is not None:
        return cached
    corners = model.corner_offsets()
    mids = model.midpoint_offsets()
    samples = np.vstack([corners, mids])
    rows = np.column_stack([np.ones(len(samples)), samples])        # 9x3
    a_c = np.column_stack([np.ones(4), corners])                    # 4x3
    m_inv = np.diag(1.0 / np.diag(a_c.T @ a_c))
    # constraints: rows theta >= demand (contact), -corner rows theta >= -max
    n_mat = np.vstack([rows, -rows[:4]])                            # 13x3
    r_mat = n_mat @ m_inv @ n_mat.T
    cached = (rows, a_c, m_inv, n_mat, r_mat, np.diag(r_mat).copy())
    object.__setattr__(model, "_solver", cached)
    return cached


def _polish(model: ToolModel, active: np.ndarray, bounds: np.ndarray) -> np.ndarray | None:
    """Exact energy-min plate pose for a fixed active set (cached per pattern)."""
    rows, a_c, m_inv, n_mat, r_mat, r_diag = _solver_tables(model)
    key = int(np.packbits(active, bitorder="little")[:2].view(np.uint16)[0])
    cache = getattr(model, "_polish_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(model, "_polish_cache", cache)
    mat = cache.get(key)
    if mat is None:
        n_w = n_mat[active]
        mat = m_inv @ n_w.T @ np.linalg.pinv(n_w @ m_inv @ n_w.T)
        cache[key] = mat
    return mat @ bounds[active]


def solve_tool_equilibrium(model: ToolModel, top_pose: Pose6, surface,
                           prev_compressions=None, dt: float | None = None,
                           warm_start=None) -> tuple[ToolState, Wrench]:
    """Bottom-plate equilibrium against `surface` and the wrench on the EE.

    `surface` needs signed_distance(points) and exit_up_distance(points, up).
    Pass the previous tick's compressions and dt to add spring damping, and
    the previous state's multipliers as warm_start to cut iterations.
    """
    rot = quat_to_matrix(top_pose.orientation)
    down = rot[:, 2]  # tool z points out of the face, toward the surface
    rows, a_c, m_inv, n_mat, r_mat, r_diag = _solver_tables(model)
    axes = np.array([rot[:, 0], rot[:, 1]])
    offsets = model.corner_offsets()
    top_corners = top_pose.position + offsets @ axes
    free_corners = top_corners + model.rest_length * down
    samples = np.vstack([offsets, model.midpoint_offsets()])
    free_samples = top_pose.position + samples @ axes + model.rest_length * down

    sdf, _ = surface.signed_distance(free_samples)
    if np.all(sdf >= 0.0):
        state = ToolState(top_pose=top_pose, compressions=np.zeros(4), in_contact=False,
                          lateral_offset=0.0, converged=True, iterations=0,
                          bottom_corners=free_corners, plate_down=down)
        return state, Wrench()

    demand = surface.exit_up_distance(free_samples, -down, sdf=sdf)
    bounds = np.concatenate([demand, np.full(4, -model.max_compression)])

    # Hildreth projected fixed-point iteration on the contact multipliers
    n_con = len(bounds)
    lam = np.zeros(n_con) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    theta = m_inv @ (n_mat.T @ lam)
    converged = False
    iterations = 0
    x = a_c @ theta
    n_list = [n_mat[i] for i in range(n_con)]
    for iterations in range(1, MAX_ITERATIONS + 1):
        x_prev = x
        for i in range(n_con):
            ni = n_list[i]
            resid = bounds[i] - float(ni @ theta)
            new_lam = max(0.0, lam[i] + resid / r_diag[i])
            if new_lam != lam[i]:
                theta = theta + m_inv @ ni * (new_lam - lam[i])
                lam[i] = new_lam
        x = a_c @ theta
        if np.max(np.abs(x - x_prev)) < CONVERGENCE_TOL_M:
            converged = True
            break
    # exact solve on the identified active set removes the first-order
    # iteration residual (needed for the 1e-9-relative statics contract)
    if converged:
        active = lam > 1e-12
        if active.any():
            theta_pol = _polish(model, active, bounds)
            if np.all(n_mat @ theta_pol >= bounds - 1e-9):
                theta = theta_pol
                x = a_c @ theta
    x = np.clip(x, 0.0, model.max_compression)
    # non-convergence keeps the last iterate (flagged for the trial log)

    elastic = model.spring_k * x
    spring_force = elastic
    if prev_compressions is not None and dt:
        # damping bounded by the elastic force: keeps each corner force in
        # [0, 2 k x] so discretization jumps cannot spike the wrench
        damp = model.damping * (x - np.asarray(prev_compressions)) / dt
        spring_force = elastic + np.clip(damp, -elastic, elastic)

    force = -down * spring_force.sum()
    arms = top_corners - top_pose.position
    moments = spring_force[:, None] * np.stack([
        arms[:, 1] * -down[2] - arms[:, 2] * -down[1],
        arms[:, 2] * -down[0] - arms[:, 0] * -down[2],
        arms[:, 0] * -down[1] - arms[:, 1] * -down[0],
    ], axis=1)
    torque = moments.sum(axis=0)

    bottom = top_corners + (model.rest_length - x)[:, None] * down
    state = ToolState(top_pose=top_pose, compressions=x, in_contact=True,
                      lateral_offset=0.0, converged=converged, iterations=iterations,
                      bottom_corners=bottom, plate_down=down, multipliers=lam)
    return state, Wrench(force=force, torque=torque)


def contact_patch(state: ToolState, surface) -> np.ndarray:
    """Boolean (U, V) mask of surface cells under the bottom plate.

    A cell is in the patch when its center projects inside the bottom-plate
    rectangle and lies within 1 mm of the plate plane.
    """
    shape = surface.cell_centers.shape[:2]
    if not state.in_contact:
        return np.zeros(shape, dtype=bool)
    corners = state.bottom_corners
    center = corners.mean(axis=0)
    e1 = corners[0] - corners[3]          # length direction
    e2 = corners[0] - corners[1]          # width direction
    half_l = float(np.linalg.norm(e1)) / 2.0
    half_w = float(np.linalg.norm(e2)) / 2.0
    e1 = e1 / (2.0 * half_l)
    e2 = e2 / (2.0 * half_w)
    normal = np.cross(e1, e2)
    normal = normal / np.linalg.norm(normal)

    cells = getattr(surface, "_cells_flat", None)
    if cells is None:
        cells = surface.cell_centers.reshape(-1, 3)
        surface._cells_flat = cells
    basis = np.stack([e1, e2, normal], axis=1)      # 3x3
    proj = cells @ basis - center @ basis
    mask = ((np.abs(proj[:, 2]) <= PATCH_PLANE_TOL_M)
            & (np.abs(proj[:, 0]) <= half_l)
            & (np.abs(proj[:, 1]) <= half_w))
    return mask.reshape(shape)

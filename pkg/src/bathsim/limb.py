"""Capsule limb with a fluid-state cell grid, plus treatment dynamics.

The limb is a capsule (segment + radius) carrying a U x V grid: U cells along
the axis, V around the circumference (v = 0 at the top, increasing toward
+axis x z). Each cell holds a fluid state (dry / soapy / wet), a dimensionless
amount in [0, 1], and a temperature that relaxes toward its state's target.

Treatment only takes effect when the applied normal force sits inside the
task's force band, which is what makes force correctness observable in the
coverage outcomes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tasks import TaskKind

CELL_DRY, CELL_SOAPY, CELL_WET = 0, 1, 2

SKIN_TEMP_C = 36.6
WATER_TEMP_C = 20.0
SOAP_TEMP_C = 33.0
TEMP_TARGETS = np.array([SKIN_TEMP_C, SOAP_TEMP_C, WATER_TEMP_C])
TEMP_RELAX_TAU_S = 5.0

SPREAD_RATE_PER_S = 0.02
SPREAD_THRESHOLD = 0.5


@dataclass
class LimbSurface:
    p0: np.ndarray
    p1: np.ndarray
    radius: float
    n_axial: int = 48
    n_circ: int = 48
    state: np.ndarray = None        # (U, V) uint8
    amount: np.ndarray = None       # (U, V) float
    temperature: np.ndarray = None  # (U, V) C

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float).reshape(3)
        self.p1 = np.asarray(self.p1, dtype=float).reshape(3)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        axis = self.p1 - self.p0
        self.length = float(np.linalg.norm(axis))
        if self.length <= 0:
            raise ValueError("degenerate capsule axis")
        self.axis_dir = axis / self.length

        # circumferential frame: angle 0 points as close to world +z as possible
        up = np.array([0.0, 0.0, 1.0])
        n1 = up - self.axis_dir * float(up @ self.axis_dir)
        if np.linalg.norm(n1) < 1e-9:
            n1 = np.array([1.0, 0.0, 0.0])
        self.n1 = n1 / np.linalg.norm(n1)
        self.n2 = np.cross(self.axis_dir, self.n1)

        if self.state is None:
            self.state = np.full((self.n_axial, self.n_circ), CELL_DRY, dtype=np.uint8)
        if self.amount is None:
            self.amount = np.zeros((self.n_axial, self.n_circ))
        if self.temperature is None:
            self.temperature = np.full((self.n_axial, self.n_circ), SKIN_TEMP_C)

        u_frac = (np.arange(self.n_axial) + 0.5) / self.n_axial
        v_ang = (np.arange(self.n_circ) + 0.5) / self.n_circ * 2.0 * math.pi
        radial = (np.cos(v_ang)[:, None] * self.n1 + np.sin(v_ang)[:, None] * self.n2)
        axial_pts = self.p0 + u_frac[:, None] * (self.p1 - self.p0)
        self.cell_centers = axial_pts[:, None, :] + self.radius * radial[None, :, :]
        self.cell_normals = np.broadcast_to(radial[None, :, :],
                                            (self.n_axial, self.n_circ, 3)).copy()
        z = self.cell_centers[..., 2]
        self._down_prev = np.roll(z, 1, axis=1) < z    # neighbor v-1 lies lower
        self._down_next = np.roll(z, -1, axis=1) < z   # neighbor v+1 lies lower

    # -- geometry ----------------------------------------------------------

    def signed_distance(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Capsule SDF and outward normal for (N, 3) points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - self.p0
        s = np.clip(rel @ self.axis_dir, 0.0, self.length)
        closest = self.p0 + s[:, None] * self.axis_dir
        delta = pts - closest
        dist = np.linalg.norm(delta, axis=1)
        safe = np.maximum(dist, 1e-12)
        normals = delta / safe[:, None]
        degenerate = dist < 1e-12
        if degenerate.any():
            normals[degenerate] = self.n1
        return dist - self.radius, normals

    def nearest_cell(self, point) -> tuple[int, int]:
        rel = np.asarray(point, dtype=float) - self.p0
        s = float(rel @ self.axis_dir)
        u = min(self.n_axial - 1, max(0, int(s / self.length * self.n_axial)))
        closest = self.p0 + min(max(s, 0.0), self.length) * self.axis_dir
        radial = np.asarray(point, dtype=float) - closest
        ang = math.atan2(float(radial @ self.n2), float(radial @ self.n1)) % (2.0 * math.pi)
        v = min(self.n_circ - 1, int(ang / (2.0 * math.pi) * self.n_circ))
        return u, v

    def exit_up_distance(self, points, up, sdf=None) -> np.ndarray:
        """Distance each (penetrating) point must move along `up` to reach the
        surface; 0 for points already outside. Analytic capsule-ray roots."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        up = np.asarray(up, dtype=float)
        up = up / np.linalg.norm(up)
        if sdf is None:
            sdf, _ = self.signed_distance(pts)
        if not (sdf < 0).any():
            return np.zeros(pts.shape[0])

        best = np.zeros(pts.shape[0])
        ua = float(up @ self.axis_dir)
        rel = pts - self.p0
        rel_a = rel @ self.axis_dir

        # infinite cylinder
        a_coef = 1.0 - ua * ua
        if abs(a_coef) > 1e-12:
            b_coef = 2.0 * (rel @ up - rel_a * ua)
            c_coef = np.einsum("ij,ij->i", rel, rel) - rel_a ** 2 - self.radius ** 2
            disc = b_coef ** 2 - 4.0 * a_coef * c_coef
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            for sign in (+1.0, -1.0):
                x = (-b_coef + sign * sq) / (2.0 * a_coef)
                s_at = rel_a + x * ua
                valid = ok & (x > 0) & (s_at >= 0.0) & (s_at <= self.length)
                best = np.where(valid & (x > best), x, best)

        # end-cap spheres matter only when an exit point can fall beyond the
        # segment; skip them when every point is safely mid-cylinder
        margin = 2.5 * self.radius * (abs(ua) + 0.2)
        if rel_a.min() - margin < 0.0 or rel_a.max() + margin > self.length:
            for cap, side in ((self.p0, -1.0), (self.p1, +1.0)):
                rc = pts - cap
                b2 = 2.0 * (rc @ up)
                c2 = np.einsum("ij,ij->i", rc, rc) - self.radius ** 2
                disc = b2 ** 2 - 4.0 * c2
                ok = disc >= 0
                sq = np.sqrt(np.where(ok, disc, 0.0))
                for sign in (+1.0, -1.0):
                    x = (-b2 + sign * sq) / 2.0
                    s_at = rel_a + x * ua
                    beyond = s_at < 0.0 if side < 0 else s_at > self.length
                    valid = ok & (x > 0) & beyond
                    best = np.where(valid & (x > best), x, best)

        return np.where(sdf < 0, best, 0.0)

    # -- bookkeeping -------------------------------------------------------

    def n_cells(self) -> int:
        return self.n_axial * self.n_circ

    def fraction_in_state(self, state: int) -> float:
        return float(np.count_nonzero(self.state == state)) / self.n_cells()


def surface_contact_query(surface: LimbSurface, point):
    """(signed distance, outward normal, nearest (u, v) cell) for one point."""
    dist, normal = surface.signed_distance(np.asarray(point, dtype=float)[None, :])
    return float(dist[0]), normal[0], surface.nearest_cell(point)


@dataclass(frozen=True)
class FlatSurface:
    """Rigid horizontal plane (z = height); stand-in surface for force tests."""

    height: float = 0.0

    def signed_distance(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dist = pts[:, 2] - self.height
        normals = np.tile(np.array([0.0, 0.0, 1.0]), (pts.shape[0], 1))
        return dist, normals

    def exit_up_distance(self, points, up, sdf=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        up = np.asarray(up, dtype=float)
        uz = up[2] / np.linalg.norm(up)
        if abs(uz) < 1e-9:
            return np.zeros(pts.shape[0])
        pen = self.height - pts[:, 2]
        return np.where(pen > 0, pen / uz, 0.0)


# ---------------------------------------------------------------------------
# treatment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreatmentRules:
    force_bands: dict = field(default_factory=lambda: {
        TaskKind.WASH: (2.0, 8.0),
        TaskKind.RINSE: (2.0, 8.0),
        TaskKind.DRY: (1.0, 6.0),
    })
    soap_rate_per_s: float = 1.0
    rinse_rate_per_s: float = 0.4
    rinse_wet_amount: float = 0.8
    dry_absorption_per_pat: float = 1.0

    def in_band(self, task: TaskKind, normal_force: float) -> bool:
        lo, hi = self.force_bands[task]
        return lo <= normal_force <= hi


def apply_treatment(surface: LimbSurface, patch, task: TaskKind,
                    normal_force: float, dt: float, rules: TreatmentRules,
                    pat_event: bool = False) -> bool:
    """Update cell states under the contact patch; no-op when out of band.

    `patch` is a boolean (U, V) mask. Dry pats only advance on `pat_event`
    (one decrement per descend-hold cycle). Returns True when the force was
    inside the task's band (effective contact).
    """
    if normal_force < 0:
        raise ValueError("normal force must be non-negative")
    if not patch.any() or not rules.in_band(task, normal_force):
        return False

    if task is TaskKind.WASH:
        convert = patch & (surface.state != CELL_SOAPY)
        surface.state[convert] = CELL_SOAPY
        soapy = patch & (surface.state == CELL_SOAPY)
        surface.amount[soapy] = np.minimum(surface.amount[soapy] + rules.soap_rate_per_s * dt, 1.0)
    elif task is TaskKind.RINSE:
        soapy = patch & (surface.state == CELL_SOAPY)
        surface.amount[soapy] -= rules.rinse_rate_per_s * dt
        cleared = soapy & (surface.amount <= 0.0)
        surface.state[cleared] = CELL_WET
        surface.amount[cleared] = rules.rinse_wet_amount
        surface.temperature[cleared] = WATER_TEMP_C
    elif task is TaskKind.DRY:
        if pat_event:
            wet = patch & (surface.state == CELL_WET)
            surface.amount[wet] -= rules.dry_absorption_per_pat
            dried = wet & (surface.amount <= 0.0)
            surface.state[dried] = CELL_DRY
            surface.amount[dried] = 0.0
    else:
        raise ValueError(f"no treatment for task {task!r}")
    return True


def fluid_spread(surface: LimbSurface, dt: float) -> None:
    """Water creeps to lower circumferential neighbors; soap stays put.

    Saturated wet cells (amount > 0.5) transfer rate*dt to each strictly lower
    circumferential neighbor that is not soapy; recipients accept only up to
    capacity, so total amount is conserved. Temperatures relax toward the
    state target with a 5 s time constant.
    """
    wet = surface.state == CELL_WET
    sources = wet & (surface.amount > SPREAD_THRESHOLD)
    if sources.any():
        amount = surface.amount
        transfer = SPREAD_RATE_PER_S * dt
        outgoing = np.zeros_like(amount)
        incoming = np.zeros_like(amount)
        for shift, downhill in ((1, surface._down_prev), (-1, surface._down_next)):
            neighbor_state = np.roll(surface.state, shift, axis=1)
            neighbor_amount = np.roll(amount, shift, axis=1)
            give = sources & downhill & (neighbor_state != CELL_SOAPY)
            room = np.maximum(1.0 - neighbor_amount, 0.0)
            moved = np.where(give, np.minimum(transfer, room), 0.0)
            outgoing += moved
            incoming += np.roll(moved, -shift, axis=1)
        # cap total outflow at the available amount, scaling flows down
        over = outgoing > amount
        if over.any():
            scale = np.ones_like(amount)
            scale[over] = amount[over] / outgoing[over]
            incoming_scaled = np.zeros_like(amount)
            for shift, downhill in ((1, surface._down_prev), (-1, surface._down_next)):
                neighbor_state = np.roll(surface.state, shift, axis=1)
                neighbor_amount = np.roll(amount, shift, axis=1)
                give = sources & downhill & (neighbor_state != CELL_SOAPY)
                room = np.maximum(1.0 - neighbor_amount, 0.0)
                moved = np.where(give, np.minimum(transfer, room), 0.0) * scale
                incoming_scaled += np.roll(moved, -shift, axis=1)
            incoming = incoming_scaled
            outgoing = np.minimum(outgoing, amount)
        surface.amount = amount - outgoing + incoming
        gained = (incoming > 0) & (surface.state == CELL_DRY)
        surface.state[gained] = CELL_WET
        surface.temperature[gained] = WATER_TEMP_C

    targets = TEMP_TARGETS[surface.state]
    surface.temperature += (targets - surface.temperature) * (dt / TEMP_RELAX_TAU_S)

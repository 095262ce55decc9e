"""World geometry for the 2D stereo peg-and-hole tasks.

Conventions (documented once, relied on everywhere):
- workspace is the unit square in x, y; 1 scene unit = 50 cm, so the
  source rig's +-1 cm camera jitter maps to +-0.02 units;
- peg pose is (x, y, z, theta): planar position, height of the peg bottom
  above the table, in-plane rotation; hole pose is (x, y, theta), fixed
  per episode;
- pose-space distances mix translation and rotation by scaling theta with
  ROTATION_SCALE (scene units per radian), giving the 4-vector metric the
  motion labels live in;
- motion labels are expressed in the peg (end-effector) frame: the xy part
  of a direction is rotated by -theta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WORKSPACE_LO = 0.02
WORKSPACE_HI = 0.98
Z_MAX = 0.30
ROTATION_SCALE = 0.3        # scene units per radian in the pose metric
AT_TARGET_DIRECTION = np.array([0.0, 0.0, -1.0, 0.0])  # inert label at distance 0


def rot2d(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def rect_poly(center, half, theta: float) -> np.ndarray:
    """CCW corners of a rotated rectangle, (4, 2)."""
    hx, hy = half
    base = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    return base @ rot2d(theta).T + np.asarray(center)


def convex_overlap(pa: np.ndarray, pb: np.ndarray) -> bool:
    """Separating-axis intersection test for two convex CCW polygons."""
    for poly, other in ((pa, pb), (pb, pa)):
        edges = np.roll(poly, -1, axis=0) - poly
        normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
        for n in normals:
            a_lo, a_hi = (poly @ n).min(), (poly @ n).max()
            b_lo, b_hi = (other @ n).min(), (other @ n).max()
            if a_hi < b_lo or b_hi < a_lo:
                return False
    return True


@dataclass(frozen=True)
class TaskPreset:
    """Geometry and tolerances for one servo task."""
    name: str
    peg_half: tuple[float, float]
    clearance: float                  # radial slack between peg and bore
    wall: float                       # wall thickness of the hole piece
    open_front: bool = False          # C-shape: no wall on the +y side (pick)
    rim_z: float = 0.08               # top of the hole walls
    floor_z: float = 0.01             # bore floor height
    peg_height: float = 0.10
    standoff: float = 0.02            # target hover above the rim
    hole_xy_range: tuple[float, float] = (0.42, 0.58)
    hole_rot_range: float = math.radians(30.0)

    @property
    def bore_half(self) -> tuple[float, float]:
        return (self.peg_half[0] + self.clearance, self.peg_half[1] + self.clearance)

    @property
    def target_z(self) -> float:
        return self.rim_z + self.standoff

    def tolerance(self) -> np.ndarray:
        """Per-component success tolerance: half the task clearance.

        (x, y) in scene units along the hole axes, z in scene units,
        theta in radians (half the angular play of the peg in the bore).
        """
        t_xy = self.clearance / 2.0
        t_th = self.clearance / max(self.peg_half) / 2.0
        return np.array([t_xy, t_xy, self.standoff / 2.0, t_th])

    def wall_rects(self, hole_pose: np.ndarray) -> list[np.ndarray]:
        """Hole material as rotated rectangles in world coordinates.

        Walls are inflated by a hair (1e-6 units) so shared edges with the
        bore and with each other overlap robustly under float rounding; no
        background can bleed through seam pixels in the rasterizer.
        """
        eps = 1e-6
        hx, hy = self.bore_half
        w = self.wall
        cx, cy, th = hole_pose
        segs = [((0.0, -(hy + w / 2)), (hx + w + eps, w / 2 + eps)),     # back (-y)
                ((-(hx + w / 2), 0.0), (w / 2 + eps, hy + w + eps)),     # left
                ((hx + w / 2, 0.0), (w / 2 + eps, hy + w + eps))]        # right
        if not self.open_front:
            segs.append(((0.0, hy + w / 2), (hx + w + eps, w / 2 + eps)))  # front (+y)
        R = rot2d(th)
        return [rect_poly(np.array([cx, cy]) + R @ np.asarray(c), h, th) for c, h in segs]

    def bore_rect(self, hole_pose: np.ndarray) -> np.ndarray:
        cx, cy, th = hole_pose
        return rect_poly((cx, cy), self.bore_half, th)

    def peg_rect(self, pose: np.ndarray) -> np.ndarray:
        return rect_poly(pose[:2], self.peg_half, pose[3])

    def target_pose(self, hole_pose: np.ndarray) -> np.ndarray:
        return np.array([hole_pose[0], hole_pose[1], self.target_z, hole_pose[2]])


TASKS: dict[str, TaskPreset] = {
    # clearances follow the difficulty ordering of the source tasks:
    # pick is wide, insert-shaft ~4% of peg width, insert-plug ~2%
    "pick": TaskPreset("pick", peg_half=(0.030, 0.050), clearance=0.030, wall=0.040,
                       open_front=True),
    "insert-shaft": TaskPreset("insert-shaft", peg_half=(0.090, 0.090),
                               clearance=0.0036, wall=0.050),
    "insert-plug": TaskPreset("insert-plug", peg_half=(0.100, 0.035),
                              clearance=0.0020, wall=0.050),
}


def in_workspace(pose: np.ndarray) -> bool:
    return (WORKSPACE_LO <= pose[0] <= WORKSPACE_HI and
            WORKSPACE_LO <= pose[1] <= WORKSPACE_HI and
            -0.05 <= pose[2] <= Z_MAX)


def collided(task: TaskPreset, pose: np.ndarray, hole_pose: np.ndarray) -> bool:
    """Exact collision: table, hole walls below rim height, bore floor."""
    if pose[2] < 0.0:
        return True
    peg = task.peg_rect(pose)
    if pose[2] < task.rim_z:
        for wallr in task.wall_rects(hole_pose):
            if convex_overlap(peg, wallr):
                return True
    if pose[2] < task.floor_z and convex_overlap(peg, task.bore_rect(hole_pose)):
        return True
    return False


def pose_error(pose: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Scaled 4-vector from pose toward target, xy in the peg frame."""
    d_xy = rot2d(-pose[3]) @ (target[:2] - pose[:2])
    return np.array([d_xy[0], d_xy[1], target[2] - pose[2],
                     ROTATION_SCALE * wrap_angle(target[3] - pose[3])])


def motion_label(pose: np.ndarray, target: np.ndarray, d_sat: float
                 ) -> tuple[np.ndarray, float, float]:
    """Ground-truth (u*, beta*, distance) for a pose.

    u* is the unit direction toward the target in the scaled pose metric;
    beta* ramps linearly with distance and saturates at d_sat.
    """
    e = pose_error(pose, target)
    dist = float(np.linalg.norm(e))
    if dist < 1e-12:
        return AT_TARGET_DIRECTION.copy(), 0.0, dist
    return e / dist, min(1.0, dist / d_sat), dist


def apply_motion(pose: np.ndarray, u: np.ndarray, magnitude: float) -> np.ndarray:
    """Advance the pose by ``magnitude * u`` in the scaled metric.

    The xy part of u lives in the peg frame at the current heading, so the
    step uses the same rotation the labeler used; stepping by the labeled
    (u*, distance) therefore lands exactly on the target.
    """
    d_xy = rot2d(pose[3]) @ (magnitude * u[:2])
    return np.array([pose[0] + d_xy[0], pose[1] + d_xy[1],
                     pose[2] + magnitude * u[2],
                     pose[3] + magnitude * u[3] / ROTATION_SCALE])


def hole_frame_error(pose: np.ndarray, target: np.ndarray, hole_theta: float
                     ) -> np.ndarray:
    """(ex, ey, ez, etheta) with xy expressed along the hole axes."""
    d_xy = rot2d(-hole_theta) @ (pose[:2] - target[:2])
    return np.array([d_xy[0], d_xy[1], pose[2] - target[2],
                     wrap_angle(pose[3] - target[3])])


def converged(task: TaskPreset, pose: np.ndarray, target: np.ndarray) -> bool:
    err = np.abs(hole_frame_error(pose, target, target[3]))
    return bool(np.all(err <= task.tolerance()))

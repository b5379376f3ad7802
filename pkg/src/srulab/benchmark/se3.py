"""Rigid transforms for the landmark-registration task.

A :class:`Pose` maps coordinates ``p -> R p + t``. A relative motion
``M^{t-1}_t`` is a Pose that maps coordinates expressed in frame t-1 to
coordinates expressed in frame t, so registering an old landmark into the
final frame is a forward chain of motions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Pose:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "Pose":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def is_valid(self, tol: float = 1e-9) -> bool:
        return (np.allclose(self.R.T @ self.R, np.eye(3), atol=tol, rtol=0)
                and abs(np.linalg.det(self.R) - 1.0) <= tol)


# relative motions share the Pose representation
RelativeMotion = Pose


def transform_point(m: Pose, p) -> np.ndarray:
    return m.R @ np.asarray(p, dtype=np.float64) + m.t


def compose(m2: Pose, m1: Pose) -> Pose:
    """``compose(m2, m1)(p) == m2(m1(p))``."""
    return Pose(m2.R @ m1.R, m2.R @ m1.t + m2.t)


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def euler_zyx(yaw, pitch, roll) -> np.ndarray:
    """Batched ``Rz(yaw) Ry(pitch) Rx(roll)``; inputs broadcast, output (..., 3, 3)."""
    yaw, pitch, roll = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (yaw, pitch, roll)))
    cz, sz = np.cos(yaw), np.sin(yaw)
    cy, sy = np.cos(pitch), np.sin(pitch)
    cx, sx = np.cos(roll), np.sin(roll)
    R = np.empty(yaw.shape + (3, 3))
    R[..., 0, 0] = cz * cy
    R[..., 0, 1] = cz * sy * sx - sz * cx
    R[..., 0, 2] = cz * sy * cx + sz * sx
    R[..., 1, 0] = sz * cy
    R[..., 1, 1] = sz * sy * sx + cz * cx
    R[..., 1, 2] = sz * sy * cx - cz * sx
    R[..., 2, 0] = -sy
    R[..., 2, 1] = cy * sx
    R[..., 2, 2] = cy * cx
    return R


MAX_TRANSLATION = 2.0
MAX_ANGLE = np.pi


def sample_motions(rng: np.random.Generator, shape=()) -> tuple[np.ndarray, np.ndarray]:
    """Batched motion sampling: returns (R of shape (*shape,3,3), t of shape (*shape,3)).

    Draw order: the three Euler angles, then the translation.
    """
    shape = tuple(np.atleast_1d(shape)) if shape != () else ()
    angles = rng.uniform(-MAX_ANGLE, MAX_ANGLE, size=shape + (3,))
    t = rng.uniform(-MAX_TRANSLATION, MAX_TRANSLATION, size=shape + (3,))
    return euler_zyx(angles[..., 0], angles[..., 1], angles[..., 2]), t


def sample_motion(rng: np.random.Generator) -> RelativeMotion:
    R, t = sample_motions(rng)
    return Pose(R, t)


def spiral_trajectory(T: int, turn: float = np.pi / 6, advance: float = 0.5,
                      growth: float = 0.15) -> list[RelativeMotion]:
    """Planar spiral: each step turns by ``turn`` about z and drives forward.

    The forward distance of step k is ``advance * (1 + growth*k)``; with
    ``growth=0`` the path is a circle, with ``turn=0`` a straight line.
    Each returned motion maps the previous body frame into the new one.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    motions = []
    for k in range(T):
        # body-frame displacement of the new pose, expressed in the old frame
        step = Pose(rot_z(turn), np.array([advance * (1.0 + growth * k), 0.0, 0.0]))
        motions.append(step.inverse())
    return motions


def world_poses(motions: list[RelativeMotion]) -> list[Pose]:
    """Pose of each body frame in the frame before the first motion (world)."""
    pose = Pose.identity()
    out = []
    for m in motions:
        pose = compose(pose, m.inverse())
        out.append(pose)
    return out

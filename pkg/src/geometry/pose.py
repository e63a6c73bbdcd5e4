"""SE(3) pose algebra shared by the whole pipeline.

Frames: the global frame is x east, y north, z down (depth positive). The
vehicle body frame is x forward, y port, z down, i.e. the frame a proper
rotation maps onto the global axes; a yaw of 90 degrees heads north with
port pointing west. The sensor frame has x along the transducer array, so a
ping's across-track plane is the sensor y-z plane.

Twists are 6-vectors ordered (rotation, translation). Poses perturb on the
right: ``T * exp(delta)``.
"""

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

Twist = np.ndarray  # shape (6,): (phi_x, phi_y, phi_z, rho_x, rho_y, rho_z)

_SMALL_ANGLE = 1e-4


# --------------------------------------------------------------------------
# Batched SO(3)/SE(3) kernels; leading dimension N.
# --------------------------------------------------------------------------

def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _angle_terms(phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    return theta, small, safe


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.atleast_2d(phi)
    theta, small, safe = _angle_terms(phi)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    b = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (safe - np.sin(safe)) / safe**3)
    K = skew(phi)
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)


def so3_left_jacobian_inverse(phi: np.ndarray) -> np.ndarray:
    phi = np.atleast_2d(phi)
    theta, small, safe = _angle_terms(phi)
    c = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    K = skew(phi)
    return np.eye(3) - 0.5 * K + c[:, None, None] * (K @ K)


def _se3_q_block(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Coupling block of the SE(3) left Jacobian."""
    theta, small, safe = _angle_terms(phi)
    t2 = theta**2
    c1 = np.where(small, 1.0 / 6.0 - t2 / 120.0, (safe - np.sin(safe)) / safe**3)
    c2 = np.where(small, 1.0 / 24.0 - t2 / 720.0, (safe**2 + 2.0 * np.cos(safe) - 2.0) / (2.0 * safe**4))
    c3 = np.where(
        small,
        1.0 / 120.0 - t2 / 2520.0,
        (2.0 * safe - 3.0 * np.sin(safe) + safe * np.cos(safe)) / (2.0 * safe**5),
    )
    P = skew(phi)
    Rh = skew(rho)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    return (
        0.5 * Rh
        + c1[:, None, None] * (PR + RP + PRP)
        + c2[:, None, None] * (P @ PR + RP @ P - 3.0 * PRP)
        + c3[:, None, None] * (PRP @ P + P @ PRP)
    )


def se3_exp(xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    xi = np.atleast_2d(xi)
    phi, rho = xi[:, :3], xi[:, 3:]
    R = Rotation.from_rotvec(phi).as_matrix()
    t = np.einsum("nij,nj->ni", so3_left_jacobian(phi), rho)
    return R, t


def se3_log(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
    t = np.asarray(t, dtype=float).reshape(-1, 3)
    phi = Rotation.from_matrix(R).as_rotvec()
    rho = np.einsum("nij,nj->ni", so3_left_jacobian_inverse(phi), t)
    return np.concatenate([phi, rho], axis=1)


def se3_right_jacobian_inverse(xi: np.ndarray) -> np.ndarray:
    """Jr^-1(xi) such that log(exp(xi) exp(d)) ~= xi + Jr^-1(xi) d."""
    xi = np.atleast_2d(xi)
    phi, rho = -xi[:, :3], -xi[:, 3:]
    A_inv = so3_left_jacobian_inverse(phi)
    Q = _se3_q_block(rho, phi)
    out = np.zeros((xi.shape[0], 6, 6))
    out[:, :3, :3] = A_inv
    out[:, 3:, 3:] = A_inv
    out[:, 3:, :3] = -A_inv @ Q @ A_inv
    return out


def se3_adjoint(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
    t = np.asarray(t, dtype=float).reshape(-1, 3)
    out = np.zeros((R.shape[0], 6, 6))
    out[:, :3, :3] = R
    out[:, 3:, 3:] = R
    out[:, 3:, :3] = skew(t) @ R
    return out


def se3_compose(Ra, ta, Rb, tb) -> Tuple[np.ndarray, np.ndarray]:
    return Ra @ Rb, ta + np.einsum("nij,nj->ni", Ra, tb)


def se3_inverse(R, t) -> Tuple[np.ndarray, np.ndarray]:
    Rt = np.swapaxes(R, -1, -2)
    return Rt, -np.einsum("nij,nj->ni", Rt, t)


# --------------------------------------------------------------------------
# Pose value type
# --------------------------------------------------------------------------

def _to_scipy_quat(q_wxyz: np.ndarray) -> np.ndarray:
    return np.asarray(q_wxyz, dtype=float)[..., [1, 2, 3, 0]]


def _from_scipy_quat(q_xyzw: np.ndarray) -> np.ndarray:
    return np.asarray(q_xyzw, dtype=float)[..., [3, 0, 1, 2]]


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: position in meters and a unit quaternion (w, x, y, z), body to global."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError(f"Invalid quaternion {q}")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q / n)

    # constructors -------------------------------------------------------
    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rt(cls, R: np.ndarray, t: Sequence[float]) -> "Pose":
        return cls(np.asarray(t, dtype=float), _from_scipy_quat(Rotation.from_matrix(R).as_quat()))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Pose":
        """From ``x y z qw qx qy qz``."""
        values = np.asarray(values, dtype=float)
        return cls(values[:3], values[3:7])

    @classmethod
    def from_xyz_rpy(cls, x: float, y: float, z: float, roll: float, pitch: float, yaw: float,
                     degrees: bool = True) -> "Pose":
        """Roll-pitch-yaw applied ZYX: R = Rz(yaw) Ry(pitch) Rx(roll)."""
        rot = Rotation.from_euler("ZYX", [yaw, pitch, roll], degrees=degrees)
        return cls(np.array([x, y, z], dtype=float), _from_scipy_quat(rot.as_quat()))

    @classmethod
    def exp(cls, xi: Twist) -> "Pose":
        R, t = se3_exp(np.asarray(xi, dtype=float))
        return cls.from_rt(R[0], t[0])

    @classmethod
    def translation(cls, x: float, y: float, z: float) -> "Pose":
        return cls(np.array([x, y, z], dtype=float))

    # accessors ----------------------------------------------------------
    @property
    def rotation(self) -> np.ndarray:
        return Rotation.from_quat(_to_scipy_quat(self.orientation)).as_matrix()

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    def to_xyz_rpy(self, degrees: bool = True) -> np.ndarray:
        yaw, pitch, roll = Rotation.from_quat(_to_scipy_quat(self.orientation)).as_euler("ZYX", degrees=degrees)
        return np.array([*self.position, roll, pitch, yaw])

    @property
    def heading(self) -> np.ndarray:
        """Horizontal unit vector of the body x axis in the global frame."""
        fwd = self.rotation[:2, 0]
        n = np.linalg.norm(fwd)
        return fwd / n if n > 0 else np.array([1.0, 0.0])

    # algebra ------------------------------------------------------------
    def __mul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def inverse(self) -> "Pose":
        return inverse(self)

    def log(self) -> Twist:
        return log(self)

    def transform_point(self, p: Sequence[float]) -> np.ndarray:
        return transform_point(self, p)

    def rotation_angle_to(self, other: "Pose") -> float:
        return float(np.linalg.norm(relative(self, other).log()[:3]))

    def distance_to(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.position - other.position))


def compose(a: Pose, b: Pose) -> Pose:
    ra = Rotation.from_quat(_to_scipy_quat(a.orientation))
    rb = Rotation.from_quat(_to_scipy_quat(b.orientation))
    return Pose(a.position + ra.apply(b.position), _from_scipy_quat((ra * rb).as_quat()))


def inverse(T: Pose) -> Pose:
    r_inv = Rotation.from_quat(_to_scipy_quat(T.orientation)).inv()
    return Pose(-r_inv.apply(T.position), _from_scipy_quat(r_inv.as_quat()))


def relative(a: Pose, b: Pose) -> Pose:
    """a^-1 * b."""
    return compose(inverse(a), b)


def transform_point(T: Pose, p: Sequence[float]) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return T.rotation @ p + T.position if p.ndim == 1 else p @ T.rotation.T + T.position


def log(T: Pose) -> Twist:
    return se3_log(T.rotation[None], T.position[None])[0]


def exp(xi: Twist) -> Pose:
    return Pose.exp(xi)


def stack_poses(poses: Iterable[Pose]) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation matrices (N, 3, 3) and positions (N, 3) of a pose sequence."""
    poses = list(poses)
    if not poses:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    quats = np.array([_to_scipy_quat(p.orientation) for p in poses])
    return Rotation.from_quat(quats).as_matrix(), np.array([p.position for p in poses])


def unstack_poses(R: np.ndarray, t: np.ndarray):
    quats = _from_scipy_quat(Rotation.from_matrix(R).as_quat())
    return [Pose(t[k], quats[k]) for k in range(len(t))]

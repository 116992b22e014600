"""Forward/inverse kinematics of the 9-joint arm + end-effector chain.

Joints 0-5 are the revolute arm joints (standard DH). Joints 6-8 belong to
the vascular-access end-effector: probe slide (prismatic, mm), needle
pitch (revolute, rad) and needle insertion (prismatic, mm). The forward
map ends at the needle tip; the ultrasound probe hangs off the arm flange
via a fixed ``probe_mount`` transform, so it only depends on joints 0-5.

Units are millimetres and radians throughout.

The numeric core lives in ``_kernels`` (Cython) with ``_kernels_py`` as a
drop-in fallback; ``KERNEL`` names the one that was imported. Set
``RVASIM_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import math
import os
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import InvalidJointVector, JointLimitViolation, NoConvergence

if os.environ.get("RVASIM_PURE_PYTHON"):
    from . import _kernels_py as _k

    KERNEL = "python"
else:
    try:
        from . import _kernels as _k

        KERNEL = "cython"
    except ImportError:  # extension not built
        from . import _kernels_py as _k

        KERNEL = "python"

N_JOINTS = 9
REVOLUTE = "revolute"
PRISMATIC = "prismatic"

# 1 rad of a revolute joint weighs the same as 100 mm of a prismatic one
PRISMATIC_MM_PER_RAD = 100.0


@dataclass(frozen=True)
class RigidTransform:
    """Homogeneous pose: 3x3 rotation plus translation in mm."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, t) -> RigidTransform:
        return cls(np.eye(3), t)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Map points (..., 3) from this frame into the parent frame."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def orthonormality_error(self) -> float:
        return float(np.linalg.norm(self.rotation.T @ self.rotation - np.eye(3)))

    def is_valid(self, tol: float = 1e-9) -> bool:
        return self.orthonormality_error() <= tol and np.linalg.det(self.rotation) > 0

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


def rotation_angle(r) -> float:
    """Rotation angle (rad) of a 3x3 rotation matrix."""
    c = (np.trace(r) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def rotation_log(r) -> np.ndarray:
    return np.asarray(_k.rotation_log(np.ascontiguousarray(r, dtype=float)))


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


@dataclass(frozen=True)
class Joint:
    """One DH row plus its travel limits."""

    type: str
    a_mm: float = 0.0
    alpha_rad: float = 0.0
    d_mm: float = 0.0
    theta_offset_rad: float = 0.0
    limit_min: float = -2 * math.pi
    limit_max: float = 2 * math.pi

    def __post_init__(self):
        if self.type not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint type {self.type!r}")
        if not self.limit_min < self.limit_max:
            raise ValueError("joint limit_min must be < limit_max")

    def to_dict(self) -> dict:
        return {
            "type": self.type,
            "a_mm": self.a_mm,
            "alpha_rad": self.alpha_rad,
            "d_mm": self.d_mm,
            "theta_offset_rad": self.theta_offset_rad,
            "limit_min": self.limit_min,
            "limit_max": self.limit_max,
        }


class JointVector(np.ndarray):
    """9 joint values (rad for revolute joints, mm for prismatic ones)."""

    def __new__(cls, q):
        arr = np.asarray(q, dtype=float)
        if arr.shape != (N_JOINTS,):
            raise InvalidJointVector(f"expected {N_JOINTS} joint values, got shape {arr.shape}")
        return arr.copy().view(cls)


def _as_q(q) -> np.ndarray:
    arr = np.asarray(q, dtype=float)
    if arr.shape != (N_JOINTS,):
        raise InvalidJointVector(f"expected {N_JOINTS} joint values, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class KinematicChain:
    """Six revolute arm joints followed by the three end-effector joints.

    ``base`` places the arm in the world, ``ee_mount`` sits between the
    flange and the probe-slide joint, ``tool`` runs from the insertion
    carriage to the needle tip (this is the transform needle calibration
    estimates) and ``probe_mount`` runs from the flange to the probe face.
    """

    arm_links: tuple
    ee_links: tuple
    q_home: np.ndarray
    base: RigidTransform = field(default_factory=RigidTransform.identity)
    ee_mount: RigidTransform = field(default_factory=RigidTransform.identity)
    tool: RigidTransform = field(default_factory=RigidTransform.identity)
    probe_mount: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        object.__setattr__(self, "arm_links", tuple(self.arm_links))
        object.__setattr__(self, "ee_links", tuple(self.ee_links))
        if len(self.arm_links) != 6 or len(self.ee_links) != 3:
            raise ValueError("chain needs exactly 6 arm joints and 3 end-effector joints")
        if any(j.type != REVOLUTE for j in self.arm_links):
            raise ValueError("arm joints must be revolute")
        if [j.type for j in self.ee_links] != [PRISMATIC, REVOLUTE, PRISMATIC]:
            raise ValueError("end-effector joints must be (prismatic, revolute, prismatic)")
        q_home = _as_q(self.q_home)
        object.__setattr__(self, "q_home", q_home)
        if not self.within_limits(q_home):
            raise JointLimitViolation("q_home lies outside the joint limits")
        object.__setattr__(self, "_dh", self._dh_table())
        object.__setattr__(self, "_pre_tip", self._pre_stack())
        object.__setattr__(self, "_tool_m", np.ascontiguousarray(self.tool.matrix))
        object.__setattr__(self, "_probe_m", np.ascontiguousarray(self.probe_mount.matrix))

    @property
    def joints(self) -> tuple:
        return self.arm_links + self.ee_links

    @property
    def limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.limit_min for j in self.joints])
        hi = np.array([j.limit_max for j in self.joints])
        return lo, hi

    @property
    def prismatic_mask(self) -> np.ndarray:
        return np.array([j.type == PRISMATIC for j in self.joints])

    def within_limits(self, q, tol: float = 0.0) -> bool:
        lo, hi = self.limits
        q = np.asarray(q)
        return bool(np.all(q >= lo - tol) and np.all(q <= hi + tol))

    def joint_distance(self, q1, q2) -> float:
        """Weighted joint-space distance (prismatic mm scaled to rad)."""
        dq = np.asarray(q1, dtype=float) - np.asarray(q2, dtype=float)
        dq = np.where(self.prismatic_mask, dq / PRISMATIC_MM_PER_RAD, dq)
        return float(np.linalg.norm(dq))

    def with_tool(self, tool: RigidTransform) -> KinematicChain:
        return replace(self, tool=tool)

    def _dh_table(self) -> np.ndarray:
        rows = [
            (j.a_mm, j.alpha_rad, j.d_mm, j.theta_offset_rad, 1.0 if j.type == PRISMATIC else 0.0)
            for j in self.joints
        ]
        return np.ascontiguousarray(rows, dtype=float)

    def _pre_stack(self) -> np.ndarray:
        pre = np.tile(np.eye(4), (N_JOINTS, 1, 1))
        pre[0] = self.base.matrix
        pre[6] = self.ee_mount.matrix
        return np.ascontiguousarray(pre)

    def _frame(self, frame: str):
        if frame == "tip":
            return self._tool_m, N_JOINTS
        if frame == "probe":
            return self._probe_m, 6
        raise ValueError(f"unknown frame {frame!r}")

    def to_dict(self) -> dict:
        return {
            "joints": [j.to_dict() for j in self.joints],
            "q_home": [float(v) for v in self.q_home],
            "base": _transform_dict(self.base),
            "ee_mount": _transform_dict(self.ee_mount),
            "tool": _transform_dict(self.tool),
            "probe_mount": _transform_dict(self.probe_mount),
        }


def _transform_dict(t: RigidTransform) -> dict:
    return {
        "rotation": [[float(v) for v in row] for row in t.rotation],
        "translation_mm": [float(v) for v in t.translation],
    }


def forward_kinematics(chain: KinematicChain, q, frame: str = "tip") -> RigidTransform:
    """Pose of the needle tip (``frame="tip"``) or probe face (``"probe"``)."""
    tool, n = chain._frame(frame)
    m = _k.pose(chain._dh, chain._pre_tip, tool, _as_q(q), n)
    return RigidTransform.from_matrix(m)


def jacobian(chain: KinematicChain, q, frame: str = "tip") -> np.ndarray:
    """Geometric 6x9 Jacobian, rows (linear mm, angular rad) in world axes.

    Columns of joints the frame does not depend on are zero.
    """
    tool, n = chain._frame(frame)
    return np.asarray(_k.jacobian(chain._dh, chain._pre_tip, tool, _as_q(q), n))


@dataclass(frozen=True)
class IKSettings:
    damping: float = 1e-3
    max_iter: int = 200
    tol_mm: float = 1e-4
    tol_rad: float = 1e-6
    rot_scale: float = PRISMATIC_MM_PER_RAD


def inverse_kinematics(
    chain: KinematicChain,
    target: RigidTransform,
    seed_q,
    frame: str = "tip",
    active: Sequence[bool] | None = None,
    settings: IKSettings = IKSettings(),
) -> JointVector:
    """Damped least-squares IK for a full pose target.

    Steps are taken in weighted joint coordinates (prismatic mm / 100), so
    the minimum-norm update keeps the solution nearest to ``seed_q``. The
    solver first runs with joint limits enforced; if that fails it retries
    unconstrained to tell an out-of-limit solution apart from an
    unreachable target.

    Raises NoConvergence or JointLimitViolation.
    """
    tool, n = chain._frame(frame)
    q0 = _as_q(seed_q)
    lo, hi = chain.limits
    scale = np.where(chain.prismatic_mask, PRISMATIC_MM_PER_RAD, 1.0)
    if active is not None:
        scale = scale * np.asarray(active, dtype=float)
    scale = np.ascontiguousarray(scale)
    tgt = np.ascontiguousarray(target.matrix)
    args = (settings.damping, settings.max_iter, settings.tol_mm, settings.tol_rad, settings.rot_scale)

    q, ok, _, err_p, err_r = _k.solve_ik(
        chain._dh, chain._pre_tip, tool, tgt, np.clip(q0, lo, hi), n, scale, lo, hi, True, *args
    )
    if ok:
        return JointVector(q)
    q_free, ok_free, _, _, _ = _k.solve_ik(
        chain._dh, chain._pre_tip, tool, tgt, q0, n, scale, lo, hi, False, *args
    )
    if ok_free and not chain.within_limits(q_free):
        raise JointLimitViolation("only out-of-limit solutions found")
    if ok_free:
        return JointVector(q_free)
    raise NoConvergence(
        f"IK did not converge: residual {err_p:.3g} mm, {err_r:.3g} rad after {settings.max_iter} iterations"
    )


def track_path(
    chain: KinematicChain,
    rotation,
    points,
    seed_q,
    frame: str = "tip",
    settings: IKSettings = IKSettings(),
) -> np.ndarray:
    """Joint vectors following ``points`` at a fixed orientation.

    Each point is solved by clamped IK seeded from the previous solution,
    the way a controller tracks a trajectory tick by tick. Returns an
    (m, 9) array; m is short of ``len(points)`` when a point fails.
    """
    tool, n = chain._frame(frame)
    lo, hi = chain.limits
    scale = np.ascontiguousarray(np.where(chain.prismatic_mask, PRISMATIC_MM_PER_RAD, 1.0))
    qs, _ = _k.track_path(
        chain._dh, chain._pre_tip, tool,
        np.ascontiguousarray(rotation, dtype=float),
        np.ascontiguousarray(np.reshape(points, (-1, 3)), dtype=float),
        np.clip(_as_q(seed_q), lo, hi), n, scale, lo, hi,
        settings.damping, settings.max_iter, settings.tol_mm, settings.tol_rad, settings.rot_scale,
    )
    return np.asarray(qs)


def frame_positions(chain: KinematicChain, qs, frame: str = "tip") -> np.ndarray:
    """Origins of ``frame`` for each row of an (m, 9) joint array."""
    tool, n = chain._frame(frame)
    qs = np.ascontiguousarray(np.reshape(qs, (-1, N_JOINTS)), dtype=float)
    return np.asarray(_k.positions(chain._dh, chain._pre_tip, tool, qs, n))


# ---------------------------------------------------------------------------
# default chain

# Needle pitch measured from the skin plane
DEFAULT_PITCH_RAD = math.radians(20.0)


def default_chain() -> KinematicChain:
    """Nominal tabletop cobot plus the vascular-access end-effector.

    Arm DH values follow the common UR-style layout with main links of
    200-400 mm. At ``q_home`` the flange x axis points along world +x (the
    vessel direction of the scenarios) and flange z points straight down.
    """
    half_pi = math.pi / 2
    arm = (
        Joint(REVOLUTE, 0.0, half_pi, 230.0, 0.0),
        Joint(REVOLUTE, -300.0, 0.0, 0.0, 0.0),
        Joint(REVOLUTE, -260.0, 0.0, 0.0, 0.0, -2.8, 2.8),
        Joint(REVOLUTE, 0.0, half_pi, 130.0, 0.0),
        Joint(REVOLUTE, 0.0, -half_pi, 115.0, 0.0),
        Joint(REVOLUTE, 0.0, 0.0, 100.0, 0.0),
    )
    ee = (
        Joint(PRISMATIC, 0.0, half_pi, 0.0, 0.0, -30.0, 30.0),
        Joint(REVOLUTE, 0.0, -half_pi, 0.0, 0.0, 0.0, math.radians(60.0)),
        Joint(PRISMATIC, 0.0, 0.0, 0.0, 0.0, -10.0, 60.0),
    )
    q_home = [0.0, -half_pi, half_pi, -half_pi, -half_pi, half_pi, 0.0, DEFAULT_PITCH_RAD, 0.0]
    # ee base frame: z along flange x (slide axis), x along -flange z (up)
    ee_rot = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    return KinematicChain(
        arm_links=arm,
        ee_links=ee,
        q_home=np.array(q_home),
        ee_mount=RigidTransform(ee_rot, [-92.0, 0.0, 120.0]),
        tool=RigidTransform.from_translation([0.0, 0.0, 80.0]),
        probe_mount=RigidTransform.from_translation([0.0, 0.0, 150.0]),
    )


def chain_from_dict(data: dict) -> KinematicChain:
    joints = [Joint(**j) for j in data["joints"]]
    if len(joints) != N_JOINTS:
        raise ValueError(f"chain needs {N_JOINTS} joints, got {len(joints)}")

    def tf(key):
        if key not in data:
            return RigidTransform.identity()
        return RigidTransform(data[key]["rotation"], data[key]["translation_mm"])

    return KinematicChain(
        arm_links=joints[:6],
        ee_links=joints[6:],
        q_home=np.array(data["q_home"], dtype=float),
        base=tf("base"),
        ee_mount=tf("ee_mount"),
        tool=tf("tool"),
        probe_mount=tf("probe_mount"),
    )


__all__ = [
    "KERNEL",
    "IKSettings",
    "Joint",
    "JointVector",
    "KinematicChain",
    "RigidTransform",
    "chain_from_dict",
    "default_chain",
    "forward_kinematics",
    "frame_positions",
    "inverse_kinematics",
    "jacobian",
    "rotation_angle",
    "rotation_log",
    "track_path",
]

import importlib
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from conftest import near_home_q
from hypothesis import given, settings
from hypothesis import strategies as st

from rvasim.errors import InvalidJointVector, JointLimitViolation, NoConvergence
from rvasim.kinematics import (
    PRISMATIC,
    REVOLUTE,
    Joint,
    KinematicChain,
    RigidTransform,
    _kernels_py,
    chain_from_dict,
    default_chain,
    forward_kinematics,
    frame_positions,
    inverse_kinematics,
    jacobian,
    rot_x,
    rot_z,
    track_path,
)

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "benchmarks"))

HOME_TIP = np.array([-391.82459033712735, -130.0, 282.6383885339465])
S20, C20 = math.sin(math.radians(20)), math.cos(math.radians(20))
HOME_ROT = np.array([[S20, 0.0, C20], [0.0, -1.0, 0.0], [C20, 0.0, -S20]])


def zero_chain():
    arm = tuple(Joint(REVOLUTE) for _ in range(6))
    ee = (Joint(PRISMATIC, limit_min=-10, limit_max=10), Joint(REVOLUTE), Joint(PRISMATIC, limit_min=-10, limit_max=10))
    return KinematicChain(arm, ee, np.zeros(9))


def dh(a, alpha, d, theta):
    ct, st, ca, sa = math.cos(theta), math.sin(theta), math.cos(alpha), math.sin(alpha)
    return np.array([[ct, -st * ca, st * sa, a * ct], [st, ct * ca, -ct * sa, a * st], [0, sa, ca, d], [0, 0, 0, 1]])


def oracle_fk(chain, q):
    """Plain product of DH matrices, written independently of the kernels."""
    m = chain.base.matrix
    for i, (j, qi) in enumerate(zip(chain.joints, q)):
        if i == 6:
            m = m @ chain.ee_mount.matrix
        if j.type == REVOLUTE:
            m = m @ dh(j.a_mm, j.alpha_rad, j.d_mm, j.theta_offset_rad + qi)
        else:
            m = m @ dh(j.a_mm, j.alpha_rad, j.d_mm + qi, j.theta_offset_rad)
    return m @ chain.tool.matrix


# --- RigidTransform ---------------------------------------------------------


def test_transform_compose_and_inverse():
    a = RigidTransform(rot_z(0.3) @ rot_x(-1.1), [1.0, -2.0, 3.0])
    b = RigidTransform(rot_x(0.7), [0.5, 0.0, -4.0])
    assert np.allclose((a @ b).matrix, a.matrix @ b.matrix)
    assert np.allclose((a @ a.inverse()).matrix, np.eye(4), atol=1e-12)
    assert a.is_valid()


def test_invalid_rotation_detected():
    t = RigidTransform(np.diag([1.0, 1.0, 1.0 + 1e-6]), np.zeros(3))
    assert not t.is_valid()
    assert not RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3)).is_valid()


# --- chain construction -----------------------------------------------------


def test_default_chain_shape(chain):
    assert len(chain.joints) == 9
    assert [j.type for j in chain.joints[6:]] == [PRISMATIC, REVOLUTE, PRISMATIC]
    assert all(j.type == REVOLUTE for j in chain.joints[:6])
    assert chain.within_limits(chain.q_home)
    lo, hi = chain.limits
    assert np.all(lo < hi)


def test_chain_rejects_bad_layout():
    with pytest.raises(ValueError):
        KinematicChain(tuple(Joint(REVOLUTE) for _ in range(5)), (Joint(PRISMATIC),) * 3, np.zeros(9))
    with pytest.raises(ValueError):
        Joint(REVOLUTE, limit_min=1.0, limit_max=1.0)
    arm = tuple(Joint(REVOLUTE) for _ in range(6))
    ee = (Joint(PRISMATIC, limit_min=0, limit_max=1), Joint(REVOLUTE), Joint(PRISMATIC))
    with pytest.raises(JointLimitViolation):
        KinematicChain(arm, ee, np.full(9, 5.0))


def test_chain_dict_round_trip(chain):
    again = chain_from_dict(chain.to_dict())
    q = chain.q_home + 0.1
    assert forward_kinematics(again, q) == forward_kinematics(chain, q)


# --- forward kinematics -----------------------------------------------------


def test_fk_zero_chain_is_identity():
    pose = forward_kinematics(zero_chain(), np.zeros(9))
    assert np.allclose(pose.matrix, np.eye(4), atol=1e-15)


def test_fk_home_golden(chain):
    pose = forward_kinematics(chain, chain.q_home)
    assert np.allclose(pose.translation, HOME_TIP, atol=1e-9)
    assert np.allclose(pose.rotation, HOME_ROT, atol=1e-12)
    assert np.allclose(pose.matrix, oracle_fk(chain, chain.q_home), atol=1e-9)


def test_fk_matches_oracle_on_random_q(chain):
    rng = np.random.default_rng(3)
    for _ in range(50):
        q = near_home_q(chain, rng, spread=1.0)
        assert np.allclose(forward_kinematics(chain, q).matrix, oracle_fk(chain, q), atol=1e-9)


def test_insertion_joint_moves_along_needle_axis(chain):
    home = forward_kinematics(chain, chain.q_home)
    q = chain.q_home.copy()
    q[8] += 10.0
    moved = forward_kinematics(chain, q)
    assert np.allclose(moved.translation, home.translation + 10.0 * home.rotation[:, 2], atol=1e-9)
    assert np.allclose(moved.rotation, home.rotation, atol=1e-12)


def test_probe_ignores_end_effector_joints(chain):
    q = chain.q_home.copy()
    q[6:] = [5.0, 0.6, 20.0]
    assert forward_kinematics(chain, q, "probe") == forward_kinematics(chain, chain.q_home, "probe")


def test_fk_dimension_mismatch(chain):
    with pytest.raises(InvalidJointVector):
        forward_kinematics(chain, np.zeros(8))


def test_fk_bit_identical(chain):
    q = chain.q_home + 0.123
    a = forward_kinematics(chain, q).matrix
    b = forward_kinematics(chain, q).matrix
    assert a.tobytes() == b.tobytes()


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=9, max_size=9))
def test_fk_rotation_valid(chain, dq):
    q = np.clip(chain.q_home + np.array(dq), *chain.limits)
    assert forward_kinematics(chain, q).is_valid()


# --- jacobian ---------------------------------------------------------------


def numeric_jacobian(chain, q, h=1e-7):
    j = np.zeros((6, 9))
    for i in range(9):
        dq = np.zeros(9)
        dq[i] = h
        a = forward_kinematics(chain, q + dq)
        b = forward_kinematics(chain, q - dq)
        j[:3, i] = (a.translation - b.translation) / (2 * h)
        w = (a.rotation - b.rotation) @ forward_kinematics(chain, q).rotation.T / (2 * h)
        j[3:, i] = [w[2, 1], w[0, 2], w[1, 0]]
    return j


def test_jacobian_matches_finite_differences(chain):
    rng = np.random.default_rng(11)
    for _ in range(20):
        q = near_home_q(chain, rng, spread=1.0)
        ja = jacobian(chain, q)
        jn = numeric_jacobian(chain, q)
        scale = np.maximum(np.abs(ja), 1.0)
        assert np.max(np.abs(ja - jn) / scale) <= 1e-6


def test_jacobian_insertion_column(chain):
    q = chain.q_home + 0.05
    j = jacobian(chain, q)
    axis = forward_kinematics(chain, q).rotation[:, 2]
    assert np.allclose(j[:3, 8], axis, atol=1e-12)
    assert np.allclose(j[3:, 8], 0.0, atol=1e-15)


def test_jacobian_zero_chain_revolute_columns():
    j = jacobian(zero_chain(), np.zeros(9))
    revolute = [0, 1, 2, 3, 4, 5, 7]
    assert np.allclose(j[:3, revolute], 0.0, atol=1e-15)


def test_probe_jacobian_has_no_end_effector_columns(chain):
    j = jacobian(chain, chain.q_home, frame="probe")
    assert np.all(j[:, 6:] == 0.0)


# --- inverse kinematics -----------------------------------------------------


def test_ik_fixed_point(chain):
    q0 = chain.q_home + np.array([0.1, -0.05, 0.1, 0.0, 0.05, -0.1, 2.0, 0.05, 5.0])
    q = inverse_kinematics(chain, forward_kinematics(chain, q0), q0)
    assert chain.joint_distance(q, q0) < 1e-9


def test_ik_round_trip_small_perturbation(chain):
    rng = np.random.default_rng(5)
    q0 = chain.q_home.copy()
    for _ in range(25):
        target = forward_kinematics(chain, np.clip(q0 + rng.normal(0, 0.05, 9), *chain.limits))
        q = inverse_kinematics(chain, target, q0)
        got = forward_kinematics(chain, q)
        assert np.linalg.norm(got.translation - target.translation) <= 0.01
        rot_err = np.linalg.norm(got.rotation - target.rotation)
        assert rot_err <= 1e-4
        assert chain.within_limits(q)


def test_ik_unreachable(chain):
    target = RigidTransform(np.eye(3), [10_000.0, 0.0, 0.0])
    with pytest.raises(NoConvergence):
        inverse_kinematics(chain, target, chain.q_home)


def test_ik_out_of_limit_solution(chain):
    # arm frozen near home and insertion travel cut to +/-1 mm: a target
    # 40 mm down the needle is only reachable outside the limits
    def clamp(j, lo, hi):
        return Joint(j.type, j.a_mm, j.alpha_rad, j.d_mm, j.theta_offset_rad, lo, hi)

    arm = tuple(clamp(j, qh - 1e-3, qh + 1e-3) for j, qh in zip(chain.arm_links, chain.q_home))
    ee = chain.ee_links[:2] + (clamp(chain.ee_links[2], -1.0, 1.0),)
    locked = KinematicChain(arm, ee, chain.q_home, chain.base, chain.ee_mount, chain.tool, chain.probe_mount)
    q = chain.q_home.copy()
    q[8] = 40.0
    with pytest.raises(JointLimitViolation):
        inverse_kinematics(locked, forward_kinematics(chain, q), chain.q_home)


def test_ik_probe_frame(chain):
    target = forward_kinematics(chain, chain.q_home, "probe")
    target = RigidTransform(target.rotation, target.translation + [3.0, -2.0, -5.0])
    q = inverse_kinematics(chain, target, chain.q_home, frame="probe")
    got = forward_kinematics(chain, q, "probe")
    assert np.linalg.norm(got.translation - target.translation) <= 1e-3


def test_ik_prefers_nearby_solution(chain):
    q0 = chain.q_home.copy()
    q1 = q0 + np.array([0.02, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    q = inverse_kinematics(chain, forward_kinematics(chain, q1), q0)
    assert chain.joint_distance(q, q0) <= chain.joint_distance(q1, q0) + 1e-6


# --- batched kernels --------------------------------------------------------


def test_track_path_follows_line(chain):
    start = forward_kinematics(chain, chain.q_home)
    axis = start.rotation[:, 2]
    pts = start.translation + np.linspace(0.02, 8.0, 400)[:, None] * axis
    qs = track_path(chain, start.rotation, pts, chain.q_home)
    assert qs.shape == (400, 9)
    assert np.max(np.linalg.norm(frame_positions(chain, qs) - pts, axis=1)) <= 1e-3


def test_track_path_stops_at_unreachable_point(chain):
    start = forward_kinematics(chain, chain.q_home)
    pts = np.vstack([start.translation + [0.0, 0.0, 0.5], [5000.0, 0.0, 0.0], start.translation])
    qs = track_path(chain, start.rotation, pts, chain.q_home)
    assert len(qs) == 1


def test_frame_positions_match_fk(chain):
    rng = np.random.default_rng(2)
    qs = np.array([near_home_q(chain, rng) for _ in range(20)])
    pos = frame_positions(chain, qs)
    for q, p in zip(qs, pos):
        assert np.allclose(p, forward_kinematics(chain, q).translation, atol=1e-12)


class TestKernelParity:
    """The compiled kernels and the Python fallback agree."""

    @pytest.fixture(autouse=True)
    def compiled(self):
        self.k = pytest.importorskip("rvasim.kinematics._kernels")

    def args(self, chain, frame="tip"):
        tool, n = chain._frame(frame)
        return chain._dh, chain._pre_tip, tool, n

    def test_pose_and_jacobian(self, chain):
        dh_, pre, tool, n = self.args(chain)
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = near_home_q(chain, rng)
            assert np.allclose(self.k.pose(dh_, pre, tool, q, n), _kernels_py.pose(dh_, pre, tool, q, n), atol=1e-10)
            assert np.allclose(self.k.jacobian(dh_, pre, tool, q, n), _kernels_py.jacobian(dh_, pre, tool, q, n),
                               atol=1e-10)

    def test_solve_ik(self, chain):
        dh_, pre, tool, n = self.args(chain)
        lo, hi = chain.limits
        scale = np.ascontiguousarray(np.where(chain.prismatic_mask, 100.0, 1.0))
        rng = np.random.default_rng(1)
        for _ in range(10):
            target = np.ascontiguousarray(forward_kinematics(chain, near_home_q(chain, rng, 0.2)).matrix)
            out = [mod.solve_ik(dh_, pre, tool, target, chain.q_home, n, scale, lo, hi, True,
                                1e-3, 200, 1e-4, 1e-6, 100.0) for mod in (self.k, _kernels_py)]
            assert bool(out[0][1]) == bool(out[1][1])
            assert np.allclose(out[0][0], out[1][0], atol=1e-6)

    def test_track_path_and_positions(self, chain):
        dh_, pre, tool, n = self.args(chain)
        lo, hi = chain.limits
        scale = np.ascontiguousarray(np.where(chain.prismatic_mask, 100.0, 1.0))
        start = forward_kinematics(chain, chain.q_home)
        pts = np.ascontiguousarray(start.translation + np.linspace(0.02, 2.0, 100)[:, None] * start.rotation[:, 2])
        rot = np.ascontiguousarray(start.rotation)
        res = [mod.track_path(dh_, pre, tool, rot, pts, chain.q_home, n, scale, lo, hi, 1e-3, 200, 1e-4, 1e-6,
                              100.0) for mod in (self.k, _kernels_py)]
        assert res[0][1] == res[1][1] == 100
        qa, qb = np.asarray(res[0][0]), np.asarray(res[1][0])
        assert np.allclose(qa, qb, atol=1e-8)
        pa = np.asarray(self.k.positions(dh_, pre, tool, qa, n))
        pb = np.asarray(_kernels_py.positions(dh_, pre, tool, qa, n))
        assert np.allclose(pa, pb, atol=1e-10)


def test_default_chain_is_fresh():
    a, b = default_chain(), default_chain()
    assert forward_kinematics(a, a.q_home) == forward_kinematics(b, b.q_home)


def test_env_var_forces_fallback():
    code = ("import rvasim.kinematics as k; from rvasim.procedure import execute_attempt; "
            "from rvasim.config import RunConfig; "
            "print(k.KERNEL, execute_attempt(RunConfig(), 'phantom', 3).log.outcome.value)")
    env = {**os.environ, "RVASIM_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out.split() == ["python", "Success"]


def test_benchmark_runs(capsys):
    bench = importlib.import_module("bench_kernels")
    bench.main(["--repeat", "1"])
    rows = capsys.readouterr().out.splitlines()
    assert rows[0].startswith("workload") and len(rows) == 6

"""One ultrasound-guided needle attempt as a phase-by-phase state machine.

Calibration -> InitialPositioning -> TargetAlignment -> Insertion -> Reset
-> Done, with Aborted reachable from every phase. Two chains run side by
side: the physical one (true needle offset) produces what happens, the
controller's copy (calibrated offset) produces what gets commanded. Static
repeatability errors are drawn for every commanded placement and added to
physical positions.

Insertion tracks the straight trajectory with full 9-joint IK seeded at the
previous tick. Each uninterrupted stretch of ticks is solved in one kernel
call and its force, deformation, gate and tip-state checks are evaluated
vectorized; the first tick that trips anything ends the stretch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .config import RunConfig
from .errors import (
    DegenerateSegment,
    JointLimitViolation,
    MaxRetriesExceeded,
    NoConvergence,
    QualityRetriesExhausted,
    SimulationError,
)
from .kinematics import (
    KinematicChain,
    RigidTransform,
    forward_kinematics,
    frame_positions,
    inverse_kinematics,
    rotation_angle,
    track_path,
)
from .phantom import (
    STATE_CODES,
    TipState,
    TissueBlock,
    _points_polyline_sq,
    classify_path,
    coarse_localize,
    make_phantom_scenario,
    make_rat_tail_scenario,
)
from .records import AttemptLog, Outcome, Phase, TrialRecord
from .rng import Stream, stream
from .safety import (
    Gate,
    PunctureEvents,
    SafetyLimits,
    axial_force,
    factor_stiffness,
    solve_deformation,
)
from .ultrasound import (
    Detection,
    UltrasoundFrame,
    detect_needle_tip,
    detect_vessel,
    image_plane_pose,
    quality_score,
    render_needle,
    render_settled,
    write_pgm,
)

# probe frame x along the vessel (+x), z straight down into the tissue
PROBE_DOWN = np.diag([1.0, -1.0, -1.0])
ROTATION_WEIGHT_MM_PER_RAD = 100.0


def needle_rotation(pitch_rad: float) -> np.ndarray:
    """Tip frame whose z axis points along +x, tilted ``pitch_rad`` below the skin plane."""
    s, c = math.sin(pitch_rad), math.cos(pitch_rad)
    return np.array([[s, 0.0, c], [0.0, -1.0, 0.0], [c, 0.0, -s]])


def transform_distance(a: RigidTransform, b: RigidTransform) -> float:
    """|t_a - t_b| + 100 * angle(R_a^T R_b), in mm-equivalent."""
    dt = float(np.linalg.norm(a.translation - b.translation))
    return dt + ROTATION_WEIGHT_MM_PER_RAD * rotation_angle(a.rotation.T @ b.rotation)


def build_scenario(kind: str, seed: int, config: RunConfig) -> TissueBlock:
    if kind == "phantom":
        return make_phantom_scenario(config.scenario)
    if kind == "rat":
        return make_rat_tail_scenario(seed, config.scenario)
    raise ValueError(f"unknown scenario {kind!r}")


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibrationResult:
    t_cal: RigidTransform
    t_expected: RigidTransform
    distance: float
    passed: bool


def calibrate(
    true_needle_offset: RigidTransform,
    rng: np.random.Generator,
    sigma_mm: float = 0.02,
    sigma_deg: float = 0.05,
    bias_mm=(0.0, 0.0, 0.0),
    eps_cal: float = SafetyLimits().eps_cal,
) -> CalibrationResult:
    """Measure the needle offset with Gaussian error plus an optional fixed bias."""
    dt = rng.normal(0.0, sigma_mm, size=3) + np.asarray(bias_mm, dtype=float)
    rotvec = rng.normal(0.0, math.radians(sigma_deg), size=3)
    r = true_needle_offset.rotation @ Rotation.from_rotvec(rotvec).as_matrix()
    t_cal = RigidTransform(r, true_needle_offset.translation + dt)
    d = transform_distance(t_cal, true_needle_offset)
    return CalibrationResult(t_cal, true_needle_offset, d, d <= eps_cal)


# ---------------------------------------------------------------------------
# trajectory


@dataclass(frozen=True)
class Trajectory:
    p0: np.ndarray
    v: np.ndarray
    duration_s: float

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if not np.linalg.norm(self.v) > 0:
            raise ValueError("velocity must be non-zero")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")

    def position(self, t):
        """p(t) = p0 + t v; ``t`` may be an array."""
        t = np.asarray(t, dtype=float)
        return self.p0 + t[..., None] * self.v if t.ndim else self.p0 + float(t) * self.v

    @property
    def end(self) -> np.ndarray:
        return self.position(self.duration_s)


def plan_trajectory(start, target, speed_mm_s: float, overshoot_mm: float = 0.0) -> Trajectory:
    start = np.asarray(start, dtype=float)
    target = np.asarray(target, dtype=float)
    if not speed_mm_s > 0:
        raise ValueError("speed must be > 0")
    dist = float(np.linalg.norm(target - start))
    if dist <= 1e-12:
        raise DegenerateSegment("start and target coincide")
    v = speed_mm_s * (target - start) / dist
    return Trajectory(start, v, (dist + overshoot_mm) / speed_mm_s)


# ---------------------------------------------------------------------------
# the simulated rig


@dataclass
class Rig:
    """Physical arm state plus the controller's model of it."""

    chain: KinematicChain
    ctrl: KinematicChain
    q: np.ndarray
    rng: np.random.Generator
    arm_sigma_mm: float = 0.0
    ee_sigma_mm: float = 0.0
    arm_err: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ee_err: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def move(self, q) -> None:
        """Commanded placement; draws fresh repeatability errors."""
        self.q = np.asarray(q, dtype=float)
        self.arm_err = self.rng.normal(0.0, self.arm_sigma_mm, size=3)
        self.ee_err = self.rng.normal(0.0, self.ee_sigma_mm, size=3)

    def tip(self, qs=None) -> np.ndarray:
        pos = frame_positions(self.chain, self.q if qs is None else qs) + self.arm_err + self.ee_err
        return pos[0] if qs is None else pos

    def probe_pose(self) -> RigidTransform:
        p = forward_kinematics(self.chain, self.q, frame="probe")
        return RigidTransform(p.rotation, p.translation + self.arm_err)

    def believed_probe_pose(self) -> RigidTransform:
        return forward_kinematics(self.ctrl, self.q, frame="probe")


@dataclass
class Context:
    """Per-attempt bookkeeping: clock, phase trace and gate events."""

    config: RunConfig
    block: TissueBlock
    seed: int
    attempt: int = 0
    tick: int = 0
    trace: list = field(default_factory=list)
    events: list = field(default_factory=list)
    # physical probe pose of the accepted pre-puncture frame
    probe: RigidTransform | None = None

    def rng(self, which: Stream) -> np.random.Generator:
        return stream(self.seed, int(which), self.attempt)

    def enter(self, phase: Phase) -> None:
        self.trace.append((phase, self.tick))

    def log(self, kind: str, **data) -> None:
        phase = self.trace[-1][0].value if self.trace else None
        self.events.append((kind, phase, self.tick, *(f"{k}={v}" for k, v in sorted(data.items()))))


# ---------------------------------------------------------------------------
# phases


def initial_positioning(ctx: Context, rig: Rig) -> tuple[RigidTransform, UltrasoundFrame]:
    """Place the probe over the coarse vessel estimate until Q clears the gate.

    Retries shift the probe sideways on a +1, -1, +2, -2, ... step grid.
    Returns the controller's belief of the probe pose and the accepted frame.
    """
    cfg = ctx.config
    proc = cfg.procedure
    loc = coarse_localize(ctx.block, ctx.rng(Stream.NIR), cfg.scenario.nir_sigma_mm)
    us_rng = ctx.rng(Stream.ULTRASOUND)
    for k in range(proc.max_quality_retries + 1):
        if k:
            ctx.enter(Phase.INITIAL_POSITIONING)
        step = (k + 1) // 2 * (1 if k % 2 else -1)
        target = RigidTransform(PROBE_DOWN, loc.approx_position + [0.0, step * proc.jitter_step_mm, 0.0])
        rig.move(inverse_kinematics(rig.ctrl, target, rig.q, frame="probe"))
        ctx.tick += 1
        probe = rig.probe_pose()
        frame = render_settled(ctx.block, probe, cfg.us, us_rng, frame_index=2 * k)
        q = quality_score(frame)
        ctx.log("quality", q=round(q, 4))
        if q >= cfg.safety.q_threshold:
            ctx.probe = probe
            return rig.believed_probe_pose(), frame
    raise QualityRetriesExhausted(f"Q stayed below {cfg.safety.q_threshold} after {proc.max_quality_retries} retries")


def aim_point(frame: UltrasoundFrame, probe_pose: RigidTransform, cfg: RunConfig,
              detection: Detection, jitter_mm=(0.0, 0.0)) -> np.ndarray:
    """Lift a detection to 3-D through the believed image plane."""
    plane = image_plane_pose(probe_pose, cfg.us)
    xy = detection.center_mm + np.asarray(jitter_mm, dtype=float)
    return plane.apply(np.array([xy[0], xy[1], 0.0]))


def needle_start_pose(p_target, skin_z: float, pitch_rad: float) -> RigidTransform:
    """Tip on the skin such that the needle axis runs through ``p_target``."""
    p_target = np.asarray(p_target, dtype=float)
    depth = skin_z - p_target[2]
    if depth <= 0:
        raise DegenerateSegment("aim point is not below the skin")
    r = needle_rotation(pitch_rad)
    return RigidTransform(r, p_target - r[:, 2] * (depth / math.sin(pitch_rad)))


def align_needle(ctx: Context, rig: Rig, start: RigidTransform) -> np.ndarray:
    """IK to the start pose, re-solving until the joint correction is below eps_align."""
    q_cur = rig.q
    for _ in range(ctx.config.procedure.max_align_iterations):
        q_new = inverse_kinematics(rig.ctrl, start, q_cur)
        correction = rig.ctrl.joint_distance(q_new, q_cur)
        q_cur = q_new
        if correction <= ctx.config.safety.eps_align:
            break
    else:
        raise NoConvergence("alignment did not settle within the iteration budget")
    rig.move(q_cur)
    ctx.tick += 1
    return q_cur


def align_target(ctx: Context, rig: Rig, frame: UltrasoundFrame, probe_pose: RigidTransform):
    """Detect the vessel, aim the needle at it. Returns (p_target, q_aligned, detection, start pose)."""
    cfg = ctx.config
    det = detect_vessel(frame)
    jitter = ctx.rng(Stream.DETECTION).normal(0.0, cfg.noise.detection_noise_mm, size=2)
    p_target = aim_point(frame, probe_pose, cfg, det, jitter)
    d = float(np.linalg.norm(p_target - forward_kinematics(rig.ctrl, rig.q).translation))
    ctx.log("target", distance_mm=round(d, 4), diameter_mm=round(det.diameter_mm, 4))
    start = needle_start_pose(p_target, probe_pose.translation[2], math.radians(cfg.procedure.pitch_deg))
    q = align_needle(ctx, rig, start)
    return p_target, q, det, start


@dataclass
class InsertionResult:
    state: TipState
    gate: Gate
    commanded: np.ndarray  # (m + 1, 3) commanded tip points, start included
    joints: np.ndarray  # (m + 1, 9)
    tips: np.ndarray  # (m + 1, 3) physical tip
    ticks: np.ndarray  # (m + 1,) clock value of each row
    force_n: np.ndarray  # (m,) measured force magnitude per tick
    deformation: np.ndarray  # (m + 1, 3) true tissue displacement
    reaims: int
    gate_tick: int | None = None


def _wall_depth(block: TissueBlock, start, direction, length_mm: float, step_mm: float = 0.01):
    """Path depth at which a straight needle first enters a lumen, if it does."""
    s = np.arange(0.0, length_mm + step_mm, step_mm)
    pts = start + s[:, None] * direction
    for v in block.vessels:
        hit = np.nonzero(_points_polyline_sq(pts, v.centerline) < v.radius_mm**2)[0]
        if hit.size:
            return float(s[hit[0]])
    return None


def insert(ctx: Context, rig: Rig, traj: Trajectory, p_target, overshoot_mm: float,
           force_noise: _NoiseTape) -> InsertionResult:
    """Advance along ``traj`` tick by tick until lumen entry, transfixion,
    a force trip or the end of the trajectory."""
    cfg = ctx.config
    proc, limits, fm = cfg.procedure, cfg.safety, cfg.force
    block = ctx.block
    k_mat = block.stiffness_K
    factor = factor_stiffness(k_mat)
    r = needle_rotation(math.radians(proc.pitch_deg))
    axial, lat1, lat2 = r[:, 2], r[:, 0], r[:, 1]
    skin_z = block.skin_z
    dt = proc.dt_s

    tip0 = rig.tip()
    sin_pitch = -axial[2]
    path_len = traj.duration_s * float(np.linalg.norm(traj.v))
    events = PunctureEvents(fm.skin_pop_depth_mm,
                            _wall_depth(block, tip0 + max(0.0, tip0[2] - skin_z) / sin_pitch * axial,
                                        axial, path_len + 2.0))

    commanded = [traj.p0[None]]
    joints = [rig.q[None]]
    tips = [tip0[None]]
    ticks = [np.array([ctx.tick])]
    forces = []
    deform = [np.zeros((1, 3))]
    peak = 0.0
    reaims = 0
    q_seed = rig.q
    gate = Gate.OK
    gate_tick = None
    state = TipState.IN_TISSUE if block.contains(tip0) else TipState.OUTSIDE

    while True:
        n = max(1, int(math.ceil(traj.duration_s / dt - 1e-9)))
        t = np.minimum(np.arange(1, n + 1) * dt, traj.duration_s)
        pts = traj.position(t)
        qs = track_path(rig.ctrl, r, pts, q_seed)
        failed = len(qs) < n
        m = len(qs)
        pts = pts[:m]
        phys = rig.tip(qs) if m else np.zeros((0, 3))
        depth = np.maximum(0.0, skin_z - phys[:, 2]) / sin_pitch
        f_true = axial_force(depth, events, fm)
        noise = force_noise.take(ctx.tick + 1, m)
        f_meas = noise.copy()
        f_meas[:, 0] += f_true
        world = lambda f: (np.outer(f[:, 0], axial) + np.outer(f[:, 1], lat1) + np.outer(f[:, 2], lat2)).T
        u_true = solve_deformation(factor, k_mat, world(np.column_stack([f_true, np.zeros((m, 2))]))).T
        u_est = solve_deformation(factor, k_mat, world(f_meas)).T
        mag = np.linalg.norm(f_meas, axis=1)
        running = np.maximum.accumulate(np.maximum(mag, peak)) if m else mag
        prev = np.vstack([tips[-1][-1:], phys[:-1]]) if m else phys
        codes = classify_path(block, phys, prev, u_true)

        force_trip = running > limits.f_threshold_n
        deform_trip = np.linalg.norm(u_est, axis=1) > limits.eps_deform_mm
        done = codes >= 2
        stops = force_trip | done | (deform_trip if reaims < proc.max_reaims else False)
        idx = int(np.argmax(stops)) if stops.any() else m - 1
        end = idx + 1

        commanded.append(pts[:end])
        joints.append(qs[:end])
        tips.append(phys[:end])
        ticks.append(ctx.tick + np.arange(1, end + 1))
        forces.append(mag[:end])
        deform.append(u_true[:end])
        if m:
            peak = float(running[idx])
        if reaims >= proc.max_reaims and deform_trip[:end].any():
            ctx.log("deform_exceeded", first_tick=ctx.tick + 1 + int(np.argmax(deform_trip[:end])), action="continue")
        ctx.tick += end

        if m and force_trip[idx]:
            gate, gate_tick = Gate.FORCE_EXCEEDED, ctx.tick
            ctx.log("force_exceeded", peak_n=round(peak, 4))
            state = STATE_CODES[codes[idx]]
            break
        if m and done[idx]:
            state = STATE_CODES[codes[idx]]
            break
        if m and stops[idx]:
            # deformation: re-aim once at the displaced vessel and carry on
            reaims += 1
            shifted = np.asarray(p_target, dtype=float) + u_est[idx]
            ctx.log("deform_exceeded", action="reaim", shift_mm=round(float(np.linalg.norm(u_est[idx])), 4))
            try:
                traj = plan_trajectory(pts[idx], shifted, proc.insertion_speed_mm_s, overshoot_mm)
            except DegenerateSegment:
                state = STATE_CODES[codes[idx]]
                break
            p_target = shifted
            q_seed = qs[idx]
            continue
        if failed:
            raise NoConvergence("needle tracking lost the trajectory")
        state = STATE_CODES[codes[idx]] if m else state
        break

    rig.q = np.concatenate(joints)[-1]
    return InsertionResult(
        state=state,
        gate=gate,
        commanded=np.concatenate(commanded),
        joints=np.concatenate(joints),
        tips=np.concatenate(tips),
        ticks=np.concatenate(ticks),
        force_n=np.concatenate(forces) if forces else np.zeros(0),
        deformation=np.concatenate(deform),
        reaims=reaims,
        gate_tick=gate_tick,
    )


class _NoiseTape:
    """Force-sensor noise indexed by clock tick, drawn in tick order."""

    def __init__(self, rng: np.random.Generator, sigma: float):
        self.rng = rng
        self.sigma = sigma
        self.buf = np.zeros((0, 3))

    def take(self, first_tick: int, m: int) -> np.ndarray:
        need = first_tick + m
        if need > len(self.buf):
            extra = max(need - len(self.buf), 1024)
            fresh = self.rng.normal(0.0, self.sigma, size=(extra, 3)) if self.sigma > 0 else np.zeros((extra, 3))
            self.buf = np.vstack([self.buf, fresh])
        return self.buf[first_tick:need].copy()


def retract(ctx: Context, rig: Rig, ins: InsertionResult) -> np.ndarray:
    """Back out along the insertion path; returns the retraction points.

    The points are the insertion's commanded points in reverse order, so
    they equal p(t_final) - t v on the same tick grid.
    """
    path = ins.commanded[::-1].copy()
    rig.q = ins.joints[0]
    ctx.tick += len(path) - 1
    return path


def reset(ctx: Context, rig: Rig, ins: InsertionResult | None) -> np.ndarray | None:
    path = retract(ctx, rig, ins) if ins is not None else None
    rig.move(rig.chain.q_home)
    ctx.tick += 1
    return path


# ---------------------------------------------------------------------------
# whole attempt


@dataclass
class AttemptResult:
    """Everything one attempt produced, including data the log leaves out."""

    log: AttemptLog
    calibration: CalibrationResult | None = None
    p_target: np.ndarray | None = None
    detection: Detection | None = None
    insertions: list = field(default_factory=list)
    retraction: np.ndarray | None = None
    final_tip: np.ndarray | None = None
    final_q: np.ndarray | None = None
    pre_frame: UltrasoundFrame | None = None
    post_frame: UltrasoundFrame | None = None


_OUTCOMES = {
    TipState.IN_LUMEN: Outcome.SUCCESS,
    TipState.TRANSFIXED: Outcome.TRANSFIXED,
    TipState.IN_TISSUE: Outcome.MISS,
    TipState.OUTSIDE: Outcome.MISS,
}


def _abort_reason(exc: SimulationError) -> str:
    if isinstance(exc, (NoConvergence, JointLimitViolation)):
        return "Unreachable"
    return type(exc).__name__


def _post_frame(ctx: Context, probe: RigidTransform, tip, offset) -> UltrasoundFrame:
    # slide the probe along the vessel so the image plane holds the tip
    p = probe.translation.copy()
    p[0] = tip[0]
    pose = RigidTransform(probe.rotation, p)
    rng = stream(ctx.seed, int(Stream.ULTRASOUND), ctx.attempt, 1)
    frame = render_settled(ctx.block, pose, ctx.config.us, rng, offset=offset, frame_index=100)
    return render_needle(frame, frame.to_plane(tip))


def execute_attempt(
    config: RunConfig,
    scenario: str,
    seed: int,
    attempt: int = 0,
    block: TissueBlock | None = None,
    calibration: CalibrationResult | None = None,
    keep_frames: bool = False,
) -> AttemptResult:
    """Run one attempt and return its full result. Failures become outcomes.

    Later attempts reuse the earlier ``calibration`` and start at
    InitialPositioning.
    """
    block = build_scenario(scenario, seed, config) if block is None else block
    ctx = Context(config, block, seed, attempt)
    noise = config.noise
    res = AttemptResult(log=None)
    rig = None
    try:
        if calibration is None:
            ctx.enter(Phase.CALIBRATION)
            calibration = calibrate(config.chain.tool, stream(seed, int(Stream.CALIBRATION)),
                                    noise.calibration_sigma_mm, noise.calibration_sigma_deg,
                                    noise.calibration_bias_mm, config.safety.eps_cal)
            res.calibration = calibration
            ctx.log("calibration", distance=round(calibration.distance, 6))
            ctx.tick += 1
            if not calibration.passed:
                raise _Abort("CalibrationFailed")
        res.calibration = calibration
        rig = Rig(config.chain, config.chain.with_tool(calibration.t_cal), config.chain.q_home.copy(),
                  ctx.rng(Stream.ARM), noise.arm_repeatability_mm / 3.0, noise.ee_repeatability_mm / 3.0)

        ctx.enter(Phase.INITIAL_POSITIONING)
        probe, frame = initial_positioning(ctx, rig)
        res.pre_frame = frame

        ctx.enter(Phase.TARGET_ALIGNMENT)
        p_target, _, det, start = align_target(ctx, rig, frame, probe)
        res.p_target, res.detection = p_target, det

        proc = config.procedure
        overshoot = proc.overshoot_fraction * det.diameter_mm
        tape = _NoiseTape(ctx.rng(Stream.FORCE), config.force.noise_sigma_n)
        ctx.enter(Phase.INSERTION)
        retries = 0
        while True:
            traj = plan_trajectory(forward_kinematics(rig.ctrl, rig.q).translation, p_target,
                                   proc.insertion_speed_mm_s, overshoot)
            ins = insert(ctx, rig, traj, p_target, overshoot, tape)
            res.insertions.append(ins)
            if ins.gate is not Gate.FORCE_EXCEEDED:
                break
            retract(ctx, rig, ins)
            if retries >= proc.max_insertion_retries:
                raise MaxRetriesExceeded(f"force gate tripped on {retries + 1} insertions")
            retries += 1
            ctx.enter(Phase.INSERTION)
            align_needle(ctx, rig, start)

        final_tip = ins.tips[-1]
        res.final_tip = final_tip
        if keep_frames:
            res.post_frame = _post_frame(ctx, ctx.probe, final_tip, ins.deformation[-1])

        ctx.enter(Phase.RESET)
        res.retraction = reset(ctx, rig, ins)
        res.final_q = rig.q
        ctx.enter(Phase.DONE)
        outcome, reason = _OUTCOMES[ins.state], None
    except (_Abort, SimulationError) as exc:
        ctx.log("abort", reason=exc.reason if isinstance(exc, _Abort) else _abort_reason(exc))
        ctx.enter(Phase.ABORTED)
        outcome = Outcome.ABORTED
        reason = exc.reason if isinstance(exc, _Abort) else _abort_reason(exc)
        res.final_q = None if rig is None else rig.q

    tip_px = None
    if res.post_frame is not None:
        found = detect_needle_tip(res.post_frame)
        tip_px = None if found is None else tuple(found.center_px)
    ins_forces = [f for ins in res.insertions for f in ins.force_n]
    res.log = AttemptLog(
        outcome=outcome,
        abort_reason=reason,
        phase_trace=tuple(ctx.trace),
        max_force_n=float(max(ins_forces)) if ins_forces else 0.0,
        force_trace=tuple(round(float(f), 6) for f in ins_forces),
        events=tuple(ctx.events),
        needle_detected_px=tip_px,
    )
    return res


class _Abort(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def save_frames(res: AttemptResult, out_dir, seed: int, attempt: int) -> tuple | None:
    """Write the pre/post frames as PGM; returns paths relative to ``out_dir``."""
    if res.pre_frame is None:
        return None
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    names = []
    for tag, frame in (("pre", res.pre_frame), ("post", res.post_frame)):
        if frame is None:
            continue
        rel = f"frames/seed{seed}_a{attempt}_{tag}.pgm"
        write_pgm(frame, out_dir / rel)
        names.append(rel)
    return tuple(names)


def run_attempt(scenario_seed: int, config: RunConfig, scenario: str = "rat", trial_id: int = 0) -> TrialRecord:
    """Single first attempt on a fresh scenario, as a trial record."""
    block = build_scenario(scenario, scenario_seed, config)
    res = execute_attempt(config, scenario, scenario_seed, block=block)
    return TrialRecord(trial_id, scenario_seed, block.vessels[0].diameter_mm,
                       block.skin_depth_to_vessel_mm, (res.log,))

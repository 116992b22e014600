"""Virtual tissue: vessel geometry, stiffness and ground-truth queries.

World coordinates are the robot base frame (mm, z up). Scenario blocks are
placed under the probe's home position with the skin as the block's top
face; vessels run along world +x, which is the needle's travel direction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoVesselFound
from .kinematics import RigidTransform
from .rng import Stream, stream

# skin-surface point straight below the probe at the home pose, lowered by a 40 mm standoff
WORKSPACE_ORIGIN = np.array([-375.0, -130.0, 240.0])
VESSEL_AXIS = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class Vessel:
    centerline: np.ndarray
    diameter_mm: float
    wall_thickness_mm: float = 0.05

    def __post_init__(self):
        pts = np.array(self.centerline, dtype=float)
        object.__setattr__(self, "centerline", pts)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise ValueError("centerline needs at least 2 three-dimensional points")
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) <= 0):
            raise ValueError("centerline segments must have positive length")
        if not self.diameter_mm > 0:
            raise ValueError("diameter_mm must be > 0")
        if self.wall_thickness_mm < 0:
            raise ValueError("wall_thickness_mm must be >= 0")

    @property
    def radius_mm(self) -> float:
        return self.diameter_mm / 2.0

    def midpoint(self) -> np.ndarray:
        """Point halfway along the centerline by arc length."""
        seg = np.diff(self.centerline, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        half = cum[-1] / 2.0
        i = min(int(np.searchsorted(cum, half, side="right")) - 1, len(seg) - 1)
        return self.centerline[i] + seg[i] * ((half - cum[i]) / lengths[i])

    def distance(self, p) -> float:
        """Distance from a point to the centerline polyline."""
        return float(np.sqrt(_point_polyline_sq(np.asarray(p, dtype=float), self.centerline)))

    def min_distance_to_segment(self, p0, p1) -> float:
        a, b = self.centerline[:-1], self.centerline[1:]
        return float(np.sqrt(_segments_min_sq(np.asarray(p0, float), np.asarray(p1, float), a, b)))


def _point_polyline_sq(p, pts):
    a, b = pts[:-1], pts[1:]
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    d = a + ab * t[:, None] - p
    return float(np.min(np.einsum("ij,ij->i", d, d)))


def _segments_min_sq(p0, p1, a, b):
    """Smallest squared distance between segment p0-p1 and segments a[i]-b[i]."""
    d1 = p1 - p0
    d2 = b - a
    r = p0 - a
    aa = float(d1 @ d1)
    ee = np.einsum("ij,ij->i", d2, d2)
    ff = np.einsum("ij,ij->i", d2, r)
    if aa <= 1e-18:
        t = np.clip(ff / ee, 0.0, 1.0)
        d = p0 - (a + d2 * t[:, None])
        return float(np.min(np.einsum("ij,ij->i", d, d)))
    c = r @ d1
    bb = d2 @ d1
    denom = aa * ee - bb * bb
    s = np.where(denom > 1e-18, np.clip((bb * ff - c * ee) / np.where(denom > 1e-18, denom, 1.0), 0.0, 1.0), 0.0)
    t = (bb * s + ff) / ee
    # re-clamp t and recompute s where t left [0, 1]
    lo = t < 0.0
    hi = t > 1.0
    t = np.clip(t, 0.0, 1.0)
    s = np.where(lo, np.clip(-c / aa, 0.0, 1.0), s)
    s = np.where(hi, np.clip((bb - c) / aa, 0.0, 1.0), s)
    d = (p0 + np.outer(s, d1)) - (a + d2 * t[:, None])
    return float(np.min(np.einsum("ij,ij->i", d, d)))


def _points_polyline_sq(p, pts):
    """Squared distance from each row of p (m, 3) to a polyline."""
    a, b = pts[:-1], pts[1:]
    ab = b - a
    ap = p[:, None, :] - a[None]
    t = np.clip(np.einsum("msk,sk->ms", ap, ab) / np.einsum("sk,sk->s", ab, ab), 0.0, 1.0)
    d = ap - ab[None] * t[..., None]
    return np.min(np.einsum("msk,msk->ms", d, d), axis=1)


def _segment_batch_min_sq(p0, p1, a, b):
    """Squared distance from each segment p0[i]-p1[i] to the nearest of a[j]-b[j]."""
    d1 = (p1 - p0)[:, None, :]
    d2 = (b - a)[None]
    r = p0[:, None, :] - a[None]
    dot = lambda x, y: np.sum(x * y, axis=-1)
    aa, ee, ff, c, bb = np.broadcast_arrays(dot(d1, d1), dot(d2, d2), dot(d2, r), dot(r, d1), dot(d2, d1))
    denom = aa * ee - bb * bb
    ok = denom > 1e-18
    s = np.where(ok, np.clip((bb * ff - c * ee) / np.where(ok, denom, 1.0), 0.0, 1.0), 0.0)
    t = (bb * s + ff) / ee
    safe_aa = np.where(aa > 1e-18, aa, 1.0)
    s = np.where(t < 0.0, np.clip(-c / safe_aa, 0.0, 1.0), s)
    s = np.where(t > 1.0, np.clip((bb - c) / safe_aa, 0.0, 1.0), s)
    s = np.where(aa > 1e-18, s, 0.0)
    t = np.clip(np.where(aa > 1e-18, t, ff / ee), 0.0, 1.0)
    d = (p0[:, None, :] + d1 * s[..., None]) - (a[None] + d2 * t[..., None])
    return np.min(np.einsum("msk,msk->ms", d, d), axis=1)


@dataclass(frozen=True)
class TissueBlock:
    extent_min: np.ndarray
    extent_max: np.ndarray
    skin_depth_to_vessel_mm: float
    stiffness_K: np.ndarray
    vessels: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("extent_min", "extent_max", "stiffness_K"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        object.__setattr__(self, "vessels", tuple(self.vessels))
        k = self.stiffness_K
        if k.shape != (3, 3) or np.max(np.abs(k - k.T)) > 1e-12:
            raise ValueError("stiffness_K must be a symmetric 3x3 matrix")
        try:
            np.linalg.cholesky(k)
        except np.linalg.LinAlgError as exc:
            raise ValueError("stiffness_K must be positive-definite") from exc
        for v in self.vessels:
            if not (np.all(v.centerline >= self.extent_min) and np.all(v.centerline <= self.extent_max)):
                raise ValueError("vessel centerline leaves the block extent")

    @property
    def skin_z(self) -> float:
        return float(self.extent_max[2])

    def contains(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.extent_min) and np.all(p <= self.extent_max))


@dataclass(frozen=True)
class CoarseLocalization:
    approx_position: np.ndarray
    lateral_sigma_mm: float

    def __post_init__(self):
        if self.lateral_sigma_mm < 0:
            raise ValueError("lateral_sigma_mm must be >= 0")


@dataclass(frozen=True)
class ScenarioParams:
    """Scenario knobs (the ``scenario`` config section)."""

    phantom_diameter_mm: float = 4.0
    phantom_depth_mm: float = 3.0
    # "near_wall": depth is skin-to-near-wall; "centerline": skin-to-axis
    depth_reference: str = "near_wall"
    phantom_stiffness_n_per_mm: float = 0.5
    rat_diameter_mean_mm: float = 0.7
    rat_diameter_sd_mm: float = 0.2
    rat_diameter_min_mm: float = 0.3
    rat_diameter_max_mm: float = 1.2
    rat_depth_min_mm: float = 1.0
    rat_depth_max_mm: float = 3.0
    rat_max_sagitta_mm: float = 0.5
    rat_lateral_jitter_mm: float = 2.0
    rat_stiffness_n_per_mm: float = 4.0
    fixed_diameter_mm: float | None = None
    wall_thickness_mm: float = 0.05
    nir_sigma_mm: float = 1.0


def _block_extent(origin, half_x=30.0, half_y=15.0, depth=20.0):
    lo = origin + np.array([-half_x, -half_y, -depth])
    hi = origin + np.array([half_x, half_y, 0.0])
    return lo, hi


def make_phantom_scenario(params: ScenarioParams = ScenarioParams()) -> TissueBlock:
    """Gel phantom: one straight 4 mm channel 3 mm under the surface."""
    d = params.phantom_diameter_mm
    depth = params.phantom_depth_mm
    axis_depth = depth + d / 2.0 if params.depth_reference == "near_wall" else depth
    o = WORKSPACE_ORIGIN
    lo, hi = _block_extent(o)
    centre = o + np.array([0.0, 0.0, -axis_depth])
    line = np.array([centre - 29.0 * VESSEL_AXIS, centre + 29.0 * VESSEL_AXIS])
    return TissueBlock(
        extent_min=lo,
        extent_max=hi,
        skin_depth_to_vessel_mm=axis_depth - d / 2.0,
        stiffness_K=params.phantom_stiffness_n_per_mm * np.eye(3),
        vessels=(Vessel(line, d, params.wall_thickness_mm),),
    )


def draw_rat_diameter(rng: np.random.Generator, params: ScenarioParams = ScenarioParams()) -> float:
    """Truncated normal by rejection."""
    while True:
        d = rng.normal(params.rat_diameter_mean_mm, params.rat_diameter_sd_mm)
        if params.rat_diameter_min_mm <= d <= params.rat_diameter_max_mm:
            return float(d)


def make_rat_tail_scenario(rng_seed: int, params: ScenarioParams = ScenarioParams()) -> TissueBlock:
    """Tail-vein block: submillimetre vessel with a slight downward sag."""
    rng = stream(rng_seed, Stream.SCENARIO)
    d = draw_rat_diameter(rng, params)
    if params.fixed_diameter_mm is not None:
        d = float(params.fixed_diameter_mm)
    near_wall = rng.uniform(params.rat_depth_min_mm, params.rat_depth_max_mm)
    sag = rng.uniform(0.0, params.rat_max_sagitta_mm)
    dy = rng.uniform(-params.rat_lateral_jitter_mm, params.rat_lateral_jitter_mm)

    o = WORKSPACE_ORIGIN
    lo, hi = _block_extent(o)
    half = 29.0
    xs = np.linspace(-half, half, 21)
    # circular arc, lowest at the middle (the imaging station), ends `sag` higher
    if sag > 0:
        rad = (half * half + sag * sag) / (2.0 * sag)
        dz = sag - (np.sqrt(rad * rad - xs * xs) - (rad - sag))
    else:
        dz = np.zeros_like(xs)
    axis_z = -(near_wall + d / 2.0)
    pts = np.column_stack([o[0] + xs, np.full_like(xs, o[1] + dy), o[2] + axis_z + dz])
    return TissueBlock(
        extent_min=lo,
        extent_max=hi,
        skin_depth_to_vessel_mm=float(near_wall),
        stiffness_K=params.rat_stiffness_n_per_mm * np.eye(3),
        vessels=(Vessel(pts, d, params.wall_thickness_mm),),
    )


def coarse_localize(block: TissueBlock, rng: np.random.Generator, sigma_mm: float = 1.0) -> CoarseLocalization:
    """NIR stand-in: vessel midpoint on the skin plus horizontal Gaussian noise."""
    if not block.vessels:
        raise NoVesselFound("tissue block has no vessels")
    mid = block.vessels[0].midpoint()
    noise = rng.normal(0.0, 1.0, size=2) * sigma_mm
    pos = np.array([mid[0] + noise[0], mid[1] + noise[1], block.skin_z])
    return CoarseLocalization(pos, sigma_mm)


@dataclass(frozen=True)
class Section:
    """Ellipse where a vessel cuts a plane, in that plane's (x, y) coords."""

    center_2d: np.ndarray
    diameter_mm: float
    major_mm: float
    angle_rad: float
    vessel_index: int

    def __iter__(self):
        yield self.center_2d
        yield self.diameter_mm


def cross_section(block: TissueBlock, plane_pose: RigidTransform, offset=None) -> list[Section]:
    """Vessel/plane intersections. The plane is the pose's local z = 0 plane.

    ``offset`` rigidly displaces all vessels (tissue deformation).
    """
    r = plane_pose.rotation
    o = plane_pose.translation
    n = r[:, 2]
    shift = np.zeros(3) if offset is None else np.asarray(offset, dtype=float)
    out = []
    for idx, v in enumerate(block.vessels):
        pts = v.centerline + shift
        s = (pts - o) @ n
        for i in range(len(pts) - 1):
            if s[i] == 0.0 and s[i + 1] == 0.0:
                continue
            if (s[i] > 0) == (s[i + 1] > 0) and s[i] != 0.0 and s[i + 1] != 0.0:
                continue
            seg = pts[i + 1] - pts[i]
            t = s[i] / (s[i] - s[i + 1])
            p = pts[i] + t * seg
            if not block.contains(p - shift):
                continue
            a = seg / np.linalg.norm(seg)
            cos_t = abs(float(a @ n))
            if cos_t < 1e-9:
                continue
            local = r.T @ (p - o)
            in_plane = r.T @ (a - (a @ n) * n)
            angle = math.atan2(in_plane[1], in_plane[0]) if np.linalg.norm(in_plane[:2]) > 1e-12 else 0.0
            out.append(Section(local[:2], v.diameter_mm, v.diameter_mm / cos_t, angle, idx))
            break
    return out


class TipState(enum.Enum):
    OUTSIDE = "outside"
    IN_TISSUE = "in_tissue"
    IN_LUMEN = "in_lumen"
    TRANSFIXED = "transfixed"


@dataclass(frozen=True)
class TipStatus:
    state: TipState
    vessel_index: int | None = None


def tip_state(block: TissueBlock, tip_position, path_start=None, offset=None) -> TipStatus:
    """Classify the needle tip against the ground truth.

    ``path_start`` is where the straight path leading to the tip began; a
    path that crossed a lumen but left the tip outside it is transfixion.
    """
    tip = np.asarray(tip_position, dtype=float)
    if offset is not None:
        tip = tip - np.asarray(offset, dtype=float)
    for idx, v in enumerate(block.vessels):
        if _point_polyline_sq(tip, v.centerline) < v.radius_mm**2:
            return TipStatus(TipState.IN_LUMEN, idx)
    if path_start is not None:
        start = np.asarray(path_start, dtype=float)
        if offset is not None:
            start = start - np.asarray(offset, dtype=float)
        for idx, v in enumerate(block.vessels):
            if _segments_min_sq(start, tip, v.centerline[:-1], v.centerline[1:]) < v.radius_mm**2:
                return TipStatus(TipState.TRANSFIXED, idx)
    if block.contains(tip):
        return TipStatus(TipState.IN_TISSUE)
    return TipStatus(TipState.OUTSIDE)


STATE_CODES = (TipState.OUTSIDE, TipState.IN_TISSUE, TipState.IN_LUMEN, TipState.TRANSFIXED)


def classify_path(block: TissueBlock, tips, starts, offsets=None) -> np.ndarray:
    """Vectorized ``tip_state`` for many ticks.

    Row i classifies tip ``tips[i]`` reached along ``starts[i] -> tips[i]``
    with the vessels shifted by ``offsets[i]``. Returns indices into
    ``STATE_CODES``.
    """
    tips = np.asarray(tips, dtype=float).reshape(-1, 3)
    starts = np.asarray(starts, dtype=float).reshape(-1, 3)
    if offsets is not None:
        off = np.asarray(offsets, dtype=float).reshape(-1, 3)
        tips = tips - off
        starts = starts - off
    inside = np.all((tips >= block.extent_min) & (tips <= block.extent_max), axis=1)
    codes = np.where(inside, 1, 0)
    lumen = np.zeros(len(tips), dtype=bool)
    crossed = np.zeros(len(tips), dtype=bool)
    for v in block.vessels:
        r2 = v.radius_mm**2
        lumen |= _points_polyline_sq(tips, v.centerline) < r2
        crossed |= _segment_batch_min_sq(starts, tips, v.centerline[:-1], v.centerline[1:]) < r2
    codes = np.where(crossed, 3, codes)
    return np.where(lumen, 2, codes)

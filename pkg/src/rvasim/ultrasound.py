"""Synthetic short-axis B-mode frames and the detectors that read them.

Image formation, per pixel:

    echo amplitude (tissue 1, lumen -20 dB, wall/skin hyperechoic)
    x Rayleigh speckle (complex Gaussian field smoothed to the grain size)
    -> log compression, gain sets the background level, dynamic range the
       dB-to-grey slope
    -> grey-map gamma, unsharp-mask passes (enhancement level)
    -> temporal blend with the previous frame (frame correlation)

Frames are float arrays in [0, 255]; they become 8 bit only on export.
Plane coordinates: x = lateral (columns), y = depth (rows), both in mm
with pixel index i at i * mm_per_px.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import NoIntersection, NoVesselDetected
from .kinematics import RigidTransform
from .phantom import TissueBlock, cross_section

SPEED_OF_SOUND_MM_US = 1.54
LUMEN_AMPLITUDE = 0.1
WALL_AMPLITUDE = 3.0
SKIN_AMPLITUDE = 2.0
GEL_AMPLITUDE = 0.01
# mean of 20 log10 R for unit-power Rayleigh R (Euler gamma * 10 log10 e)
RAYLEIGH_LOG_MEAN_DB = -2.5068
NEEDLE_SLAB_MM = 0.5
NEEDLE_SIGMA_PX = 2.0
NEEDLE_OVERDRIVE = 1.25
# the bright 1 px wall blurs into the lumen edge and shrinks the dark blob
WALL_BLUR_PX = 1.0


@dataclass(frozen=True)
class UsConfig:
    gain_db: float = 80.0
    depth_cm: float = 1.6
    dynamic_range_db: float = 80.0
    frequency_mhz: float = 14.2
    probe_frequency_mhz: float = 12.4
    enhancement_level: int = 3
    grayscale_map: int = 14
    frame_correlation: int = 2
    resolution_mm_per_px: float = 0.1
    width_mm: float = 12.8
    # multiplies the log-domain speckle spread; variance scales with its square
    speckle_gain: float = 1.0

    def __post_init__(self):
        for name in ("gain_db", "depth_cm", "dynamic_range_db", "frequency_mhz", "probe_frequency_mhz",
                     "resolution_mm_per_px", "width_mm", "speckle_gain"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("enhancement_level", "grayscale_map", "frame_correlation"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        rows = self.depth_cm * 10.0 / self.resolution_mm_per_px
        if abs(rows - round(rows)) > 1e-6:
            raise ValueError("depth_cm * 10 / resolution_mm_per_px must be a whole number of rows")

    @property
    def shape(self) -> tuple[int, int]:
        px = self.resolution_mm_per_px
        return int(round(self.depth_cm * 10.0 / px)), int(round(self.width_mm / px))


@dataclass(frozen=True)
class UltrasoundFrame:
    pixels: np.ndarray
    origin: RigidTransform
    mm_per_px: float
    frame_index: int = 0

    def __post_init__(self):
        if not self.mm_per_px > 0:
            raise ValueError("mm_per_px must be > 0")
        px = np.array(self.pixels, dtype=float)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    def to_plane(self, p) -> np.ndarray:
        """World point -> (x, y, elevation) in plane coordinates."""
        return self.origin.inverse().apply(p)

    def to_world(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return self.origin.apply(np.array([xy[0], xy[1], 0.0]))


@dataclass(frozen=True)
class Detection:
    center_px: np.ndarray
    center_mm: np.ndarray
    diameter_mm: float
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


def image_plane_pose(probe_pose: RigidTransform, cfg: UsConfig) -> RigidTransform:
    """Image-plane frame for a probe pose.

    Probe frame: x along the vessel (plane normal), y lateral, z into the
    tissue. The image origin is the left end of the probe face.
    """
    r = probe_pose.rotation
    rot = np.column_stack([r[:, 1], r[:, 2], r[:, 0]])
    origin = probe_pose.translation - r[:, 1] * (cfg.width_mm / 2.0)
    return RigidTransform(rot, origin)


@lru_cache(maxsize=16)
def _speckle_norm(sigma_px: float) -> float:
    delta = np.zeros((15, 15))
    delta[7, 7] = 1.0
    k = ndimage.gaussian_filter(delta, sigma_px)
    return float(np.sqrt(2.0 * np.sum(k * k)))


def _speckle(shape, grain_px: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-power Rayleigh amplitude with correlated grain."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    if grain_px > 0:
        re = ndimage.gaussian_filter(re, grain_px)
        im = ndimage.gaussian_filter(im, grain_px)
        norm = _speckle_norm(grain_px)
    else:
        norm = math.sqrt(2.0)
    return np.hypot(re, im) / norm


def _coverage(sd_px, lo, hi):
    """Length of [sd - 0.5, sd + 0.5] that falls inside [lo, hi]."""
    return np.clip(np.minimum(sd_px + 0.5, hi) - np.maximum(sd_px - 0.5, lo), 0.0, 1.0)


def echo_amplitude(block: TissueBlock, plane: RigidTransform, cfg: UsConfig, offset=None) -> np.ndarray:
    """Noise-free echo amplitude map of the scene (rows = depth)."""
    rows, cols = cfg.shape
    px = cfg.resolution_mm_per_px
    u = np.arange(cols) * px
    v = np.arange(rows) * px
    uu, vv = np.meshgrid(u, v)
    world = (plane.translation[None, None, :] + uu[..., None] * plane.rotation[:, 0]
             + vv[..., None] * plane.rotation[:, 1])
    inside = np.all((world >= block.extent_min) & (world <= block.extent_max), axis=-1)
    if not inside.any():
        raise NoIntersection("imaging plane misses the tissue block")
    below_skin_px = (block.skin_z - world[..., 2]) / px
    amp = np.where(inside, 1.0, GEL_AMPLITUDE)
    amp = amp + SKIN_AMPLITUDE * _coverage(below_skin_px, 0.0, 1.0) * inside
    for sec in cross_section(block, plane, offset):
        c, s = math.cos(sec.angle_rad), math.sin(sec.angle_rad)
        du = uu - sec.center_2d[0]
        dv = vv - sec.center_2d[1]
        xm = du * c + dv * s
        ym = -du * s + dv * c
        rho = np.sqrt((xm / (sec.major_mm / 2.0)) ** 2 + (ym / (sec.diameter_mm / 2.0)) ** 2)
        sd_px = (rho - 1.0) * (sec.diameter_mm / 2.0) / px
        lumen = _coverage(sd_px, -np.inf, 0.0)
        wall_px = max(1.0, block.vessels[sec.vessel_index].wall_thickness_mm / px)
        wall = _coverage(sd_px, 0.0, wall_px)
        amp = amp * (1.0 - lumen) + LUMEN_AMPLITUDE * lumen + WALL_AMPLITUDE * wall
    return amp


def _display(amp: np.ndarray, speckle: np.ndarray, cfg: UsConfig) -> np.ndarray:
    log_amp = 20.0 * np.log10(np.maximum(amp, 1e-6))
    log_spk = 20.0 * np.log10(np.maximum(speckle, 1e-9)) - RAYLEIGH_LOG_MEAN_DB
    db = log_amp + cfg.speckle_gain * log_spk
    level = 255.0 * cfg.gain_db / 160.0
    img = np.clip(level + db * (255.0 / cfg.dynamic_range_db), 0.0, 255.0)
    gamma = cfg.grayscale_map / 14.0
    if gamma != 1.0:
        img = 255.0 * (img / 255.0) ** gamma
    for _ in range(int(cfg.enhancement_level)):
        img = np.clip(img + 0.15 * (img - ndimage.gaussian_filter(img, 1.0)), 0.0, 255.0)
    return img


def _grain_px(cfg: UsConfig) -> float:
    wavelength_mm = SPEED_OF_SOUND_MM_US / cfg.frequency_mhz
    return 0.5 * wavelength_mm / cfg.resolution_mm_per_px


def _blend(prev: np.ndarray, fresh: np.ndarray, c: int) -> np.ndarray:
    return (prev * (c - 1) + fresh) / c


def render_frame(
    block: TissueBlock,
    probe_pose: RigidTransform,
    cfg: UsConfig,
    rng: np.random.Generator,
    prev_frame: UltrasoundFrame | None = None,
    offset=None,
    frame_index: int = 0,
) -> UltrasoundFrame:
    """One B-mode frame from the probe at ``probe_pose``.

    With ``prev_frame`` the result is (prev * (c - 1) + fresh) / c for
    frame correlation c.
    """
    plane = image_plane_pose(probe_pose, cfg)
    amp = echo_amplitude(block, plane, cfg, offset)
    img = _display(amp, _speckle(amp.shape, _grain_px(cfg), rng), cfg)
    if prev_frame is not None:
        img = _blend(prev_frame.pixels, img, cfg.frame_correlation)
    return UltrasoundFrame(img, plane, cfg.resolution_mm_per_px, frame_index)


def render_settled(
    block: TissueBlock,
    probe_pose: RigidTransform,
    cfg: UsConfig,
    rng: np.random.Generator,
    offset=None,
    frame_index: int = 0,
) -> UltrasoundFrame:
    """A warm-up frame followed by one correlated frame from a still probe.

    Same pixels as two ``render_frame`` calls; the scene is evaluated once.
    """
    plane = image_plane_pose(probe_pose, cfg)
    amp = echo_amplitude(block, plane, cfg, offset)
    warm = _display(amp, _speckle(amp.shape, _grain_px(cfg), rng), cfg)
    warm = UltrasoundFrame(warm, plane, cfg.resolution_mm_per_px, frame_index).pixels
    img = _blend(warm, _display(amp, _speckle(amp.shape, _grain_px(cfg), rng), cfg), cfg.frame_correlation)
    return UltrasoundFrame(img, plane, cfg.resolution_mm_per_px, frame_index + 1)


def render_needle(frame: UltrasoundFrame, tip_in_plane=None) -> UltrasoundFrame:
    """Overlay the needle tip's bright spot.

    ``tip_in_plane`` is (x, y) or (x, y, elevation) in plane mm; the spot
    is drawn only within +/-0.5 mm of the imaging plane.
    """
    if tip_in_plane is None:
        return frame
    tip = np.asarray(tip_in_plane, dtype=float)
    if tip.shape[0] == 3 and abs(tip[2]) > NEEDLE_SLAB_MM:
        return frame
    rows, cols = frame.pixels.shape
    cx, cy = tip[0] / frame.mm_per_px, tip[1] / frame.mm_per_px
    yy, xx = np.mgrid[0:rows, 0:cols]
    # overdriven so the core saturates wherever the tip falls between pixels
    r2 = (xx - cx) ** 2 + (yy - cy) ** 2
    blob = np.minimum(255.0, 255.0 * NEEDLE_OVERDRIVE * np.exp(-r2 / (2.0 * NEEDLE_SIGMA_PX**2)))
    return replace(frame, pixels=np.maximum(frame.pixels, blob))


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float | None:
    """Otsu level of a sample; None when it has no spread."""
    values = np.asarray(values, dtype=float).ravel()
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-9:
        return None
    hist, edges = np.histogram(values, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m = np.cumsum(hist * centers)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m / w0
        mu1 = (m[-1] - m) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between = np.nan_to_num(between[:-1], nan=-1.0)
    return float(edges[int(np.argmax(between)) + 1])


@dataclass
class _Blob:
    label: int
    area: int
    centroid: np.ndarray
    circularity: float
    minor_diam_px: float
    mean_smooth: float
    mean_raw: float


def _dark_blobs(pixels: np.ndarray, min_diam_px: float = 3.0):
    """Dark connected regions below the Otsu level of the darker half.

    Returns (smoothed image, median, threshold, labels, blobs).
    """
    sm = ndimage.gaussian_filter(pixels, 1.0)
    med = float(np.median(sm))
    pool = sm[sm < med]
    thr = otsu_threshold(pool) if pool.size >= 2 else None
    if thr is None:
        return sm, med, None, None, []
    labels, n = ndimage.label(sm < thr)
    if n == 0:
        return sm, med, thr, labels, []
    lab = labels.ravel()
    keep = lab > 0
    lab = lab[keep]
    ys, xs = np.divmod(np.flatnonzero(keep), pixels.shape[1])
    xs = xs.astype(float)
    ys = ys.astype(float)
    smv = sm.ravel()[keep]
    raw = pixels.ravel()[keep]
    size = n + 1

    def acc(w):
        return np.bincount(lab, weights=w, minlength=size)

    area = np.bincount(lab, minlength=size).astype(float)
    ok = area >= math.pi * (min_diam_px / 2.0) ** 2
    # components touching the image border are cut off, not vessels
    border = np.zeros(size, dtype=bool)
    edge = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    border[np.unique(edge)] = True
    ok &= ~border
    ok[0] = False
    if not ok.any():
        return sm, med, thr, labels, []
    safe = np.maximum(area, 1.0)
    mx, my = acc(xs) / safe, acc(ys) / safe
    vxx = acc(xs * xs) / safe - mx * mx + 1.0 / 12.0
    vyy = acc(ys * ys) / safe - my * my + 1.0 / 12.0
    vxy = acc(xs * ys) / safe - mx * my
    tr, det = vxx + vyy, vxx * vyy - vxy * vxy
    disc = np.sqrt(np.maximum(tr * tr / 4.0 - det, 0.0))
    ev_hi = tr / 2.0 + disc
    ev_lo = np.maximum(tr / 2.0 - disc, 1e-12)
    w = np.maximum(thr - smv, 0.0) + 1e-9
    wsum = acc(w)
    wsum = np.where(wsum > 0, wsum, 1.0)
    cx, cy = acc(xs * w) / wsum, acc(ys * w) / wsum
    mean_sm = acc(smv) / safe
    mean_raw = acc(raw) / safe
    blobs = []
    for k in np.flatnonzero(ok):
        ratio = math.sqrt(ev_lo[k] / ev_hi[k])
        fill = area[k] / (4.0 * math.pi * math.sqrt(ev_lo[k] * ev_hi[k]))
        blobs.append(_Blob(
            int(k), int(area[k]), np.array([cx[k], cy[k]]),
            float(min(1.0, ratio * min(1.0, fill))),
            2.0 * math.sqrt(area[k] * ratio / math.pi),
            float(mean_sm[k]), float(mean_raw[k]),
        ))
    return sm, med, thr, labels, blobs


def quality_score(frame: UltrasoundFrame) -> float:
    """Contrast-to-noise ratio of the darkest blob against the background."""
    pixels = frame.pixels
    _, _, _, labels, blobs = _dark_blobs(pixels)
    if not blobs:
        return 0.0
    blob = min(blobs, key=lambda b: b.mean_raw)
    mask = ndimage.binary_dilation(labels == blob.label, iterations=3)
    bg = pixels[~mask]
    sd = float(bg.std())
    if sd <= 0:
        return 0.0
    return abs(blob.mean_raw - float(bg.mean())) / sd


def detect_vessel(frame: UltrasoundFrame, min_contrast: float = 4.0) -> Detection:
    """Most circular dark blob that stands out from the background.

    Raises NoVesselDetected if nothing qualifies.
    """
    sm, med, _, _, blobs = _dark_blobs(frame.pixels)
    if not blobs:
        raise NoVesselDetected("no dark region in frame")
    mad = float(np.median(np.abs(sm - med))) * 1.4826
    spread = max(mad, 1e-6)
    good = [b for b in blobs if (med - b.mean_smooth) / spread >= min_contrast]
    if not good:
        raise NoVesselDetected("no dark region with enough contrast")
    best = max(good, key=lambda b: (b.circularity, med - b.mean_smooth))
    contrast = min(1.0, max(0.0, (med - best.mean_smooth) / max(med, 1e-6)))
    px = frame.mm_per_px
    diameter = (best.minor_diam_px + WALL_BLUR_PX) * px
    return Detection(best.centroid, best.centroid * px, diameter, best.circularity * contrast)


def detect_needle_tip(frame: UltrasoundFrame, min_level: float = 250.0) -> Detection | None:
    """Brightest saturated local maximum, or None."""
    pixels = frame.pixels
    peaks = (pixels >= min_level) & (pixels == ndimage.maximum_filter(pixels, size=3))
    if not peaks.any():
        return None
    matched = ndimage.gaussian_filter(pixels, NEEDLE_SIGMA_PX)
    ys, xs = np.nonzero(peaks)
    order = np.lexsort((-matched[ys, xs], -pixels[ys, xs]))
    y, x = int(ys[order[0]]), int(xs[order[0]])
    # sub-pixel refinement on the matched-filter response
    y0, y1 = max(0, y - 2), min(pixels.shape[0], y + 3)
    x0, x1 = max(0, x - 2), min(pixels.shape[1], x + 3)
    win = np.clip(pixels[y0:y1, x0:x1] - 0.5 * pixels[y, x], 0.0, None)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    c = np.array([np.sum(xx * win), np.sum(yy * win)]) / np.sum(win)
    px = frame.mm_per_px
    return Detection(c, c * px, 2.0 * NEEDLE_SIGMA_PX * px, float(pixels[y, x] / 255.0))


def to_uint8(frame: UltrasoundFrame) -> np.ndarray:
    return np.clip(np.rint(frame.pixels), 0, 255).astype(np.uint8)


def write_pgm(frame: UltrasoundFrame, path) -> Path:
    """Binary P5 PGM with mm_per_px and frame_index in a comment line."""
    path = Path(path)
    data = to_uint8(frame)
    rows, cols = data.shape
    header = f"P5\n# mm_per_px={frame.mm_per_px!r} frame_index={frame.frame_index}\n{cols} {rows}\n255\n"
    path.write_bytes(header.encode("ascii") + data.tobytes())
    return path


def read_pgm(path) -> tuple[np.ndarray, dict]:
    """Pixels and parsed comment fields of a P5 file."""
    raw = Path(path).read_bytes()
    fields, tokens, pos = {}, [], 0
    while len(tokens) < 4:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            for item in line[1:].split():
                k, _, v = item.partition("=")
                fields[k] = v
            continue
        tokens.extend(line.split())
    if tokens[0] != "P5":
        raise ValueError("not a binary PGM")
    cols, rows = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(raw[pos:pos + rows * cols], dtype=np.uint8).reshape(rows, cols)
    return pixels, fields

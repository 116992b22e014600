"""Needle force synthesis, tissue deformation and the insertion gates."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import NotPositiveDefinite


@dataclass(frozen=True)
class ForceReading:
    """Force at ``t_s`` in the needle frame: (axial, lateral x, lateral y), N."""

    t_s: float
    force_n: np.ndarray

    def __post_init__(self):
        if self.t_s < 0:
            raise ValueError("t_s must be >= 0")
        object.__setattr__(self, "force_n", np.asarray(self.force_n, dtype=float).reshape(3))

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.force_n))


@dataclass(frozen=True)
class SafetyLimits:
    f_threshold_n: float = 2.0
    eps_deform_mm: float = 0.5
    # d(T1, T2) = |t1 - t2| + 100 * angle(R1^T R2): 0.1 mm plus 0.5 deg
    eps_cal: float = 0.1 + 100.0 * math.radians(0.5)
    eps_align: float = 1e-3
    q_threshold: float = 1.5

    def __post_init__(self):
        for name in ("f_threshold_n", "eps_deform_mm", "eps_cal", "eps_align", "q_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class ForceModel:
    """Constants of the synthetic insertion-force profile."""

    k_friction_n_per_mm: float = 0.02
    skin_pop_n: float = 0.8
    skin_pop_depth_mm: float = 0.6
    skin_drop_fraction: float = 0.5
    wall_pop_n: float = 0.15
    wall_tent_mm: float = 0.3
    noise_sigma_n: float = 0.02


@dataclass(frozen=True)
class PunctureEvents:
    """Path depths (mm past skin contact) of the skin and vessel-wall pops."""

    skin_depth_mm: float
    wall_depth_mm: float | None = None


def axial_force(depth_mm, events: PunctureEvents, model: ForceModel = ForceModel()):
    """Noise-free axial force at path depth(s); accepts scalars or arrays."""
    s = np.asarray(depth_mm, dtype=float)
    kf = model.k_friction_n_per_mm
    s_skin = events.skin_depth_mm
    ramp = kf * s + (model.skin_pop_n - kf * s_skin) * (s / s_skin) ** 2
    punctured = kf * (s - s_skin) + (1.0 - model.skin_drop_fraction) * model.skin_pop_n
    f = np.where(s <= s_skin, ramp, punctured)
    w = events.wall_depth_mm
    if w is not None:
        x = (s - (w - model.wall_tent_mm)) / model.wall_tent_mm
        f = f + np.where((x >= 0.0) & (s <= w), model.wall_pop_n * x * x, 0.0)
    f = np.where(s <= 0.0, 0.0, f)
    return float(f) if f.ndim == 0 else f


def synthesize_force(
    depth_mm: float,
    events: PunctureEvents,
    rng: np.random.Generator | None,
    model: ForceModel = ForceModel(),
    t_s: float = 0.0,
) -> ForceReading:
    """Sensor reading: piecewise axial profile plus Gaussian noise on all axes."""
    if depth_mm < 0:
        raise ValueError("depth_mm must be >= 0")
    f = np.array([axial_force(depth_mm, events, model), 0.0, 0.0])
    if rng is not None and model.noise_sigma_n > 0:
        f = f + rng.normal(0.0, model.noise_sigma_n, size=3)
    return ForceReading(t_s, f)


def factor_stiffness(k) -> tuple:
    k = np.asarray(k, dtype=float)
    if k.shape != (3, 3) or np.max(np.abs(k - k.T)) > 1e-12 * max(1.0, np.max(np.abs(k))):
        raise NotPositiveDefinite("stiffness matrix must be symmetric 3x3")
    try:
        return cho_factor(k, lower=True, check_finite=True)
    except LinAlgError as exc:
        raise NotPositiveDefinite("stiffness matrix is not positive-definite") from exc


def solve_deformation(factor: tuple, k, f) -> np.ndarray:
    """Solve K u = F from a Cholesky factor, with one refinement step.

    The refinement residual is accumulated in extended precision.
    """
    f = np.asarray(f, dtype=float)
    u = cho_solve(factor, f)
    k_ext = np.asarray(k, dtype=np.longdouble)
    r = f.astype(np.longdouble) - k_ext @ u.astype(np.longdouble)
    return u + cho_solve(factor, r.astype(float))


def estimate_deformation(k, f) -> np.ndarray:
    """Tissue displacement u (mm) with K u = F; K must be SPD."""
    return solve_deformation(factor_stiffness(k), k, f)


class Gate(enum.Enum):
    OK = "ok"
    DEFORM_EXCEEDED = "deform_exceeded"
    FORCE_EXCEEDED = "force_exceeded"


def check_gates(f: ForceReading, u, limits: SafetyLimits, peak_force_n: float = 0.0) -> Gate:
    """Force gate first (on the running peak), then deformation."""
    if max(f.magnitude, peak_force_n) > limits.f_threshold_n:
        return Gate.FORCE_EXCEEDED
    if float(np.linalg.norm(u)) > limits.eps_deform_mm:
        return Gate.DEFORM_EXCEEDED
    return Gate.OK

"""Run configuration: dataclasses for every section and a strict JSON loader.

Sections: ``chain``, ``scenario``, ``us``, ``safety`` (limits, retry
budgets, speeds), ``force``, ``noise`` and ``trials``. Absent keys take
their defaults; unknown keys and out-of-bound values are rejected with
the dotted key path.
"""

from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError
from .kinematics import KinematicChain, chain_from_dict, default_chain
from .phantom import ScenarioParams
from .safety import ForceModel, SafetyLimits
from .ultrasound import UsConfig


@dataclass(frozen=True)
class ProcedureConfig:
    max_quality_retries: int = 5
    max_insertion_retries: int = 1
    max_align_iterations: int = 10
    max_reaims: int = 1
    insertion_speed_mm_s: float = 2.0
    dt_s: float = 0.01
    pitch_deg: float = 20.0
    # overshoot past the aim point, as a fraction of the detected diameter
    overshoot_fraction: float = 0.3
    jitter_step_mm: float = 1.0

    def __post_init__(self):
        for name in ("max_quality_retries", "max_insertion_retries", "max_reaims"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_align_iterations < 1:
            raise ValueError("max_align_iterations must be >= 1")
        for name in ("insertion_speed_mm_s", "dt_s", "jitter_step_mm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 < self.pitch_deg < 60.0:
            raise ValueError("pitch_deg must lie in (0, 60)")
        if self.overshoot_fraction < 0:
            raise ValueError("overshoot_fraction must be >= 0")


@dataclass(frozen=True)
class NoiseConfig:
    """Sensor and actuator noise. Repeatability values are 3-sigma bounds."""

    calibration_sigma_mm: float = 0.02
    calibration_sigma_deg: float = 0.05
    calibration_bias_mm: tuple = (0.0, 0.0, 0.0)
    arm_repeatability_mm: float = 0.05
    ee_repeatability_mm: float = 0.01
    detection_noise_mm: float = 0.0

    def __post_init__(self):
        for name in ("calibration_sigma_mm", "calibration_sigma_deg", "arm_repeatability_mm",
                     "ee_repeatability_mm", "detection_noise_mm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        bias = tuple(float(v) for v in self.calibration_bias_mm)
        if len(bias) != 3 or not all(math.isfinite(v) for v in bias):
            raise ValueError("calibration_bias_mm must be three finite numbers")
        object.__setattr__(self, "calibration_bias_mm", bias)


@dataclass(frozen=True)
class TrialsConfig:
    scenario: str = "phantom"
    n: int = 10
    base_seed: int = 0
    out_dir: str | None = None
    log_name: str = "trials.jsonl"

    def __post_init__(self):
        if self.scenario not in ("phantom", "rat"):
            raise ValueError("scenario must be 'phantom' or 'rat'")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be >= 0")
        if not self.log_name:
            raise ValueError("log_name must be non-empty")


@dataclass(frozen=True)
class RunConfig:
    chain: KinematicChain = field(default_factory=default_chain)
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    us: UsConfig = field(default_factory=UsConfig)
    safety: SafetyLimits = field(default_factory=SafetyLimits)
    procedure: ProcedureConfig = field(default_factory=ProcedureConfig)
    force: ForceModel = field(default_factory=ForceModel)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    trials: TrialsConfig = field(default_factory=TrialsConfig)

    def to_dict(self) -> dict:
        safety = dataclasses.asdict(self.safety)
        safety.update(dataclasses.asdict(self.procedure))
        noise = dataclasses.asdict(self.noise)
        noise["calibration_bias_mm"] = list(self.noise.calibration_bias_mm)
        return {
            "chain": self.chain.to_dict(),
            "scenario": dataclasses.asdict(self.scenario),
            "us": dataclasses.asdict(self.us),
            "safety": safety,
            "force": dataclasses.asdict(self.force),
            "noise": noise,
            "trials": dataclasses.asdict(self.trials),
        }

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

    def noise_free(self) -> RunConfig:
        """Same run with every sensor and actuator noise source zeroed.

        Speckle stays: it is how the image forms, not a sensor error.
        """
        return dataclasses.replace(
            self,
            scenario=dataclasses.replace(self.scenario, nir_sigma_mm=0.0),
            force=dataclasses.replace(self.force, noise_sigma_n=0.0),
            noise=NoiseConfig(0.0, 0.0, (0.0, 0.0, 0.0), 0.0, 0.0, 0.0),
        )


_SECTIONS = {
    "scenario": ScenarioParams,
    "us": UsConfig,
    "force": ForceModel,
    "noise": NoiseConfig,
    "trials": TrialsConfig,
}
_CHAIN_KEYS = ("joints", "q_home", "base", "ee_mount", "tool", "probe_mount")


def _check_type(key: str, value, hint):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None and type(None) in args:
            return value
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
        value = float(value) if ok else value
    elif hint is str:
        ok = isinstance(value, str)
    elif hint is tuple:
        ok = isinstance(value, list)
        value = tuple(value) if ok else value
    else:
        ok = True
    if not ok:
        raise ValidationError(key, f"unexpected type {type(value).__name__}")
    return value


def _build(cls, data, prefix: str, extra: tuple = ()):
    if not isinstance(data, dict):
        raise ValidationError(prefix, "expected an object")
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    kwargs = {}
    for key, value in data.items():
        if key in extra:
            continue
        if key not in names:
            raise ValidationError(f"{prefix}.{key}", "unknown key")
        kwargs[key] = _check_type(f"{prefix}.{key}", value, hints[key])
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        bad = next((n for n in sorted(names, key=len, reverse=True) if msg.startswith(n)), None)
        raise ValidationError(f"{prefix}.{bad}" if bad else prefix, msg) from exc


def _build_chain(data) -> KinematicChain:
    if not isinstance(data, dict):
        raise ValidationError("chain", "expected an object")
    for key in data:
        if key not in _CHAIN_KEYS:
            raise ValidationError(f"chain.{key}", "unknown key")
    merged = default_chain().to_dict()
    merged.update(data)
    try:
        return chain_from_dict(merged)
    except Exception as exc:  # malformed joints or transforms
        bad = next((k for k in data if k in str(exc)), None)
        raise ValidationError(f"chain.{bad}" if bad else "chain", str(exc)) from exc


def config_from_dict(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ValidationError("<root>", "config must be a JSON object")
    for key in data:
        if key not in _SECTIONS and key not in ("chain", "safety"):
            raise ValidationError(key, "unknown key")
    built = {name: _build(cls, data.get(name, {}), name) for name, cls in _SECTIONS.items()}
    safety = data.get("safety", {})
    if not isinstance(safety, dict):
        raise ValidationError("safety", "expected an object")
    limit_keys = tuple(f.name for f in dataclasses.fields(SafetyLimits))
    proc_keys = tuple(f.name for f in dataclasses.fields(ProcedureConfig))
    limits = _build(SafetyLimits, safety, "safety", extra=proc_keys)
    procedure = _build(ProcedureConfig, safety, "safety", extra=limit_keys)
    chain = _build_chain(data["chain"]) if "chain" in data else default_chain()
    return RunConfig(chain=chain, safety=limits, procedure=procedure, **built)


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def parse_config_text(text: str) -> RunConfig:
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    except ValueError as exc:
        raise ParseError(str(exc), 0, 0) from exc
    return config_from_dict(data)


def parse_config(path) -> RunConfig:
    """Load a config file; raises OSError, ParseError or ValidationError."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


PACKAGED_CONFIGS = Path(__file__).parent / "configs"


def packaged_config(name: str) -> RunConfig:
    """One of the shipped configs, e.g. ``"rat_default"``."""
    return parse_config(PACKAGED_CONFIGS / f"{name}.json")

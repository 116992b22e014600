"""Monte Carlo batches: run trials, summarize success rates, persist, report."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import EmptyBatch, SchemaMismatch
from .procedure import build_scenario, execute_attempt, save_frames
from .records import AttemptLog, Outcome, Phase, TrialRecord, is_legal_trace
from .ultrasound import read_pgm

SCHEMA = "rva-trial/1"
MAX_ATTEMPTS = {"phantom": 1, "rat": 2}


@dataclass(frozen=True)
class BatchSummary:
    n_trials: int
    first_attempt_successes: int
    overall_successes: int
    first_attempt_rate: float
    overall_rate: float
    mean_success_diameter_mm: float | None
    min_success_diameter_mm: float | None

    def line(self) -> str:
        mean = "nan" if self.mean_success_diameter_mm is None else f"{self.mean_success_diameter_mm:.3f}"
        low = "nan" if self.min_success_diameter_mm is None else f"{self.min_success_diameter_mm:.3f}"
        return (
            f"n={self.n_trials} first_attempt_successes={self.first_attempt_successes} "
            f"first_attempt_rate={self.first_attempt_rate:.3f} overall_successes={self.overall_successes} "
            f"overall_rate={self.overall_rate:.3f} mean_success_diameter_mm={mean} "
            f"min_success_diameter_mm={low}"
        )


def run_trial(scenario: str, seed: int, config: RunConfig, trial_id: int = 0, out_dir=None) -> TrialRecord:
    """One subject. A rat gets a second attempt on the same vessel after a
    failed first, with fresh noise and the first calibration."""
    block = build_scenario(scenario, seed, config)
    keep = out_dir is not None
    logs = []
    calibration = None
    for attempt in range(MAX_ATTEMPTS[scenario]):
        res = execute_attempt(config, scenario, seed, attempt, block=block, calibration=calibration, keep_frames=keep)
        log = res.log
        if keep:
            frames = save_frames(res, out_dir, seed, attempt)
            log = AttemptLog(**{**_attempt_fields(log), "frames": frames})
        logs.append(log)
        calibration = res.calibration
        if log.outcome is Outcome.SUCCESS or calibration is None or not calibration.passed:
            break
    return TrialRecord(trial_id, seed, block.vessels[0].diameter_mm, block.skin_depth_to_vessel_mm, tuple(logs))


def _attempt_fields(log: AttemptLog) -> dict:
    return {f: getattr(log, f) for f in AttemptLog.__dataclass_fields__}


def _run_one(args):
    scenario, seed, config, trial_id, out_dir = args
    return run_trial(scenario, seed, config, trial_id, out_dir)


def run_batch(scenario: str, n: int, base_seed: int, config: RunConfig, out_dir=None, workers: int = 1):
    """Trials ``base_seed + i`` for i < n. Returns (records, summary).

    Trials share nothing, so ``workers > 1`` farms them out to processes
    without changing any record.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if scenario not in MAX_ATTEMPTS:
        raise ValueError(f"unknown scenario {scenario!r}")
    jobs = [(scenario, base_seed + i, config, i, out_dir) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    records.sort(key=lambda r: r.trial_id)
    return records, summarize(records)


def summarize(records) -> BatchSummary:
    records = list(records)
    if not records:
        raise EmptyBatch("no records to summarize")
    n = len(records)
    first = sum(1 for r in records if r.first_attempt_success)
    overall = sum(1 for r in records if r.blood_return)
    diams = [r.vessel_diameter_mm for r in records if r.blood_return]
    return BatchSummary(
        n_trials=n,
        first_attempt_successes=first,
        overall_successes=overall,
        first_attempt_rate=float(Fraction(first, n)),
        overall_rate=float(Fraction(overall, n)),
        mean_success_diameter_mm=math.fsum(diams) / len(diams) if diams else None,
        min_success_diameter_mm=min(diams) if diams else None,
    )


# ---------------------------------------------------------------------------
# log


def _record_to_json(r: TrialRecord) -> dict:
    attempts = []
    for a in r.attempts:
        d = asdict(a)
        d["outcome"] = a.outcome.value
        attempts.append(d)
    return {
        "trial_id": r.trial_id,
        "scenario_seed": r.scenario_seed,
        "vessel_diameter_mm": r.vessel_diameter_mm,
        "vessel_depth_mm": r.vessel_depth_mm,
        "outcome": r.outcome.value,
        "abort_reason": r.abort_reason,
        "blood_return": r.blood_return,
        "attempts_used": r.attempts_used,
        "max_force_n": r.max_force_n,
        "phase_trace": [list(p) for p in r.phase_trace],
        "frames": None if r.frames is None else list(r.frames),
        "attempts": attempts,
    }


def _record_from_json(d: dict) -> TrialRecord:
    attempts = tuple(AttemptLog(**a) for a in d["attempts"])
    return TrialRecord(d["trial_id"], d["scenario_seed"], d["vessel_diameter_mm"], d["vessel_depth_mm"], attempts)


def write_log(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"schema": SCHEMA})]
    lines += [json.dumps(_record_to_json(r), sort_keys=True, separators=(",", ":")) for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_log(path) -> list[TrialRecord]:
    """Records of a trial log; an empty file yields an empty list."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(None) from exc
    found = header.get("schema") if isinstance(header, dict) else None
    if found != SCHEMA:
        raise SchemaMismatch(found)
    return [_record_from_json(json.loads(ln)) for ln in lines[1:]]


# ---------------------------------------------------------------------------
# report

# marker strip value per outcome: bright success, darker for each failure kind
MARKER_LEVEL = {Outcome.SUCCESS: 255, Outcome.MISS: 128, Outcome.TRANSFIXED: 64, Outcome.ABORTED: 0}
MARKER_WIDTH = 12
GAP = 4


def summary_table(records) -> str:
    s = summarize(records)
    out = [s.line(), ""]
    out.append(f"{'trial':>5} {'seed':>6} {'diam_mm':>8} {'depth_mm':>8} {'outcome':<11} "
               f"{'reason':<24} {'attempts':>8} {'blood':>5} {'max_F_N':>8}")
    for r in records:
        out.append(
            f"{r.trial_id:>5d} {r.scenario_seed:>6d} {r.vessel_diameter_mm:>8.3f} {r.vessel_depth_mm:>8.3f} "
            f"{r.outcome.value:<11} {(r.abort_reason or '-'):<24} {r.attempts_used:>8d} "
            f"{('yes' if r.blood_return else 'no'):>5} {r.max_force_n:>8.3f}"
        )
    return "\n".join(out) + "\n"


def _mosaic(records, frame_root: Path) -> np.ndarray | None:
    tiles = {}
    shape = None
    for r in records:
        if not r.frames:
            continue
        for rel in r.frames:
            px, _ = read_pgm(frame_root / rel)
            tiles[rel] = px
            shape = px.shape
    if shape is None:
        return None
    h, w = shape
    row_h = h + GAP
    width = MARKER_WIDTH + GAP + 2 * (w + GAP)
    img = np.zeros((row_h * len(records), width), dtype=np.uint8)
    for i, r in enumerate(records):
        y = i * row_h
        img[y:y + h, :MARKER_WIDTH] = MARKER_LEVEL[r.outcome]
        for rel in r.frames or ():
            col = 1 if rel.endswith("_post.pgm") else 0
            x = MARKER_WIDTH + GAP + col * (w + GAP)
            img[y:y + h, x:x + w] = tiles[rel]
    return img


def render_report(records, out_dir, frame_root=None) -> list[Path]:
    """Write ``summary.txt`` and, when frames exist, ``mosaic.pgm``.

    The mosaic has one row per trial: outcome marker, pre-puncture frame,
    post-puncture frame. Frame paths are resolved against ``frame_root``
    (default ``out_dir``).
    """
    records = list(records)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame_root = out_dir if frame_root is None else Path(frame_root)
    table = out_dir / "summary.txt"
    table.write_text(summary_table(records), encoding="utf-8")
    written = [table]
    img = _mosaic(records, frame_root)
    if img is not None:
        mosaic = out_dir / "mosaic.pgm"
        h, w = img.shape
        mosaic.write_bytes(f"P5\n# rows=trials cols=marker,pre,post\n{w} {h}\n255\n".encode("ascii") + img.tobytes())
        written.append(mosaic)
    return written


def phase_order_ok(record: TrialRecord) -> bool:
    """Every attempt's trace is a legal walk; repeat attempts skip calibration."""
    for k, a in enumerate(record.attempts):
        first = Phase.CALIBRATION if k == 0 else Phase.INITIAL_POSITIONING
        if not is_legal_trace(a.phase_trace, first):
            return False
    return True

"""Subject file parsing and synthetic subject generation.

The normative on-disk schema is "canonical CSV": UTF-8, header row,
ISO-8601 timestamps, one row per record (or per grid step once a stream
has been materialized), empty cell meaning "absent". The ohio-xml reader
is a best-effort adapter that maps the restricted dataset's layout onto
the same EventStream; it is isolated here so nothing downstream depends
on that format.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyStreamError, ParseError
from .timeseries import (
    GRID_MINUTES,
    MINUTES_PER_DAY,
    BolusKind,
    EventStream,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "timestamp", "bgl", "basal", "bolus", "bolus_kind",
    "bw_carb_input", "meal_self_reported", "meal_carbs",
]

#: Epoch date used for generated subjects (any fixed midnight works).
SYNTHETIC_EPOCH = datetime(2026, 1, 5)


@dataclass(frozen=True)
class SubjectFile:
    path: str
    format: str  # "canonical-csv" | "ohio-xml"


def parse(file: SubjectFile, subject_id: str | None = None) -> EventStream:
    """Parse a subject data file into an EventStream."""
    if file.format == "canonical-csv":
        return parse_canonical_csv(file.path, subject_id=subject_id)
    if file.format == "ohio-xml":
        return parse_ohio_xml(file.path, subject_id=subject_id)
    raise ConfigError(f"unknown subject file format {file.format!r}")


def _parse_timestamp(text: str, where: str) -> datetime:
    for fmt in ("%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%d-%m-%Y %H:%M:%S"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise ParseError(f"{where}: unparseable timestamp {text!r}")


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise ParseError(f"{where}: bad number {text!r}") from exc
    if not math.isfinite(value):
        raise ParseError(f"{where}: non-finite number {text!r}")
    return value


def parse_canonical_csv(path: str | Path, subject_id: str | None = None) -> EventStream:
    path = Path(path)
    if subject_id is None:
        subject_id = path.stem
    bgl: list[tuple[datetime, float]] = []
    basal: list[tuple[datetime, float]] = []
    boluses: list[tuple[datetime, float, BolusKind, float]] = []
    meals: list[tuple[datetime, float, bool]] = []

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        unknown = [c for c in reader.fieldnames if c not in CSV_COLUMNS]
        if unknown:
            logger.warning("%s: ignoring unknown columns %s", path, unknown)
        missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            ts_text = (row.get("timestamp") or "").strip()
            if not ts_text:
                raise ParseError(f"{where}: missing timestamp")
            ts = _parse_timestamp(ts_text, where)
            if (row.get("bgl") or "").strip():
                bgl.append((ts, _parse_float(row["bgl"], where)))
            if (row.get("basal") or "").strip():
                basal.append((ts, _parse_float(row["basal"], where)))
            if (row.get("bolus") or "").strip():
                dose = _parse_float(row["bolus"], where)
                kind_text = (row.get("bolus_kind") or "regular").strip() or "regular"
                if kind_text not in ("regular", "dual"):
                    raise ParseError(f"{where}: unknown bolus_kind {kind_text!r}")
                kind = BolusKind.DUAL if kind_text == "dual" else BolusKind.REGULAR
                bw_text = (row.get("bw_carb_input") or "").strip()
                bw = _parse_float(bw_text, where) if bw_text else 0.0
                boluses.append((ts, dose, kind, bw))
            if (row.get("meal_carbs") or "").strip():
                carbs = _parse_float(row["meal_carbs"], where)
                reported_text = (row.get("meal_self_reported") or "true").strip().lower()
                if reported_text not in ("true", "false", ""):
                    raise ParseError(
                        f"{where}: meal_self_reported must be true/false, "
                        f"got {reported_text!r}")
                meals.append((ts, carbs, reported_text != "false"))

    if len(bgl) < 2:
        raise EmptyStreamError(f"{path}: no usable glucose records")
    return _records_to_stream(subject_id, bgl, basal, boluses, meals)


def _records_to_stream(subject_id, bgl, basal, boluses, meals) -> EventStream:
    all_ts = [ts for ts, *_ in bgl + basal + boluses + meals]
    epoch = min(all_ts).replace(hour=0, minute=0, second=0, microsecond=0)

    def minutes(ts: datetime) -> float:
        return (ts - epoch).total_seconds() / 60.0

    return EventStream.from_records(
        subject_id,
        bgl=[(minutes(ts), v) for ts, v in bgl],
        basal_changes=[(minutes(ts), v) for ts, v in basal],
        boluses=[(minutes(ts), d, k, b) for ts, d, k, b in boluses],
        meals=[(minutes(ts), c, r) for ts, c, r in meals],
        epoch=epoch,
    )


def parse_ohio_xml(path: str | Path, subject_id: str | None = None) -> EventStream:
    """Adapter for the OhioT1DM-style XML layout.

    Reads glucose_level, basal, temp_basal, bolus and meal elements; any
    other elements are ignored with a warning. Temp basal intervals
    override the programmed rate for their duration.
    """
    path = Path(path)
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ParseError(f"{path}: malformed XML: {exc}") from exc
    patient = root if root.tag == "patient" else root.find("patient")
    if patient is None:
        raise ParseError(f"{path}: no <patient> element")
    if subject_id is None:
        subject_id = patient.get("id") or path.stem

    def events(tag: str):
        section = patient.find(tag)
        return [] if section is None else section.findall("event")

    known = {"glucose_level", "basal", "temp_basal", "bolus", "meal"}
    extra = sorted({child.tag for child in patient} - known)
    if extra:
        logger.warning("%s: ignoring unknown sections %s", path, extra)

    bgl = []
    for ev in events("glucose_level"):
        ts = _parse_timestamp(ev.get("ts", ""), f"{path} glucose_level")
        bgl.append((ts, _parse_float(ev.get("value", ""), f"{path} glucose_level")))
    if len(bgl) < 2:
        raise EmptyStreamError(f"{path}: no usable glucose records")

    programmed = []
    for ev in events("basal"):
        ts = _parse_timestamp(ev.get("ts", ""), f"{path} basal")
        programmed.append((ts, _parse_float(ev.get("value", ""), f"{path} basal")))
    programmed.sort(key=lambda p: p[0])

    def programmed_rate_at(ts: datetime) -> float:
        rate = 0.0
        for when, value in programmed:
            if when <= ts:
                rate = value
            else:
                break
        return rate

    basal = list(programmed)
    for ev in events("temp_basal"):
        begin = _parse_timestamp(ev.get("ts_begin", ""), f"{path} temp_basal")
        end = _parse_timestamp(ev.get("ts_end", ""), f"{path} temp_basal")
        value = _parse_float(ev.get("value", ""), f"{path} temp_basal")
        basal.append((begin, value))
        basal.append((end, programmed_rate_at(end)))
    basal.sort(key=lambda p: p[0])

    boluses = []
    for ev in events("bolus"):
        ts = _parse_timestamp(ev.get("ts_begin") or ev.get("ts") or "",
                              f"{path} bolus")
        dose = _parse_float(ev.get("dose", ""), f"{path} bolus")
        kind_text = (ev.get("type") or "normal").lower()
        kind = BolusKind.DUAL if "dual" in kind_text or "square" in kind_text \
            else BolusKind.REGULAR
        bw_text = ev.get("bwz_carb_input") or ev.get("carb_input") or ""
        bw = _parse_float(bw_text, f"{path} bolus") if bw_text.strip() else 0.0
        boluses.append((ts, dose, kind, bw))

    meals = []
    for ev in events("meal"):
        ts = _parse_timestamp(ev.get("ts", ""), f"{path} meal")
        carbs = _parse_float(ev.get("carbs", ""), f"{path} meal")
        meals.append((ts, carbs, True))

    return _records_to_stream(subject_id, bgl, basal, boluses, meals)


def _fmt(value: float) -> str:
    # repr() is the shortest string that parses back to the same float,
    # which keeps write->parse->write byte-stable.
    return repr(float(value))


def write_canonical_csv(stream: EventStream, path: str | Path) -> None:
    """Materialize a stream as canonical CSV, one row per grid step.

    Interpolated BGL values are synthetic, so they are written as empty
    cells; re-running interpolation after parsing reproduces them.
    """
    if stream.epoch is None:
        raise ConfigError("stream has no epoch; cannot format timestamps")
    path = Path(path)
    ts = stream.timestamps()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i in range(len(stream)):
            when = stream.epoch + timedelta(minutes=int(ts[i]))
            bgl = ""
            if not np.isnan(stream.bgl[i]) and not stream.bgl_interpolated[i]:
                bgl = _fmt(stream.bgl[i])
            bolus = kind = bw = ""
            if stream.bolus[i] > 0:
                bolus = _fmt(stream.bolus[i])
                kind = "dual" if stream.bolus_kind[i] == BolusKind.DUAL else "regular"
                if stream.bw_carb_input[i] > 0:
                    bw = _fmt(stream.bw_carb_input[i])
            reported = carbs = ""
            if stream.meal[i] > 0:
                carbs = _fmt(stream.meal[i])
                reported = "true" if stream.meal_self_reported[i] else "false"
            writer.writerow([
                when.strftime("%Y-%m-%dT%H:%M:%S"), bgl, _fmt(stream.basal[i]),
                bolus, kind, bw, reported, carbs,
            ])


# -- synthetic subjects ------------------------------------------------------

#: Time constants of the meal / bolus step responses (minutes). A meal has
#: delivered ~95% of its total BGL rise after an hour; a bolus after ~90 min.
MEAL_TAU = 20.0
BOLUS_TAU = 30.0
BASE_BGL = 130.0
CORRECTION_THRESHOLD = 160.0
BGL_FLOOR, BGL_CEIL = 40.0, 400.0

#: (name, hour of day, carb multiplier, paired with a bolus)
MEAL_SLOTS = (
    ("breakfast", 7.5, 0.8, True),
    ("lunch", 12.5, 1.2, True),
    ("dinner", 18.5, 1.4, True),
    ("snack", 21.5, 0.5, False),
)


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the desk-scale stand-in subject generator.

    The jitter/missed-report fields deliberately corrupt the self-reported
    meal channel (the actual consumption stays anchored 10 minutes after
    the bolus) so the realignment step has something to fix; they default
    to 0, in which case generated meals are already bolus-aligned.
    """

    days: int = 40
    meals_per_day: float = 3.5
    carb_mean: float = 50.0
    carb_std: float = 12.0
    carb_ratio: float = 10.0
    insulin_sensitivity: float = 40.0
    basal: float = 1.0
    noise_std: float = 2.0
    seed: int = 0
    gap_prob: float = 0.0
    report_time_jitter_std: float = 0.0
    report_carb_error_std: float = 0.0
    missed_report_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.days < 1:
            raise ConfigError("days must be >= 1")
        for name in ("carb_mean", "carb_ratio", "insulin_sensitivity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("carb_std", "meals_per_day", "basal", "noise_std",
                     "gap_prob", "report_time_jitter_std",
                     "report_carb_error_std", "missed_report_prob"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**data)


def _step_response(length: int, start_step: int, magnitude: float,
                   tau: float) -> np.ndarray:
    """First-order response added to all grid steps at/after the event."""
    out = np.zeros(length)
    if start_step >= length:
        return out
    dt = GRID_MINUTES * np.arange(length - start_step)
    out[start_step:] = magnitude * (1.0 - np.exp(-dt / tau))
    return out


def generate_synthetic(cfg: SyntheticConfig,
                       subject_id: str | None = None) -> EventStream:
    """Generate a deterministic synthetic subject.

    Meals raise BGL by carbs*k over ~60 min and boluses lower it by
    dose*insulin_sensitivity over ~90 min, with k chosen so that a meal
    and its paired bolus (carbs/carb_ratio units, delivered 10 minutes
    earlier) cancel in the long run. Carb amounts follow a time-of-day
    pattern around carb_mean, and an afternoon correction bolus sized as
    (BGL-130)/sensitivity fires whenever BGL runs high, so bolus labels
    carry a glucose-dependent signal.
    """
    rng = np.random.default_rng(cfg.seed)
    if subject_id is None:
        subject_id = f"synth-{cfg.seed}"
    n_steps = cfg.days * MINUTES_PER_DAY // GRID_MINUTES
    k_carb = cfg.insulin_sensitivity / cfg.carb_ratio

    state = np.full(n_steps, BASE_BGL)

    def apply(step: int, magnitude: float, tau: float) -> None:
        state[:] += _step_response(n_steps, step, magnitude, tau)

    if cfg.meals_per_day >= len(MEAL_SLOTS) - 1:
        snack_prob = min(1.0, cfg.meals_per_day - (len(MEAL_SLOTS) - 1))
        main_prob = 1.0
    else:
        snack_prob = 0.0
        main_prob = cfg.meals_per_day / (len(MEAL_SLOTS) - 1)

    boluses: list[tuple[float, float, BolusKind, float]] = []
    meals: list[tuple[float, float, bool]] = []

    for day in range(cfg.days):
        base = day * MINUTES_PER_DAY
        for name, hour, factor, with_bolus in MEAL_SLOTS:
            prob = snack_prob if name == "snack" else main_prob
            take = rng.random() < prob
            jitter = float(np.clip(rng.normal(0.0, 20.0), -45.0, 45.0))
            carbs = max(5.0, rng.normal(cfg.carb_mean * factor, cfg.carb_std))
            if not take:
                continue
            eat_at = GRID_MINUTES * round((base + hour * 60 + jitter) / GRID_MINUTES)
            apply(eat_at // GRID_MINUTES, carbs * k_carb, MEAL_TAU)
            if with_bolus:
                dose = carbs / cfg.carb_ratio
                bolus_at = eat_at - 2 * GRID_MINUTES
                apply(bolus_at // GRID_MINUTES, -dose * cfg.insulin_sensitivity,
                      BOLUS_TAU)
                boluses.append((bolus_at, dose, BolusKind.REGULAR, carbs))
                report_at = float(eat_at)
                report_carbs = carbs
                if cfg.report_time_jitter_std > 0:
                    report_at += rng.normal(0.0, cfg.report_time_jitter_std)
                if cfg.report_carb_error_std > 0:
                    report_carbs = max(1.0, carbs + rng.normal(
                        0.0, cfg.report_carb_error_std))
                if rng.random() >= cfg.missed_report_prob:
                    meals.append((report_at, report_carbs, True))
            else:
                meals.append((float(eat_at), carbs, True))

        # afternoon hyperglycemia check: dose scales with how high BGL runs
        check_at = GRID_MINUTES * round((base + 15.5 * 60) / GRID_MINUTES)
        step = check_at // GRID_MINUTES
        if step < n_steps and state[step] > CORRECTION_THRESHOLD:
            dose = (state[step] - BASE_BGL) / cfg.insulin_sensitivity
            apply(step, -dose * cfg.insulin_sensitivity, BOLUS_TAU)
            boluses.append((float(check_at), dose, BolusKind.REGULAR, 0.0))

    observed = state + rng.normal(0.0, cfg.noise_std, size=n_steps) \
        if cfg.noise_std > 0 else state.copy()
    observed = np.clip(observed, BGL_FLOOR, BGL_CEIL)

    keep = np.ones(n_steps, dtype=bool)
    if cfg.gap_prob > 0:
        keep = rng.random(n_steps) >= cfg.gap_prob
        keep[0] = keep[-1] = True

    bgl = [(float(GRID_MINUTES * i), float(observed[i]))
           for i in range(n_steps) if keep[i]]
    return EventStream.from_records(
        subject_id, bgl, [(0.0, cfg.basal)], boluses, meals,
        epoch=SYNTHETIC_EPOCH)

"""Recommendation example extraction.

Each qualifying meal/bolus event at grid time e yields up to 13 examples,
one per horizon tau in {30, 35, ..., 90}: the "present" is t = e - 10,
the model sees 6 hours of history up to t, and the target is the BGL
observed at t + 10 + tau. Inertial examples additionally require that no
meal or bolus other than the label event (plus the paired meal, in the
bolus-with-carbs scenario) occurs inside (t, t + 10 + tau].
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import baselines
from .errors import ConfigError
from .preprocess import DaySplit, interpolation_filter, split
from .timeseries import GRID_MINUTES, BolusKind, EventStream

HORIZONS = tuple(range(30, 95, 5))
HISTORY_STEPS = 72
EVENT_OFFSET_STEPS = 2  # label event sits 10 minutes after t


class Scenario(str, Enum):
    CARBS_ALL = "carbs-all"
    CARBS_NO_BOLUS = "carbs-no-bolus"
    BOLUS_ALL = "bolus-all"
    BOLUS_WITH_CARBS = "bolus-with-carbs"

    @property
    def is_carb(self) -> bool:
        return self in (Scenario.CARBS_ALL, Scenario.CARBS_NO_BOLUS)

    @property
    def label_channel(self) -> str:
        return "carbs" if self.is_carb else "bolus"

    @property
    def unit(self) -> str:
        return "g" if self.is_carb else "u"


class ExampleClass(str, Enum):
    INERTIAL = "inertial"
    UNRESTRICTED = "unrestricted"


@dataclass
class RecommendationExample:
    """One training/evaluation instance, in natural units."""

    subject_id: str
    t: int
    tau: int
    label: float
    target_bgl: float
    tod_average: float
    planned_carbs: float | None
    inertial: bool
    label_event_added: bool
    history: np.ndarray  # (72, 4): bgl, carbs, bolus, basal
    future: np.ndarray   # ((10+tau)/5, 3): carbs, bolus, basal

    @property
    def event_time(self) -> int:
        return self.t + 10

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.subject_id, self.event_time, self.tau)


@dataclass
class ScenarioDataset:
    scenario: Scenario
    example_class: ExampleClass
    split: str
    examples: list[RecommendationExample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    def counts_by_horizon(self) -> dict[int, int]:
        counts = {tau: 0 for tau in HORIZONS}
        for ex in self.examples:
            counts[ex.tau] += 1
        return counts


def label_events(stream: EventStream, scenario: Scenario) -> list[tuple[int, float]]:
    """Indices and label values of the scenario's qualifying events."""
    out = []
    if scenario.is_carb:
        for i in np.flatnonzero(stream.meal > 0):
            if scenario is Scenario.CARBS_NO_BOLUS:
                j = i - EVENT_OFFSET_STEPS
                if j >= 0 and stream.bolus[j] > 0:
                    continue
            out.append((int(i), float(stream.meal[i])))
    else:
        for i in np.flatnonzero(stream.bolus > 0):
            if stream.bolus_kind[i] != BolusKind.REGULAR:
                continue  # dual boluses never serve as labels
            if scenario is Scenario.BOLUS_WITH_CARBS:
                j = i + EVENT_OFFSET_STEPS
                if j >= len(stream) or stream.meal[j] <= 0:
                    continue
            out.append((int(i), float(stream.bolus[i])))
    return out


def _window_has_other_events(stream: EventStream, scenario: Scenario,
                             e_idx: int, t_idx: int, target_idx: int) -> bool:
    for j in range(t_idx + 1, target_idx + 1):
        meal_here = stream.meal[j] > 0
        bolus_here = stream.bolus[j] > 0
        if j == e_idx:
            if scenario.is_carb:
                meal_here = False
            else:
                bolus_here = False
        if scenario is Scenario.BOLUS_WITH_CARBS and j == e_idx + EVENT_OFFSET_STEPS:
            meal_here = False
        if meal_here or bolus_here:
            return True
    return False


def extract(
    stream: EventStream,
    scenario: Scenario,
    example_class: ExampleClass,
    day_split: DaySplit | None = None,
) -> dict[str, ScenarioDataset]:
    """Build the scenario's datasets for all three splits.

    The stream must be pre-processed (realigned and interpolated). Each
    example is assigned to the split containing its label event and is
    dropped when its horizon would cross the split's end boundary, when
    the 6-hour history does not fit, or when the interpolation filter
    rejects it. The time-of-day average feature is computed from the
    training split's label events only.
    """
    if day_split is None:
        day_split = split(stream)
    ts = stream.timestamps()
    datasets = {name: ScenarioDataset(scenario, example_class, name)
                for name in ("train", "valid", "test")}

    events = label_events(stream, scenario)
    for e_idx, label in events:
        t_idx = e_idx - EVENT_OFFSET_STEPS
        if t_idx < HISTORY_STEPS - 1:
            continue
        split_name = day_split.of(int(ts[e_idx]))
        _, split_end = day_split.range(split_name)
        hist = np.column_stack([
            stream.bgl[t_idx - HISTORY_STEPS + 1:t_idx + 1],
            stream.meal[t_idx - HISTORY_STEPS + 1:t_idx + 1],
            stream.bolus[t_idx - HISTORY_STEPS + 1:t_idx + 1],
            stream.basal[t_idx - HISTORY_STEPS + 1:t_idx + 1],
        ])
        if np.isnan(hist[:, 0]).any():
            continue
        for tau in HORIZONS:
            target_idx = e_idx + tau // GRID_MINUTES
            if target_idx >= len(stream):
                continue  # horizon goes past the end of the data
            if int(ts[target_idx]) >= split_end:
                continue  # horizon crosses into a later split
            if np.isnan(stream.bgl[target_idx]):
                continue
            if not interpolation_filter(stream, int(ts[t_idx]), tau):
                continue
            inertial = not _window_has_other_events(
                stream, scenario, e_idx, t_idx, target_idx)
            if example_class is ExampleClass.INERTIAL and not inertial:
                continue
            future = np.column_stack([
                stream.meal[t_idx + 1:target_idx + 1],
                stream.bolus[t_idx + 1:target_idx + 1],
                stream.basal[t_idx + 1:target_idx + 1],
            ])
            planned = None
            if scenario is Scenario.BOLUS_WITH_CARBS:
                planned = float(stream.meal[e_idx + EVENT_OFFSET_STEPS])
            added = (not stream.meal_self_reported[e_idx]) if scenario.is_carb \
                else False
            datasets[split_name].examples.append(RecommendationExample(
                subject_id=stream.subject_id,
                t=int(ts[t_idx]),
                tau=tau,
                label=label,
                target_bgl=float(stream.bgl[target_idx]),
                tod_average=0.0,
                planned_carbs=planned,
                inertial=inertial,
                label_event_added=bool(added),
                history=hist,
                future=future,
            ))

    _attach_tod_averages(stream, scenario, day_split, datasets)
    return datasets


def train_label_events(stream: EventStream, scenario: Scenario,
                       day_split: DaySplit) -> list[tuple[float, int]]:
    """(value, timestamp) label events inside the training split."""
    lo, hi = day_split.range("train")
    ts = stream.timestamps()
    return [(float(v), int(ts[i]))
            for i, v in label_events(stream, scenario)
            if lo <= ts[i] < hi]


def _attach_tod_averages(stream, scenario, day_split, datasets) -> None:
    train_events = train_label_events(stream, scenario, day_split)
    if not train_events:
        return  # feature stays 0; downstream skips subjects without examples
    model = baselines.fit(train_events, kind="tod")
    for ds in datasets.values():
        for ex in ds.examples:
            ex.tod_average = baselines.predict_at(model, ex.event_time)


def event_statistics(stream: EventStream, scenario: Scenario) -> dict:
    """Count / min / max / median / mean / std of the scenario's labels."""
    values = np.array([v for _, v in label_events(stream, scenario)])
    if len(values) == 0:
        return {"count": 0, "min": None, "max": None, "median": None,
                "mean": None, "std": None}
    return {
        "count": int(len(values)),
        "min": float(values.min()),
        "max": float(values.max()),
        "median": float(np.median(values)),
        "mean": float(values.mean()),
        "std": float(values.std()),
    }


def dataset_stats(streams: list[EventStream]) -> dict:
    """Per-subject and pooled label statistics for all four scenarios."""
    out: dict = {s.value: {"subjects": {}, "total": None} for s in Scenario}
    for scenario in Scenario:
        pooled: list[float] = []
        for stream in streams:
            stats = event_statistics(stream, scenario)
            out[scenario.value]["subjects"][stream.subject_id] = stats
            pooled.extend(v for _, v in label_events(stream, scenario))
        values = np.array(pooled)
        out[scenario.value]["total"] = {
            "count": int(len(values)),
            "min": float(values.min()) if len(values) else None,
            "max": float(values.max()) if len(values) else None,
            "median": float(np.median(values)) if len(values) else None,
            "mean": float(values.mean()) if len(values) else None,
            "std": float(values.std()) if len(values) else None,
        }
    return out


def count_examples(datasets: dict[str, ScenarioDataset]) -> dict:
    """Tabulate example counts per horizon and split, plus totals."""
    table: dict = {"by_horizon": {}, "by_split": {}, "total": 0}
    for tau in HORIZONS:
        table["by_horizon"][tau] = {}
        for name, ds in datasets.items():
            table["by_horizon"][tau][name] = ds.counts_by_horizon()[tau]
        table["by_horizon"][tau]["total"] = sum(
            table["by_horizon"][tau][name] for name in datasets)
    for name, ds in datasets.items():
        table["by_split"][name] = len(ds)
    table["total"] = sum(table["by_split"].values())
    return table


def render_count_table(table: dict, title: str) -> str:
    lines = [title, f"{'Horizon':<10}{'Training':>10}{'Validation':>12}"
             f"{'Testing':>10}{'Total':>10}"]
    for tau, row in table["by_horizon"].items():
        lines.append(f"tau={tau:<6}{row.get('train', 0):>10}"
                     f"{row.get('valid', 0):>12}{row.get('test', 0):>10}"
                     f"{row['total']:>10}")
    s = table["by_split"]
    lines.append(f"{'All':<10}{s.get('train', 0):>10}{s.get('valid', 0):>12}"
                 f"{s.get('test', 0):>10}{table['total']:>10}")
    return "\n".join(lines)


# -- on-disk format ----------------------------------------------------------

_CSV_FIELDS = ["subject_id", "t", "tau", "label", "target_bgl", "tod_average",
               "planned_carbs", "inertial", "label_event_added",
               "history", "future"]


def write_examples(dataset: ScenarioDataset, path: str | Path) -> None:
    """One CSV record per example; the window tensors are JSON cells."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for ex in dataset.examples:
            writer.writerow({
                "subject_id": ex.subject_id,
                "t": ex.t,
                "tau": ex.tau,
                "label": repr(ex.label),
                "target_bgl": repr(ex.target_bgl),
                "tod_average": repr(ex.tod_average),
                "planned_carbs": "" if ex.planned_carbs is None
                                 else repr(ex.planned_carbs),
                "inertial": "true" if ex.inertial else "false",
                "label_event_added": "true" if ex.label_event_added else "false",
                "history": json.dumps(ex.history.tolist()),
                "future": json.dumps(ex.future.tolist()),
            })


def read_examples(path: str | Path, scenario: Scenario,
                  example_class: ExampleClass, split_name: str) -> ScenarioDataset:
    ds = ScenarioDataset(scenario, example_class, split_name)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ds.examples.append(RecommendationExample(
                subject_id=row["subject_id"],
                t=int(row["t"]),
                tau=int(row["tau"]),
                label=float(row["label"]),
                target_bgl=float(row["target_bgl"]),
                tod_average=float(row["tod_average"]),
                planned_carbs=float(row["planned_carbs"])
                              if row["planned_carbs"] else None,
                inertial=row["inertial"] == "true",
                label_event_added=row["label_event_added"] == "true",
                history=np.array(json.loads(row["history"])),
                future=np.array(json.loads(row["future"])),
            ))
    return ds

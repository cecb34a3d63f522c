"""Meal realignment, interpolation-quality filtering, and day splits.

Self-reported meal timestamps are unreliable relative to the pump's
bolus records, so every bolus that carries a carb input gets its meal
re-anchored to exactly 10 minutes after the bolus, with the carb amount
replaced by the value entered into the bolus calculator. Meals the
subject forgot to log are reconstructed from the same record.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SplitError
from .timeseries import (
    GRID_MINUTES,
    MINUTES_PER_DAY,
    EventStream,
    day_index,
)

#: A meal is matched to a bolus if it lies within this many minutes.
ASSOCIATION_RADIUS = 60
#: The re-anchored meal position relative to its bolus, in grid steps.
MEAL_OFFSET_STEPS = 10 // GRID_MINUTES


@dataclass(frozen=True)
class RealignmentAction:
    bolus_timestamp: int
    kind: str  # "shifted" | "added" | "unchanged"
    old_timestamp: int | None
    new_timestamp: int
    old_carbs: float
    new_carbs: float


@dataclass
class RealignmentReport:
    meals_shifted: int = 0
    meals_added: int = 0
    meals_unchanged: int = 0
    boluses_skipped_at_end: int = 0
    added_meal_flags: list[bool] = field(default_factory=list)
    actions: list[RealignmentAction] = field(default_factory=list)

    @property
    def total_meals(self) -> int:
        return self.meals_shifted + self.meals_added + self.meals_unchanged

    def to_dict(self) -> dict:
        return {
            "meals_shifted": self.meals_shifted,
            "meals_added": self.meals_added,
            "meals_unchanged": self.meals_unchanged,
            "boluses_skipped_at_end": self.boluses_skipped_at_end,
            "added_meal_flags": self.added_meal_flags,
            "actions": [vars(a) for a in self.actions],
        }


@dataclass
class _Meal:
    step: int
    carbs: float
    self_reported: bool
    added: bool
    claimed: bool = False


def realign_meals(stream: EventStream) -> tuple[EventStream, RealignmentReport]:
    """Anchor each carb-carrying bolus's meal to exactly bolus time + 10 min.

    Boluses are processed chronologically and each meal can be claimed by
    at most one bolus. For a given bolus the meal is selected as follows:
    a meal already sitting at +10 minutes is kept in place (this makes the
    operation idempotent); otherwise the closest unclaimed meal within
    +/-60 minutes is moved there, ties broken by carb count closest to the
    bolus calculator input, then by earlier timestamp. The chosen meal's
    carbs are replaced by the calculator input. With no meal in range, one
    is added and flagged. Meals never matched to a bolus are untouched.
    """
    meals = [
        _Meal(step=i, carbs=float(stream.meal[i]),
              self_reported=bool(stream.meal_self_reported[i]), added=False)
        for i in np.flatnonzero(stream.meal > 0)
    ]
    report = RealignmentReport()
    ts = stream.timestamps()
    radius_steps = ASSOCIATION_RADIUS // GRID_MINUTES

    for b in np.flatnonzero((stream.bolus > 0) & (stream.bw_carb_input > 0)):
        bw = float(stream.bw_carb_input[b])
        target = int(b) + MEAL_OFFSET_STEPS
        if target >= len(stream):
            report.boluses_skipped_at_end += 1
            continue
        candidates = [m for m in meals
                      if not m.claimed and abs(m.step - b) <= radius_steps]
        if not candidates:
            meals.append(_Meal(step=target, carbs=bw, self_reported=False,
                               added=True, claimed=True))
            report.meals_added += 1
            report.actions.append(RealignmentAction(
                int(ts[b]), "added", None, int(ts[target]), 0.0, bw))
            continue
        at_target = [m for m in candidates if m.step == target]
        if at_target:
            # prefer the incumbent so a second pass is a no-op
            chosen = min(at_target, key=lambda m: (abs(m.carbs - bw), m.step))
        else:
            chosen = min(candidates,
                         key=lambda m: (abs(m.step - b), abs(m.carbs - bw), m.step))
        old_step, old_carbs = chosen.step, chosen.carbs
        chosen.step, chosen.carbs, chosen.claimed = target, bw, True
        if old_step == target and old_carbs == bw:
            report.meals_unchanged += 1
            kind = "unchanged"
        else:
            report.meals_shifted += 1
            kind = "shifted"
        report.actions.append(RealignmentAction(
            int(ts[b]), kind, int(ts[old_step]), int(ts[target]),
            old_carbs, bw))

    report.meals_unchanged += sum(1 for m in meals if not m.claimed and not m.added)

    meal_arr = np.zeros(len(stream))
    reported_arr = np.zeros(len(stream), dtype=bool)
    for m in meals:
        meal_arr[m.step] += m.carbs
        reported_arr[m.step] |= m.self_reported
    report.added_meal_flags = [m.added for m in sorted(meals, key=lambda m: m.step)]
    out = stream.replace(meal=meal_arr, meal_self_reported=reported_arr)
    return out, report


def interpolation_filter(stream: EventStream, t: int, tau: int) -> bool:
    """Decide whether the example anchored at ``t`` with horizon ``tau`` keeps.

    Rejects when the BGL at the target time t+10+tau or at t is
    interpolated (or missing entirely), when more than 2 interpolated
    samples fall in the hour before t, or more than 12 in the 6 hours
    before t. Both look-back windows are half-open: (t-60, t] and
    (t-360, t].
    """
    i_t = stream.index_of(t)
    i_target = stream.index_of(t + 10 + tau)
    for i in (i_t, i_target):
        if stream.bgl_interpolated[i] or np.isnan(stream.bgl[i]):
            return False
    hour = stream.bgl_interpolated[max(0, i_t - 11):i_t + 1]
    if int(hour.sum()) > 2:
        return False
    six_hours = stream.bgl_interpolated[max(0, i_t - 71):i_t + 1]
    if int(six_hours.sum()) > 12:
        return False
    return True


SPLIT_NAMES = ("train", "valid", "test")


@dataclass(frozen=True)
class DaySplit:
    """Half-open timestamp ranges of the train/valid/test portions."""

    train: tuple[int, int]
    valid: tuple[int, int]
    test: tuple[int, int]

    def range(self, name: str) -> tuple[int, int]:
        if name not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)

    def of(self, timestamp: int) -> str:
        for name in SPLIT_NAMES:
            lo, hi = self.range(name)
            if lo <= timestamp < hi:
                return name
        raise ConfigError(f"timestamp {timestamp} outside the split ranges")

    def days(self, name: str) -> int:
        lo, hi = self.range(name)
        return max(0, day_index(hi - 1) - day_index(lo) + 1)


def split(stream: EventStream) -> DaySplit:
    """Partition a stream into train/valid/test by calendar day.

    The last 10 days are the test set, the preceding 10 days validation,
    and the remainder training; boundaries sit at subject-local midnight.
    """
    first_day, last_day = day_index(stream.t0), day_index(stream.t_end)
    span = last_day - first_day + 1
    if span <= 20:
        raise SplitError(
            f"subject {stream.subject_id}: stream spans {span} days, "
            "need more than 20 for a 10+10-day holdout")
    test_start = (last_day - 9) * MINUTES_PER_DAY
    valid_start = (last_day - 19) * MINUTES_PER_DAY
    end = stream.t_end + GRID_MINUTES
    return DaySplit(train=(stream.t0, valid_start),
                    valid=(valid_start, test_start),
                    test=(test_start, end))

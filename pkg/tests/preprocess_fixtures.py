"""Hand-constructed realignment and filter fixtures.

Each realignment case lists raw meal/bolus events and the rule-forced
expected outcome: final (minute, carbs) meal positions plus the action
counts. Filter cases pin the keep/reject decision at the documented
interpolation thresholds. Expected values are forced by the stated rules,
not by running the implementation.
"""

from dataclasses import dataclass, field

import numpy as np

from glucorec.timeseries import BolusKind, EventStream, interpolate_gaps

H = 60  # minutes per hour


@dataclass(frozen=True)
class RealignCase:
    name: str
    meals: list  # (minute, carbs)
    boluses: list  # (minute, dose, bw_carbs) regular unless kind given
    expected_meals: list  # (minute, carbs) after realignment
    shifted: int
    added: int
    unchanged: int
    dual: bool = False


REALIGN_CASES = [
    RealignCase(
        "shift_before", meals=[(7 * H + 50, 40.0)], boluses=[(8 * H, 4.5, 45.0)],
        expected_meals=[(8 * H + 10, 45.0)], shifted=1, added=0, unchanged=0),
    RealignCase(
        "add_missing", meals=[(9 * H, 30.0)], boluses=[(12 * H, 6.0, 60.0)],
        expected_meals=[(9 * H, 30.0), (12 * H + 10, 60.0)],
        shifted=0, added=1, unchanged=1),
    RealignCase(
        "tie_time_then_carbs", meals=[(7 * H + 30, 30.0), (8 * H + 30, 44.0)],
        boluses=[(8 * H, 4.5, 45.0)],
        expected_meals=[(7 * H + 30, 30.0), (8 * H + 10, 45.0)],
        shifted=1, added=0, unchanged=1),
    RealignCase(
        "already_aligned", meals=[(8 * H + 10, 45.0)], boluses=[(8 * H, 4.5, 45.0)],
        expected_meals=[(8 * H + 10, 45.0)], shifted=0, added=0, unchanged=1),
    RealignCase(
        "carb_replacement_at_target", meals=[(8 * H + 10, 40.0)],
        boluses=[(8 * H, 4.5, 45.0)],
        expected_meals=[(8 * H + 10, 45.0)], shifted=1, added=0, unchanged=0),
    RealignCase(
        "incumbent_preferred_over_closer", meals=[(8 * H + 5, 20.0), (8 * H + 10, 44.0)],
        boluses=[(8 * H, 4.5, 45.0)],
        expected_meals=[(8 * H + 5, 20.0), (8 * H + 10, 45.0)],
        shifted=1, added=0, unchanged=1),
    RealignCase(
        "single_claim", meals=[(8 * H + 20, 50.0)],
        boluses=[(8 * H, 4.5, 45.0), (8 * H + 15, 5.5, 55.0)],
        expected_meals=[(8 * H + 10, 45.0), (8 * H + 25, 55.0)],
        shifted=1, added=1, unchanged=0),
    RealignCase(
        "boundary_60min_before", meals=[(7 * H, 30.0)], boluses=[(8 * H, 3.5, 35.0)],
        expected_meals=[(8 * H + 10, 35.0)], shifted=1, added=0, unchanged=0),
    RealignCase(
        "boundary_60min_after", meals=[(9 * H, 30.0)], boluses=[(8 * H, 3.5, 35.0)],
        expected_meals=[(8 * H + 10, 35.0)], shifted=1, added=0, unchanged=0),
    RealignCase(
        "outside_radius_adds", meals=[(6 * H + 55, 30.0)], boluses=[(8 * H, 3.5, 35.0)],
        expected_meals=[(6 * H + 55, 30.0), (8 * H + 10, 35.0)],
        shifted=0, added=1, unchanged=1),
    RealignCase(
        "closest_wins", meals=[(7 * H + 45, 30.0), (8 * H + 20, 60.0)],
        boluses=[(8 * H, 5.0, 50.0)],
        expected_meals=[(8 * H + 10, 50.0), (8 * H + 20, 60.0)],
        shifted=1, added=0, unchanged=1),
    RealignCase(
        "carb_tie_earliest", meals=[(7 * H + 40, 40.0), (8 * H + 20, 40.0)],
        boluses=[(8 * H, 4.0, 40.0)],
        expected_meals=[(8 * H + 10, 40.0), (8 * H + 20, 40.0)],
        shifted=1, added=0, unchanged=1),
    RealignCase(
        "chronological_chain",
        meals=[(8 * H + 30, 28.0), (9 * H + 5, 52.0)],
        boluses=[(8 * H, 3.0, 30.0), (9 * H, 5.0, 50.0)],
        expected_meals=[(8 * H + 10, 30.0), (9 * H + 10, 50.0)],
        shifted=2, added=0, unchanged=0),
    RealignCase(
        "bw_zero_ignored", meals=[(8 * H + 30, 40.0)], boluses=[(8 * H, 2.0, 0.0)],
        expected_meals=[(8 * H + 30, 40.0)], shifted=0, added=0, unchanged=1),
    RealignCase(
        "dual_bolus_meal_still_realigned", meals=[(7 * H + 50, 40.0)],
        boluses=[(8 * H, 4.5, 45.0)], dual=True,
        expected_meals=[(8 * H + 10, 45.0)], shifted=1, added=0, unchanged=0),
]


def build_stream(case: RealignCase) -> EventStream:
    """One full day of 5-minute BGL at 120 mg/dL plus the case's events."""
    bgl = [(5.0 * i, 120.0) for i in range(288)]
    kind = BolusKind.DUAL if case.dual else BolusKind.REGULAR
    boluses = [(float(m), d, kind, bw) for m, d, bw in case.boluses]
    meals = [(float(m), c, True) for m, c in case.meals]
    return EventStream.from_records(case.name, bgl, [(0.0, 1.0)], boluses, meals)


@dataclass(frozen=True)
class FilterCase:
    name: str
    t: int
    tau: int
    interpolated_minutes: list
    keep: bool


#: t = 12:00 throughout; target = t + 10 + tau.
_T = 12 * H
FILTER_CASES = [
    FilterCase("clean_keeps", _T, 30, [], True),
    FilterCase("target_interpolated_rejects", _T, 30, [_T + 40], False),
    FilterCase("present_interpolated_rejects", _T, 30, [_T], False),
    FilterCase("three_in_hour_rejects", _T, 30,
               [_T - 50, _T - 30, _T - 10], False),
    FilterCase("two_in_hour_keeps", _T, 30, [_T - 50, _T - 10], True),
    FilterCase("hour_window_is_half_open", _T, 30,
               [_T - 60, _T - 30, _T - 10], True),  # t-60 is outside (t-60, t]
    FilterCase("thirteen_in_six_hours_rejects", _T, 30,
               [_T - 350 + 25 * k for k in range(13)], False),
    FilterCase("twelve_in_six_hours_keeps", _T, 30,
               [_T - 350 + 25 * k for k in range(12)], True),
    FilterCase("boundary_two_and_twelve_keeps", _T, 30,
               # 12 interpolated in (t-360, t], exactly 2 of them in (t-60, t]
               [_T - 355 + 25 * k for k in range(10)] + [_T - 55, _T - 5], True),
]


def build_filter_stream(case: FilterCase) -> EventStream:
    """Full-day stream whose listed minutes are interpolated samples."""
    holes = set(case.interpolated_minutes)
    bgl = [(5.0 * i, 120.0) for i in range(288) if 5 * i not in holes]
    stream = EventStream.from_records(case.name, bgl, [(0.0, 1.0)], [], [])
    return interpolate_gaps(stream)

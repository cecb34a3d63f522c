"""Per-subject event streams on a 5-minute grid.

Everything downstream (pre-processing, example extraction, training)
works on one canonical representation: four aligned channels (BGL,
carbs, bolus, basal) sampled every 5 minutes, with missing BGL stored
as NaN until filled by linear interpolation. Timestamps are minutes
since the subject's epoch, which is pinned to a local midnight so that
time-of-day and calendar-day arithmetic are plain integer operations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import IntEnum
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, EmptyStreamError

GRID_MINUTES = 5
MINUTES_PER_DAY = 1440
STEPS_PER_DAY = MINUTES_PER_DAY // GRID_MINUTES

#: Channels that carry scaling parameters.
CHANNELS = ("bgl", "carbs", "bolus", "basal")


class BolusKind(IntEnum):
    NONE = 0
    REGULAR = 1
    DUAL = 2


@dataclass(frozen=True)
class GlucoseSample:
    """One CGM reading: minutes since epoch, mg/dL, interpolation flag."""

    timestamp: int
    value: float
    interpolated: bool = False


@dataclass(frozen=True)
class ToDWindow:
    """One of the five time-of-day windows partitioning the 24h day."""

    label: str
    start_hour: int
    end_hour: int

    def contains_hour(self, hour: float) -> bool:
        return self.start_hour <= hour < self.end_hour


#: The five windows: 0-6 early, 6-10 breakfast, 10-14 lunch, 14-18 dinner,
#: 18-24 late. A boundary hour belongs to the window it starts.
TOD_WINDOWS = (
    ToDWindow("early", 0, 6),
    ToDWindow("breakfast", 6, 10),
    ToDWindow("lunch", 10, 14),
    ToDWindow("dinner", 14, 18),
    ToDWindow("late", 18, 24),
)


def tod_window_of(timestamp: int) -> ToDWindow:
    """Return the time-of-day window containing ``timestamp`` (minutes)."""
    hour = (timestamp % MINUTES_PER_DAY) / 60.0
    for window in TOD_WINDOWS:
        if window.contains_hour(hour):
            return window
    raise AssertionError(f"no ToD window for hour {hour}")  # pragma: no cover


def minute_of_day(timestamp: int) -> int:
    return timestamp % MINUTES_PER_DAY


def day_index(timestamp: int) -> int:
    return timestamp // MINUTES_PER_DAY


def snap_to_grid(minutes: float) -> int:
    """Snap a raw timestamp (minutes) to the nearest 5-minute grid point.

    Half-way points round up, so the result is deterministic and does not
    depend on the platform's round-half-to-even behavior.
    """
    return int(math.floor(minutes / GRID_MINUTES + 0.5)) * GRID_MINUTES


@dataclass(frozen=True)
class ScalingParams:
    """Per-channel min/max used for [0, 1] scaling.

    ``provenance`` records which split the statistics were computed from;
    training-time consumers assert it equals ``"train"`` so that no
    validation or test data can leak into the scaling.
    """

    channels: dict[str, tuple[float, float]]
    provenance: str = "train"

    def __post_init__(self) -> None:
        for name, (lo, hi) in self.channels.items():
            if not (hi > lo) or not (math.isfinite(lo) and math.isfinite(hi)):
                raise ConfigError(
                    f"degenerate scaling range for channel {name!r}: [{lo}, {hi}]"
                )

    def scale_value(self, channel: str, value: float) -> float:
        lo, hi = self.channels[channel]
        return (value - lo) / (hi - lo)

    def unscale_value(self, channel: str, value: float) -> float:
        lo, hi = self.channels[channel]
        return value * (hi - lo) + lo

    def scale_array(self, channel: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.channels[channel]
        return (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)

    def to_dict(self) -> dict:
        return {"provenance": self.provenance,
                "channels": {k: list(v) for k, v in self.channels.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingParams":
        return cls(channels={k: (float(v[0]), float(v[1])) for k, v in d["channels"].items()},
                   provenance=d.get("provenance", "train"))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class EventStream:
    """Aligned per-subject channels on the 5-minute grid.

    Immutable after construction; operations that modify a stream return
    a new instance. ``bgl`` holds NaN where no sample exists.
    """

    def __init__(
        self,
        subject_id: str,
        t0: int,
        bgl: np.ndarray,
        bgl_interpolated: np.ndarray,
        basal: np.ndarray,
        bolus: np.ndarray,
        bolus_kind: np.ndarray,
        bw_carb_input: np.ndarray,
        meal: np.ndarray,
        meal_self_reported: np.ndarray,
        epoch: datetime | None = None,
        natural_units: bool = True,
    ) -> None:
        if t0 % GRID_MINUTES != 0:
            raise ConfigError(f"stream start {t0} is not on the 5-minute grid")
        n = len(bgl)
        arrays = dict(
            bgl=np.asarray(bgl, dtype=np.float64),
            bgl_interpolated=np.asarray(bgl_interpolated, dtype=bool),
            basal=np.asarray(basal, dtype=np.float64),
            bolus=np.asarray(bolus, dtype=np.float64),
            bolus_kind=np.asarray(bolus_kind, dtype=np.uint8),
            bw_carb_input=np.asarray(bw_carb_input, dtype=np.float64),
            meal=np.asarray(meal, dtype=np.float64),
            meal_self_reported=np.asarray(meal_self_reported, dtype=bool),
        )
        for name, arr in arrays.items():
            if len(arr) != n:
                raise ConfigError(
                    f"channel {name} has length {len(arr)}, expected {n}")
        self.subject_id = subject_id
        self.t0 = int(t0)
        self.epoch = epoch
        self.natural_units = natural_units
        for name, arr in arrays.items():
            setattr(self, name, _freeze(arr.copy()))
        if natural_units:
            self._validate()

    def _validate(self) -> None:
        real = ~np.isnan(self.bgl) & ~self.bgl_interpolated
        if np.any(self.bgl[real] <= 0):
            raise ConfigError("non-interpolated BGL values must be positive")
        for name in ("basal", "bolus", "meal", "bw_carb_input"):
            arr = getattr(self, name)
            if np.any(arr < 0):
                raise ConfigError(f"channel {name} has negative values")
        has_bolus = self.bolus > 0
        if np.any(has_bolus & (self.bolus_kind == BolusKind.NONE)):
            raise ConfigError("bolus entries must carry a bolus kind")

    # -- grid arithmetic ---------------------------------------------------

    def __len__(self) -> int:
        return len(self.bgl)

    @property
    def t_end(self) -> int:
        """Timestamp of the last grid step."""
        return self.t0 + (len(self) - 1) * GRID_MINUTES

    def timestamps(self) -> np.ndarray:
        return self.t0 + GRID_MINUTES * np.arange(len(self), dtype=np.int64)

    def index_of(self, timestamp: int) -> int:
        if timestamp % GRID_MINUTES != 0:
            raise ConfigError(f"timestamp {timestamp} is off-grid")
        idx = (timestamp - self.t0) // GRID_MINUTES
        if not 0 <= idx < len(self):
            raise ConfigError(
                f"timestamp {timestamp} outside stream [{self.t0}, {self.t_end}]")
        return int(idx)

    def contains(self, timestamp: int) -> bool:
        return (timestamp % GRID_MINUTES == 0
                and self.t0 <= timestamp <= self.t_end)

    def bgl_samples(self) -> Iterator[GlucoseSample]:
        ts = self.timestamps()
        for i in range(len(self)):
            if not np.isnan(self.bgl[i]):
                yield GlucoseSample(int(ts[i]), float(self.bgl[i]),
                                    bool(self.bgl_interpolated[i]))

    def bgl_valid_range(self) -> tuple[int, int]:
        """Timestamps of the first and last non-NaN BGL sample."""
        present = np.flatnonzero(~np.isnan(self.bgl))
        if len(present) == 0:
            raise EmptyStreamError(f"subject {self.subject_id}: no BGL samples")
        return (self.t0 + GRID_MINUTES * int(present[0]),
                self.t0 + GRID_MINUTES * int(present[-1]))

    def day_span(self) -> int:
        """Number of distinct calendar days touched by the stream."""
        return day_index(self.t_end) - day_index(self.t0) + 1

    def replace(self, **channels: np.ndarray) -> "EventStream":
        kwargs = dict(
            subject_id=self.subject_id, t0=self.t0, epoch=self.epoch,
            bgl=self.bgl, bgl_interpolated=self.bgl_interpolated,
            basal=self.basal, bolus=self.bolus, bolus_kind=self.bolus_kind,
            bw_carb_input=self.bw_carb_input, meal=self.meal,
            meal_self_reported=self.meal_self_reported,
            natural_units=self.natural_units,
        )
        kwargs.update(channels)
        return EventStream(**kwargs)

    # -- construction from raw records --------------------------------------

    @classmethod
    def from_records(
        cls,
        subject_id: str,
        bgl: Iterable[tuple[float, float]],
        basal_changes: Iterable[tuple[float, float]],
        boluses: Iterable[tuple[float, float, BolusKind, float]],
        meals: Iterable[tuple[float, float, bool]],
        epoch: datetime | None = None,
    ) -> "EventStream":
        """Build a grid-aligned stream from raw timestamped records.

        Timestamps are raw minutes since epoch and get snapped to the
        nearest grid point; meal/bolus collisions on one step are summed.
        Basal is resampled piecewise-constant (rate in effect at step start).
        """
        bgl = list(bgl)
        basal_changes = sorted(basal_changes)
        boluses = list(boluses)
        meals = list(meals)
        if len(bgl) < 2:
            raise EmptyStreamError(
                f"subject {subject_id}: need at least 2 BGL samples, got {len(bgl)}")

        snapped = ([snap_to_grid(m) for m, _ in bgl]
                   + [snap_to_grid(m) for m, *_ in boluses]
                   + [snap_to_grid(m) for m, *_ in meals])
        t0, t_last = min(snapped), max(snapped)
        n = (t_last - t0) // GRID_MINUTES + 1

        bgl_arr = np.full(n, np.nan)
        bgl_count = np.zeros(n)
        for minutes, value in bgl:
            i = (snap_to_grid(minutes) - t0) // GRID_MINUTES
            # collisions on one grid step average (duplicate CGM reads)
            if bgl_count[i] == 0:
                bgl_arr[i] = value
            else:
                bgl_arr[i] = (bgl_arr[i] * bgl_count[i] + value) / (bgl_count[i] + 1)
            bgl_count[i] += 1

        basal_arr = np.zeros(n)
        if basal_changes:
            times = np.array([snap_to_grid(m) for m, _ in basal_changes])
            rates = np.array([r for _, r in basal_changes])
            grid = t0 + GRID_MINUTES * np.arange(n)
            idx = np.searchsorted(times, grid, side="right") - 1
            mask = idx >= 0
            basal_arr[mask] = rates[idx[mask]]

        bolus_arr = np.zeros(n)
        kind_arr = np.zeros(n, dtype=np.uint8)
        bw_arr = np.zeros(n)
        for minutes, dose, kind, bw in boluses:
            i = (snap_to_grid(minutes) - t0) // GRID_MINUTES
            bolus_arr[i] += dose
            bw_arr[i] += bw
            if kind == BolusKind.DUAL or kind_arr[i] == BolusKind.DUAL:
                kind_arr[i] = BolusKind.DUAL
            else:
                kind_arr[i] = BolusKind.REGULAR

        meal_arr = np.zeros(n)
        reported_arr = np.zeros(n, dtype=bool)
        for minutes, carbs, self_reported in meals:
            i = (snap_to_grid(minutes) - t0) // GRID_MINUTES
            meal_arr[i] += carbs
            reported_arr[i] |= self_reported

        return cls(subject_id, t0, bgl_arr, np.zeros(n, dtype=bool), basal_arr,
                   bolus_arr, kind_arr, bw_arr, meal_arr, reported_arr, epoch)


def interpolate_gaps(stream: EventStream) -> EventStream:
    """Fill BGL gaps between real samples with linear interpolation.

    Inserted samples are flagged ``interpolated=True``; real samples and
    already-interpolated samples are untouched, so the operation is
    idempotent. Steps before the first or after the last real sample stay
    NaN (there is no segment to interpolate on).
    """
    real = np.flatnonzero(~np.isnan(stream.bgl) & ~stream.bgl_interpolated)
    if len(real) < 2:
        raise EmptyStreamError(
            f"subject {stream.subject_id}: need at least 2 real BGL samples "
            f"to interpolate, found {len(real)}")
    bgl = np.array(stream.bgl)
    interp = np.array(stream.bgl_interpolated)
    for a, b in zip(real[:-1], real[1:]):
        if b - a == 1:
            continue
        gap = np.arange(a + 1, b)
        fill = np.isnan(bgl[gap])
        frac = (gap[fill] - a) / (b - a)
        bgl[gap[fill]] = stream.bgl[a] + frac * (stream.bgl[b] - stream.bgl[a])
        interp[gap[fill]] = True
    return stream.replace(bgl=bgl, bgl_interpolated=interp)


def compute_scaling(stream: EventStream, start: int, end: int,
                    provenance: str = "train") -> ScalingParams:
    """Min/max per channel over grid steps with ``start <= t < end``.

    BGL statistics use present (non-NaN) samples; the sparse carbs/bolus
    channels and basal are taken over the dense grid, so their minimum is
    normally 0. A channel with no range in the window (e.g. a subject with
    no boluses) gets a unit range above its minimum so scaling stays
    well-defined.
    """
    ts = stream.timestamps()
    mask = (ts >= start) & (ts < end)
    if not mask.any():
        raise ConfigError(f"no grid steps in [{start}, {end})")
    channels: dict[str, tuple[float, float]] = {}
    for name, values in (("bgl", stream.bgl[mask]),
                         ("carbs", stream.meal[mask]),
                         ("bolus", stream.bolus[mask]),
                         ("basal", stream.basal[mask])):
        values = values[~np.isnan(values)]
        if len(values) == 0:
            lo, hi = 0.0, 1.0
        else:
            lo, hi = float(values.min()), float(values.max())
        if not hi > lo:
            hi = lo + 1.0
        channels[name] = (lo, hi)
    return ScalingParams(channels=channels, provenance=provenance)


def scale(stream: EventStream, params: ScalingParams) -> EventStream:
    """Return a copy with bgl/meal/bolus/basal mapped through min/max scaling.

    Values outside the training range land outside [0, 1]; no clamping.
    """
    return stream.replace(
        bgl=params.scale_array("bgl", stream.bgl),
        meal=params.scale_array("carbs", stream.meal),
        bolus=params.scale_array("bolus", stream.bolus),
        basal=params.scale_array("basal", stream.basal),
        natural_units=False,
    )


def unscale(value: float, channel: str, params: ScalingParams) -> float:
    return params.unscale_value(channel, value)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glucorec.errors import ConfigError, EmptyStreamError
from glucorec.timeseries import (
    TOD_WINDOWS,
    BolusKind,
    EventStream,
    ScalingParams,
    compute_scaling,
    interpolate_gaps,
    scale,
    snap_to_grid,
    tod_window_of,
    unscale,
)


def stream_from_bgl(samples, subject="s1"):
    """Stream with only BGL records, padded with empty event channels."""
    return EventStream.from_records(subject, samples, [], [], [])


class TestInterpolation:
    def test_midpoint_fill(self):
        s = interpolate_gaps(stream_from_bgl([(0, 100.0), (10, 120.0)]))
        assert s.bgl[1] == pytest.approx(110.0)
        assert s.bgl_interpolated[1]
        assert not s.bgl_interpolated[0] and not s.bgl_interpolated[2]

    def test_no_gaps_is_identity(self):
        s0 = stream_from_bgl([(0, 100.0), (5, 105.0), (10, 99.0)])
        s1 = interpolate_gaps(s0)
        np.testing.assert_array_equal(s0.bgl, s1.bgl)
        assert not s1.bgl_interpolated.any()

    def test_linear_segment_values(self):
        # Oracle: the line through (0, 100) and (20, 180) is 100 + 4*dt.
        line = lambda t: 100.0 + 4.0 * t
        s = interpolate_gaps(stream_from_bgl([(0, 100.0), (20, 180.0)]))
        for t in (5, 10, 15):
            i = s.index_of(t)
            assert s.bgl[i] == pytest.approx(line(t))
            assert s.bgl_interpolated[i]

    def test_too_few_real_samples(self):
        s = stream_from_bgl([(0, 100.0), (10, 130.0)])
        lone = s.replace(bgl=np.array([100.0, np.nan, np.nan]))
        with pytest.raises(EmptyStreamError):
            interpolate_gaps(lone)

    def test_leading_and_trailing_gaps_stay_nan(self):
        s = stream_from_bgl([(0, 100.0), (5, 102.0), (10, 104.0), (15, 106.0)])
        holes = s.replace(bgl=np.array([np.nan, 102.0, 104.0, np.nan]))
        out = interpolate_gaps(holes)
        assert np.isnan(out.bgl[0]) and np.isnan(out.bgl[3])

    @given(
        present=st.lists(st.booleans(), min_size=4, max_size=60),
        values=st.lists(st.floats(min_value=40, max_value=400), min_size=60, max_size=60),
    )
    @settings(max_examples=50, deadline=None)
    def test_idempotent(self, present, values):
        if sum(present) < 2:
            present = present + [True, True]
        samples = [(5 * i, values[i]) for i, keep in enumerate(present) if keep]
        if len(samples) < 2:
            samples = [(0, 100.0), (5, 110.0)]
        once = interpolate_gaps(stream_from_bgl(samples))
        twice = interpolate_gaps(once)
        np.testing.assert_array_equal(once.bgl, twice.bgl)
        np.testing.assert_array_equal(once.bgl_interpolated, twice.bgl_interpolated)

    def test_interpolated_values_on_segment(self):
        s = interpolate_gaps(stream_from_bgl([(0, 100.0), (30, 70.0), (45, 130.0)]))
        lo, hi = s.bgl_valid_range()
        assert (lo, hi) == (0, 45)
        for a, b in [(0, 6), (6, 9)]:
            seg = s.bgl[a:b + 1]
            assert seg.min() >= min(seg[0], seg[-1]) - 1e-12
            assert seg.max() <= max(seg[0], seg[-1]) + 1e-12


class TestScaling:
    PARAMS = ScalingParams({"bgl": (40.0, 400.0), "carbs": (0.0, 200.0),
                            "bolus": (0.0, 25.0), "basal": (0.0, 3.0)})

    def test_endpoints_and_midpoint(self):
        assert self.PARAMS.scale_value("bgl", 40.0) == 0.0
        assert self.PARAMS.scale_value("bgl", 400.0) == 1.0
        assert self.PARAMS.scale_value("bgl", 220.0) == pytest.approx(0.5)

    def test_degenerate_params_rejected(self):
        with pytest.raises(ConfigError):
            ScalingParams({"bgl": (100.0, 100.0)})
        with pytest.raises(ConfigError):
            ScalingParams({"bgl": (200.0, 100.0)})

    @given(st.data())
    @settings(max_examples=10, deadline=None)
    def test_round_trip(self, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        for channel, (lo, hi) in self.PARAMS.channels.items():
            values = rng.uniform(lo - 50, hi + 50, size=1000)
            scaled = [self.PARAMS.scale_value(channel, v) for v in values]
            back = [unscale(s, channel, self.PARAMS) for s in scaled]
            np.testing.assert_allclose(back, values, atol=1e-9)

    def test_no_clamping_outside_range(self):
        assert self.PARAMS.scale_value("bgl", 430.0) > 1.0
        assert self.PARAMS.scale_value("bgl", 10.0) < 0.0

    def test_scale_stream_round_trip(self):
        s = interpolate_gaps(stream_from_bgl([(0, 100.0), (20, 180.0)]))
        scaled = scale(s, self.PARAMS)
        assert not scaled.natural_units
        np.testing.assert_allclose(
            [unscale(v, "bgl", self.PARAMS) for v in scaled.bgl], s.bgl, atol=1e-9)

    def test_compute_scaling_window_and_degenerate_bump(self):
        s = stream_from_bgl([(0, 100.0), (5, 260.0), (10, 80.0)])
        p = compute_scaling(s, 0, 10)
        assert p.channels["bgl"] == (100.0, 260.0)
        # no boluses at all: unit range keeps params usable
        assert p.channels["bolus"] == (0.0, 1.0)
        assert p.provenance == "train"


class TestToDWindows:
    @pytest.mark.parametrize("hhmm,label", [
        ((5, 55), "early"),      # 12am-6am
        ((6, 0), "breakfast"),   # boundary belongs to the window it starts
        ((23, 10), "late"),      # 6pm-12am
        ((9, 59), "breakfast"),
        ((10, 0), "lunch"),
        ((13, 59), "lunch"),
        ((14, 0), "dinner"),
        ((17, 59), "dinner"),
        ((18, 0), "late"),
        ((0, 0), "early"),
    ])
    def test_window_lookup(self, hhmm, label):
        h, m = hhmm
        assert tod_window_of(h * 60 + m).label == label

    def test_partition_covers_every_minute_once(self):
        for minute in range(1440):
            hour = minute / 60.0
            hits = [w for w in TOD_WINDOWS if w.contains_hour(hour)]
            assert len(hits) == 1
            assert tod_window_of(minute) == hits[0]

    def test_wraps_across_days(self):
        assert tod_window_of(3 * 1440 + 7 * 60).label == "breakfast"


class TestEventStream:
    def test_grid_snapping_and_collisions(self):
        s = EventStream.from_records(
            "s1",
            bgl=[(0, 100.0), (12, 120.0)],  # 12 snaps to 10
            basal_changes=[(0, 1.0), (8, 2.0)],  # 8 snaps to 10
            boluses=[(4, 2.0, BolusKind.REGULAR, 30.0),
                     (6, 1.5, BolusKind.REGULAR, 15.0)],  # both snap to 5
            meals=[(3.0, 20.0, True), (4.0, 25.0, True)],  # both snap to 5
        )
        assert snap_to_grid(12) == 10
        assert s.bolus[s.index_of(5)] == pytest.approx(3.5)
        assert s.bw_carb_input[s.index_of(5)] == pytest.approx(45.0)
        assert s.meal[s.index_of(5)] == pytest.approx(45.0)
        assert s.basal[s.index_of(0)] == 1.0
        assert s.basal[s.index_of(10)] == 2.0

    def test_dual_wins_collision(self):
        s = EventStream.from_records(
            "s1", [(0, 100.0), (10, 110.0)], [],
            [(5, 1.0, BolusKind.REGULAR, 0.0), (6, 2.0, BolusKind.DUAL, 0.0)], [])
        assert s.bolus_kind[s.index_of(5)] == BolusKind.DUAL

    def test_immutable(self):
        s = stream_from_bgl([(0, 100.0), (5, 110.0)])
        with pytest.raises(ValueError):
            s.bgl[0] = 50.0

    def test_negative_events_rejected(self):
        s = stream_from_bgl([(0, 100.0), (5, 110.0)])
        with pytest.raises(ConfigError):
            s.replace(meal=np.array([-1.0, 0.0]))

    def test_day_span(self):
        s = stream_from_bgl([(0, 100.0), (3 * 1440, 110.0)])
        assert s.day_span() == 4

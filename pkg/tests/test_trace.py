import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrpower.errors import NegativeNetError, OutOfRangeError, ParseError, ValidationError
from vrpower.trace import PowerTrace, WindowSpec, dump_trace, mean_power, net_power, parse_trace


def test_parse_power_format():
    tr = parse_trace(b"time_s,power_w\n0.0,2.0\n0.5,6.0\n")
    assert list(tr.power) == [2.0, 6.0]
    assert list(tr.time) == [0.0, 0.5]


def test_parse_iv_format():
    tr = parse_trace(b"time_s,current_a,voltage_v\n0.0,0.1,12.0\n1.0,0.1,12.0\n")
    assert tr.power[0] == pytest.approx(1.2, rel=1e-15)


def test_parse_file_object(tmp_path):
    path = tmp_path / "t.csv"
    path.write_bytes(b"time_s,power_w\n0,1\n1,1\n")
    with path.open("rb") as fh:
        assert len(parse_trace(fh)) == 2


@pytest.mark.parametrize("text", [
    b"time_s,power_w\n0.0,1.0\n0.5,1.0\n0.4,1.0\n",
    b"time_s,power_w\n0.0,1.0\n0.0,1.0\n",
])
def test_non_monotonic_time_rejected(text):
    with pytest.raises(ValidationError, match="strictly increasing"):
        parse_trace(text)


def test_malformed_row_reports_line():
    with pytest.raises(ParseError) as err:
        parse_trace(b"time_s,power_w\n0.0,1.0\n0.5,abc\n")
    assert err.value.line == 3


def test_wrong_field_count_reports_line():
    with pytest.raises(ParseError, match="line 2"):
        parse_trace(b"time_s,power_w\n0.0,1.0,3\n")


def test_unknown_header():
    with pytest.raises(ParseError, match="unknown trace header"):
        parse_trace(b"t,p\n0,1\n1,1\n")


def test_format_tag_must_match_header():
    with pytest.raises(ParseError):
        parse_trace(b"time_s,power_w\n0,1\n1,1\n", format="iv")
    assert len(parse_trace(b"time_s,power_w\n0,1\n1,1\n", format="power")) == 2


@pytest.mark.parametrize("text", [b"", b"time_s,power_w\n"])
def test_empty_file(text):
    with pytest.raises(ValidationError):
        parse_trace(text)


def test_single_sample_rejected():
    with pytest.raises(ValidationError, match="at least 2"):
        parse_trace(b"time_s,power_w\n0,1\n")


def test_negative_or_nonfinite_power_rejected():
    with pytest.raises(ValidationError):
        PowerTrace([0.0, 1.0], [1.0, -0.5])
    with pytest.raises(ValidationError):
        PowerTrace([0.0, 1.0], [1.0, math.nan])


def test_trace_is_immutable():
    tr = PowerTrace([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        tr.power[0] = 5.0


def test_nominal_rate():
    tr = PowerTrace(np.arange(11) / 5000.0, np.ones(11))
    assert tr.nominal_rate == pytest.approx(5000.0)


def test_window_validation():
    with pytest.raises(ValidationError):
        WindowSpec(-1.0, 7.0)
    with pytest.raises(ValidationError):
        WindowSpec(2.0, 0.0)
    assert WindowSpec() == WindowSpec(2.0, 7.0)


def test_mean_constant():
    tr = PowerTrace(np.linspace(0, 12, 121), np.full(121, 3.0))
    assert mean_power(tr, WindowSpec(2.0, 7.0)) == pytest.approx(3.0, rel=1e-15)
    assert mean_power(tr, WindowSpec(0.37, 1.11)) == pytest.approx(3.0, rel=1e-15)


def test_mean_alternating_square_wave():
    # 2 W and 6 W plateaus of equal length with steep edges
    t, p = [0.0], [2.0]
    for i in range(10):
        level = 6.0 if i % 2 == 0 else 2.0
        t += [i + 1e-9, i + 1.0]
        p += [level, level]
    t, p = t[:-1], p[:-1]
    t.append(10.0 + 1e-9); p.append(2.0)
    tr = PowerTrace(t, p)
    got = mean_power(tr, WindowSpec(0.0, 10.0))
    assert got == pytest.approx(4.0, abs=1e-6)


def test_mean_ramp_closed_form():
    # ramp 0 -> 10 W over 10 s; mean over [2, 9] is the midpoint value 5.5 W
    tr = PowerTrace([0.0, 10.0], [0.0, 10.0])
    assert mean_power(tr, WindowSpec(2.0, 7.0)) == pytest.approx(5.5, rel=1e-12)


def test_mean_window_relative_to_trace_start():
    tr = PowerTrace([100.0, 110.0], [0.0, 10.0])
    assert mean_power(tr, WindowSpec(2.0, 7.0)) == pytest.approx(5.5, rel=1e-12)


def test_window_beyond_end():
    tr = PowerTrace([0.0, 8.0], [1.0, 1.0])
    with pytest.raises(OutOfRangeError):
        mean_power(tr, WindowSpec(2.0, 7.0))


def test_window_exactly_to_end():
    tr = PowerTrace([0.0, 9.0], [0.0, 9.0])
    assert mean_power(tr, WindowSpec(2.0, 7.0)) == pytest.approx(5.5, rel=1e-12)


def test_net_power():
    assert net_power(4.0, 1.5) == 2.5
    assert net_power(1.5, 1.5) == 0.0
    with pytest.raises(NegativeNetError):
        net_power(1.0, 1.5)
    with pytest.raises(ValidationError):
        net_power(-1.0, 0.0)


def test_roundtrip_bit_exact():
    rng = np.random.default_rng(0)
    t = np.cumsum(rng.uniform(1e-4, 1e-3, 500))
    p = rng.uniform(0, 8, 500)
    tr = PowerTrace(t, p)
    again = parse_trace(dump_trace(tr))
    assert np.array_equal(again.time, tr.time)
    assert np.array_equal(again.power, tr.power)
    assert dump_trace(again) == dump_trace(tr)


knots = st.lists(st.floats(0.0, 10.0), min_size=2, max_size=8)


@settings(max_examples=60, deadline=None)
@given(knots, st.integers(2, 40), st.floats(0.0, 0.45), st.floats(0.05, 0.5))
def test_mean_invariant_under_resampling(values, factor, start_frac, dur_frac):
    """Upsampling a piecewise-linear trace at its own interpolant keeps the window mean."""
    t = np.arange(len(values), dtype=float)
    coarse = PowerTrace(t, values)
    fine_t = np.linspace(0.0, t[-1], (len(values) - 1) * factor + 1)
    fine = PowerTrace(fine_t, np.interp(fine_t, t, values))
    span = t[-1]
    w = WindowSpec(start_frac * span, dur_frac * span)
    a, b = mean_power(coarse, w), mean_power(fine, w)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 100.0), min_size=3, max_size=30), st.floats(0.0, 0.5),
       st.floats(0.1, 0.5))
def test_mean_within_window_sample_range(values, start_frac, dur_frac):
    t = np.arange(len(values), dtype=float)
    tr = PowerTrace(t, values)
    span = t[-1]
    w = WindowSpec(start_frac * span, dur_frac * span)
    lo, hi = w.start, w.start + w.duration
    inside = np.concatenate(([np.interp(lo, t, values), np.interp(hi, t, values)],
                             np.asarray(values)[(t > lo) & (t < hi)]))
    m = mean_power(tr, w)
    assert inside.min() - 1e-9 <= m <= inside.max() + 1e-9

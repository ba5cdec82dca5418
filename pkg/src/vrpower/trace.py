"""Power-meter traces: parsing, windowed mean power and idle-offset removal."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .errors import NegativeNetError, OutOfRangeError, ParseError, ValidationError

#: header columns for each supported trace format
TRACE_FORMATS = {
    "power": ("time_s", "power_w"),
    "iv": ("time_s", "current_a", "voltage_v"),
}

DEFAULT_WINDOW_START = 2.0
DEFAULT_WINDOW_DURATION = 7.0


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PowerTrace:
    """Timestamped power samples in seconds and watts."""

    time: np.ndarray
    power: np.ndarray
    nominal_rate: float | None = field(default=None)

    def __post_init__(self):
        time = _readonly(self.time)
        power = _readonly(self.power)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "power", power)
        if time.ndim != 1 or time.shape != power.shape:
            raise ValidationError("time and power must be 1-d arrays of equal length")
        if time.size < 2:
            raise ValidationError(f"a trace needs at least 2 samples, got {time.size}")
        if not np.all(np.isfinite(time)) or not np.all(np.isfinite(power)):
            raise ValidationError("trace contains non-finite values")
        bad = np.flatnonzero(np.diff(time) <= 0)
        if bad.size:
            i = int(bad[0]) + 1
            raise ValidationError(
                f"time not strictly increasing at sample {i} "
                f"({time[i - 1]!r} -> {time[i]!r})"
            )
        if np.any(power < 0):
            i = int(np.flatnonzero(power < 0)[0])
            raise ValidationError(f"negative power {power[i]!r} at sample {i}")
        if self.nominal_rate is None:
            rate = (time.size - 1) / (time[-1] - time[0])
            object.__setattr__(self, "nominal_rate", float(rate))

    def __len__(self) -> int:
        return int(self.time.size)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.time[0]), float(self.time[-1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PowerTrace):
            return NotImplemented
        return np.array_equal(self.time, other.time) and np.array_equal(
            self.power, other.power
        )


@dataclass(frozen=True)
class WindowSpec:
    """Averaging window, ``start`` seconds after the first sample."""

    start: float = DEFAULT_WINDOW_START
    duration: float = DEFAULT_WINDOW_DURATION

    def __post_init__(self):
        if not (math.isfinite(self.start) and self.start >= 0):
            raise ValidationError(f"window start must be >= 0, got {self.start!r}")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValidationError(f"window duration must be > 0, got {self.duration!r}")


def _detect_format(header: list[str]) -> str:
    cols = tuple(c.strip() for c in header)
    for name, expected in TRACE_FORMATS.items():
        if cols == expected:
            return name
    raise ParseError(f"unknown trace header {','.join(cols)!r}", line=1)


def parse_trace(source: bytes | BinaryIO, format: str | None = None) -> PowerTrace:
    """Parse a trace CSV.

    The format is taken from the header row. If ``format`` is given it must
    agree with the header. In the ``iv`` format each sample's power is
    current times voltage.
    """
    raw = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        text = bytes(raw).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"trace is not valid UTF-8: {exc}") from None
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None:
        raise ValidationError("empty trace file")
    detected = _detect_format(header)
    if format is not None and format != detected:
        raise ParseError(f"header is {detected!r} format, expected {format!r}", line=1)
    width = len(TRACE_FORMATS[detected])

    times: list[float] = []
    powers: list[float] = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != width:
            raise ParseError(f"expected {width} fields, got {len(row)}", line=lineno)
        try:
            values = [float(v) for v in row]
        except ValueError:
            raise ParseError(f"non-numeric field in {row!r}", line=lineno) from None
        times.append(values[0])
        powers.append(values[1] if detected == "power" else values[1] * values[2])
    if not times:
        raise ValidationError("trace has a header but no samples")
    return PowerTrace(np.array(times), np.array(powers))


def dump_trace(trace: PowerTrace) -> bytes:
    """Serialize to the canonical ``power`` CSV; floats use shortest round-trip repr."""
    lines = [",".join(TRACE_FORMATS["power"])]
    lines += [f"{t!r},{p!r}" for t, p in zip(trace.time.tolist(), trace.power.tolist())]
    return ("\n".join(lines) + "\n").encode("utf-8")


def mean_power(trace: PowerTrace, window: WindowSpec | None = None) -> float:
    """Time-weighted mean power over the window.

    The trace is treated as piecewise linear: the integral is the trapezoid
    rule over the samples inside the window, with linearly interpolated
    end points, divided by the window duration.
    """
    window = window or WindowSpec()
    t, p = trace.time, trace.power
    lo = t[0] + window.start
    hi = lo + window.duration
    # absorb rounding in t0 + start + duration
    slack = 4 * np.finfo(float).eps * max(1.0, abs(t[-1]))
    if hi > t[-1] + slack:
        raise OutOfRangeError(
            f"window [{window.start}, {window.start + window.duration}] s exceeds "
            f"trace span of {float(t[-1] - t[0])!r} s"
        )
    hi = min(hi, t[-1])
    inner = (t > lo) & (t < hi)
    ts = np.concatenate(([lo], t[inner], [hi]))
    ps = np.concatenate(([np.interp(lo, t, p)], p[inner], [np.interp(hi, t, p)]))
    area = float(np.sum(0.5 * (ps[1:] + ps[:-1]) * np.diff(ts)))
    return float(area / (hi - lo))


def net_power(gross: float, idle: float) -> float:
    """Subtract the idle-mode offset from a gross mean power."""
    if gross < 0 or idle < 0:
        raise ValidationError(f"powers must be >= 0 (gross={gross!r}, idle={idle!r})")
    if gross < idle:
        raise NegativeNetError(
            f"gross power {gross!r} W is below idle power {idle!r} W; "
            "check the idle trace and the window"
        )
    return float(gross - idle)

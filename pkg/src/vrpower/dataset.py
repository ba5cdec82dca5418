"""Playback measurements, model variable sets and the design matrix.

Features are scaled for conditioning: resolution enters in megapixels and
bitrate in Mbit/s, everything else unscaled. ``DesignMatrix.scaling`` holds the
factor that turns a raw feature into its scaled value, so a parameter fitted
on scaled columns converts to raw units as ``p_raw = p_scaled * scaling``.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

FLAGS = ("F_st", "F_dyn", "F_360", "F_3D", "F_gyro", "F_accel", "F_magn")
VARIABLES = ("S", "f", "b") + FLAGS
SENSOR_FLAGS = ("F_gyro", "F_accel", "F_magn")
INTERCEPT = "p_0"

#: raw -> scaled multiplier per variable
FEATURE_SCALE = {"S": 1e-6, "b": 1e-6}

RAW_UNITS = {
    "S": "W/pixel",
    "f": "W/fps",
    "b": "W/bps",
}
SCALED_UNITS = {
    "S": "W/Mpixel",
    "f": "W/fps",
    "b": "W/(Mbit/s)",
}

MEASUREMENT_HEADER = (
    "sequence", "width", "height", "fps", "bitrate_bps", "codec", "crf", "app",
    "f_st", "f_dyn", "f_360", "f_3d", "f_gyro", "f_accel", "f_magn", "power_w",
)
_FLAG_COLUMNS = dict(zip(FLAGS, MEASUREMENT_HEADER[8:15]))


class Codec(str, enum.Enum):
    H264 = "H264"
    HEVC = "HEVC"


class Projection(str, enum.Enum):
    RECTILINEAR = "rectilinear"
    EQUIRECTANGULAR = "equirectangular"


def _positive(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be a positive number, got {value!r}")


@dataclass(frozen=True)
class SequenceMeta:
    """One coded video stream: content name plus coding parameters."""

    name: str
    width: int
    height: int
    frame_rate: float
    bitrate: float
    codec: Codec = Codec.HEVC
    crf: int = 28
    projection: Projection = Projection.RECTILINEAR
    is_3d: bool = False

    def __post_init__(self):
        if not self.name:
            raise ValidationError("sequence name must be non-empty")
        for name in ("width", "height", "frame_rate", "bitrate"):
            _positive(name, getattr(self, name))
        try:
            object.__setattr__(self, "codec", Codec(self.codec))
        except ValueError:
            raise ValidationError(f"unknown codec {self.codec!r}") from None
        object.__setattr__(self, "projection", Projection(self.projection))

    @property
    def resolution(self) -> int:
        """Pixels per frame, width times height."""
        return self.width * self.height


@dataclass(frozen=True)
class PlaybackConfig:
    """Player options as 0/1 flags. All sensor flags 0 means automatic sensor choice."""

    app: str = "VaR"
    F_st: int = 0
    F_dyn: int = 0
    F_360: int = 0
    F_3D: int = 0
    F_gyro: int = 0
    F_accel: int = 0
    F_magn: int = 0

    def __post_init__(self):
        for name in FLAGS:
            if getattr(self, name) not in (0, 1):
                raise ValidationError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")
        if sum(getattr(self, name) for name in SENSOR_FLAGS) > 1:
            raise ValidationError("at most one of F_gyro, F_accel, F_magn may be set")

    def flags(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in FLAGS)


#: playback settings I-VIII of the measurement campaign
PLAYBACK_SETTINGS = {
    "I": PlaybackConfig(),
    "II": PlaybackConfig(F_st=1),
    "III": PlaybackConfig(F_st=1, F_dyn=1),
    "IV": PlaybackConfig(F_st=1, F_dyn=1, F_360=1),
    "V": PlaybackConfig(F_st=1, F_dyn=1, F_360=1, F_3D=1),
    "VI": PlaybackConfig(F_st=1, F_dyn=1, F_360=1, F_3D=1, F_gyro=1),
    "VII": PlaybackConfig(F_st=1, F_dyn=1, F_360=1, F_3D=1, F_accel=1),
    "VIII": PlaybackConfig(F_st=1, F_dyn=1, F_360=1, F_3D=1, F_magn=1),
}


@dataclass(frozen=True)
class Measurement:
    sequence: SequenceMeta
    config: PlaybackConfig
    power: float

    def __post_init__(self):
        if not (math.isfinite(self.power) and self.power >= 0):
            raise ValidationError(f"power must be finite and >= 0, got {self.power!r}")

    def raw_feature(self, variable: str) -> float:
        if variable == "S":
            return float(self.sequence.resolution)
        if variable == "f":
            return float(self.sequence.frame_rate)
        if variable == "b":
            return float(self.sequence.bitrate)
        return float(getattr(self.config, variable))


@dataclass(frozen=True)
class ModelSpec:
    """Ordered variable set of a linear model; the intercept is implicit and always first."""

    variables: tuple[str, ...] = ()

    def __post_init__(self):
        variables = tuple(self.variables)
        object.__setattr__(self, "variables", variables)
        unknown = [v for v in variables if v not in VARIABLES]
        if unknown:
            raise ValidationError(f"unknown variable tag(s): {', '.join(unknown)}")
        if len(set(variables)) != len(variables):
            raise ValidationError(f"duplicate variable tags in {variables}")

    @property
    def columns(self) -> tuple[str, ...]:
        return (INTERCEPT,) + self.variables

    @property
    def n_params(self) -> int:
        return len(self.variables) + 1

    @property
    def scaling(self) -> np.ndarray:
        return np.array([1.0] + [FEATURE_SCALE.get(v, 1.0) for v in self.variables])

    def without(self, variable: str) -> "ModelSpec":
        return ModelSpec(tuple(v for v in self.variables if v != variable))

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        """``advanced``, ``simplified``, ``intercept`` or a comma-separated tag list."""
        key = text.strip()
        if key.lower() in PRESETS:
            return PRESETS[key.lower()]
        tags = [t.strip() for t in key.split(",") if t.strip()]
        return cls(tuple(tags))

    def __str__(self) -> str:
        return ",".join(self.variables)


ADVANCED = ModelSpec(("b", "f", "S", "F_st", "F_dyn", "F_360", "F_3D", "F_gyro", "F_accel", "F_magn"))
SIMPLIFIED = ModelSpec(("b", "S", "F_360"))
PRESETS = {"advanced": ADVANCED, "simplified": SIMPLIFIED, "intercept": ModelSpec()}


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    A: np.ndarray
    P: np.ndarray
    scaling: np.ndarray
    row_keys: tuple[str, ...]
    spec: ModelSpec = field(default_factory=ModelSpec)

    def __post_init__(self):
        for name in ("A", "P", "scaling"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n, k = self.A.shape
        if self.P.shape != (n,) or len(self.row_keys) != n:
            raise ValidationError("A, P and row_keys disagree on the number of rows")
        if k != self.spec.n_params or self.scaling.shape != (k,):
            raise ValidationError("column count does not match the model spec")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.P))):
            raise ValidationError("design matrix has non-finite entries")
        if n and not np.all(self.A[:, 0] == 1.0):
            raise ValidationError("first column must be the all-ones intercept")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def rows(self, index) -> "DesignMatrix":
        index = np.asarray(index)
        keys = tuple(self.row_keys[i] for i in np.arange(len(self.row_keys))[index])
        return DesignMatrix(self.A[index], self.P[index], self.scaling, keys, self.spec)


def raw_feature_vector(m: Measurement, spec: ModelSpec) -> np.ndarray:
    return np.array([1.0] + [m.raw_feature(v) for v in spec.variables])


def feature_vector(m: Measurement, spec: ModelSpec) -> np.ndarray:
    """Scaled features ``[1, x_1, ..., x_{K-1}]`` in spec order."""
    return raw_feature_vector(m, spec) * spec.scaling


def build_design(measurements: Sequence[Measurement], spec: ModelSpec) -> DesignMatrix:
    if not measurements:
        raise ValidationError("cannot build a design matrix from zero measurements")
    A = np.vstack([feature_vector(m, spec) for m in measurements])
    P = np.array([m.power for m in measurements], dtype=float)
    keys = tuple(m.sequence.name for m in measurements)
    return DesignMatrix(A, P, spec.scaling, keys, spec)


def _number(text: str, name: str, row: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"{name} is not a number: {text!r}", row=row) from None
    if not math.isfinite(value):
        raise ValidationError(f"{name} is not finite: {text!r}", row=row)
    return value


def _integer(text: str, name: str, row: int) -> int:
    value = _number(text, name, row)
    if not value.is_integer():
        raise ValidationError(f"{name} must be an integer, got {text!r}", row=row)
    return int(value)


def _measurement_from_row(rec: dict[str, str], row: int) -> Measurement:
    try:
        flags = {}
        for flag, column in _FLAG_COLUMNS.items():
            flags[flag] = _integer(rec[column], column, row)
            if flags[flag] not in (0, 1):
                raise ValidationError(f"{column} must be 0 or 1, got {rec[column]!r}", row=row)
        width = _integer(rec["width"], "width", row)
        height = _integer(rec["height"], "height", row)
        seq = SequenceMeta(
            name=rec["sequence"],
            width=width,
            height=height,
            frame_rate=_number(rec["fps"], "fps", row),
            bitrate=_number(rec["bitrate_bps"], "bitrate_bps", row),
            codec=rec["codec"],
            crf=_integer(rec["crf"], "crf", row),
        )
        config = PlaybackConfig(app=rec["app"], **flags)
        return Measurement(seq, config, _number(rec["power_w"], "power_w", row))
    except ValidationError as exc:
        if exc.row is None:
            raise ValidationError(str(exc), row=row) from None
        raise


def load_measurements(source: bytes | BinaryIO) -> list[Measurement]:
    """Read the measurement CSV. Row numbers in errors count the header as row 1."""
    raw = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        text = bytes(raw).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"measurement file is not valid UTF-8: {exc}") from None
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise ParseError("empty measurement file (no header)", line=1)
    header = [h.strip() for h in header]
    missing = [c for c in MEASUREMENT_HEADER if c not in header]
    if missing:
        raise ParseError(f"missing column(s): {', '.join(missing)}", line=1)
    out = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValidationError(
                f"expected {len(header)} fields, got {len(row)}", row=row_no
            )
        out.append(_measurement_from_row(dict(zip(header, row)), row_no))
    return out


def _fmt(value: float) -> str:
    if isinstance(value, int):
        return str(value)
    return str(int(value)) if float(value).is_integer() and abs(value) < 2**53 else repr(float(value))


def measurement_row(m: Measurement) -> list[str]:
    s, c = m.sequence, m.config
    return [
        s.name, str(s.width), str(s.height), _fmt(s.frame_rate), _fmt(s.bitrate),
        s.codec.value, str(s.crf), c.app, *(str(f) for f in c.flags()), repr(float(m.power)),
    ]


def dump_measurements(measurements: Iterable[Measurement]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MEASUREMENT_HEADER)
    for m in measurements:
        writer.writerow(measurement_row(m))
    return buf.getvalue().encode("utf-8")

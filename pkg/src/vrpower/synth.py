"""Seeded synthetic measurement sets drawn from a known linear power model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import (
    ADVANCED,
    INTERCEPT,
    PLAYBACK_SETTINGS,
    Codec,
    Measurement,
    PlaybackConfig,
    Projection,
    SequenceMeta,
    raw_feature_vector,
)
from .errors import SynthConfigError, ValidationError
from .solver import PowerModel

# name, width, height, fps, projection, 3d
TEST_SEQUENCES = (
    ("BQSquare", 416, 240, 60, "rectilinear", False),
    ("BlowingBubbles", 416, 240, 50, "rectilinear", False),
    ("BasketballPass", 416, 240, 50, "rectilinear", False),
    ("RaceHorses", 416, 240, 30, "rectilinear", False),
    ("BQMall", 832, 480, 60, "rectilinear", False),
    ("BasketballDrill", 832, 480, 50, "rectilinear", False),
    ("PartyScene", 832, 480, 50, "rectilinear", False),
    ("Flowervase", 832, 480, 30, "rectilinear", False),
    ("FourPeople", 1280, 720, 60, "rectilinear", False),
    ("Johnny", 1280, 720, 60, "rectilinear", False),
    ("SlideEditing", 1280, 720, 30, "rectilinear", False),
    ("SlideShow", 1280, 720, 20, "rectilinear", False),
    ("BQTerrace", 1920, 1080, 60, "rectilinear", False),
    ("BasketballDrive", 1920, 1080, 50, "rectilinear", False),
    ("Cactus", 1920, 1080, 50, "rectilinear", False),
    ("Kimono", 1920, 1080, 24, "rectilinear", False),
    ("AerialCity", 3840, 1920, 30, "equirectangular", False),
    ("DrivingInCity", 3840, 1920, 30, "equirectangular", False),
    ("DrivingInCountry", 3840, 1920, 30, "equirectangular", False),
    ("PoleVault", 3840, 1920, 30, "equirectangular", False),
    ("Cars02", 3840, 2160, 30, "equirectangular", True),
    ("Kitchen2", 3840, 2160, 30, "equirectangular", True),
    ("Skatedance", 4096, 2048, 30, "equirectangular", True),
    ("Wall6", 3840, 1920, 30, "equirectangular", True),
)

CRF_LEVELS = (18, 23, 28, 33)


def bits_per_pixel(crf: int) -> float:
    """Rough rate model: 0.06 bit/pixel at crf 18, halving every 6 crf steps."""
    return 0.06 * 2.0 ** (-(crf - 18) / 6.0)


def default_sequence_grid(codec: Codec = Codec.HEVC) -> list[SequenceMeta]:
    grid = []
    for name, w, h, fps, proj, is_3d in TEST_SEQUENCES:
        for crf in CRF_LEVELS:
            bitrate = round(w * h * fps * bits_per_pixel(crf))
            grid.append(SequenceMeta(name, w, h, fps, bitrate, codec, crf, Projection(proj), is_3d))
    return grid


def default_config_grid(app: str = "VaR") -> list[PlaybackConfig]:
    return [
        PlaybackConfig(app, *cfg.flags()) for cfg in PLAYBACK_SETTINGS.values()
    ]


#: offset, resolution, bitrate and 360-rendering dominate; the rest barely matter
DEFAULT_GROUND_TRUTH = {
    INTERCEPT: 0.97,
    "S": 5.0196e-8,
    "b": 1.5e-8,
    "f": 2.0e-4,
    "F_st": 0.01,
    "F_dyn": 0.01,
    "F_360": 0.12,
    "F_3D": 0.005,
    "F_gyro": 0.004,
    "F_accel": 0.003,
    "F_magn": 0.002,
}


@dataclass(frozen=True)
class SynthConfig:
    """Ground truth in raw units (W, W/pixel, W/fps, W/bps, W per flag); absent terms are 0."""

    ground_truth: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_GROUND_TRUTH))
    sequence_grid: Sequence[SequenceMeta] = field(default_factory=default_sequence_grid)
    config_grid: Sequence[PlaybackConfig] = field(default_factory=default_config_grid)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.ground_truth) - set(ADVANCED.columns)
        if unknown:
            raise SynthConfigError(f"unknown ground-truth term(s): {', '.join(sorted(unknown))}")
        if not (self.noise_sigma >= 0):
            raise SynthConfigError(f"noise sigma must be >= 0, got {self.noise_sigma!r}")
        if not self.sequence_grid or not self.config_grid:
            raise SynthConfigError("sequence and config grids must be non-empty")
        if not 0 <= self.seed < 2**64:
            raise SynthConfigError("seed must be a 64-bit unsigned integer")

    @property
    def params_raw(self) -> np.ndarray:
        return np.array([float(self.ground_truth.get(c, 0.0)) for c in ADVANCED.columns])

    def ground_truth_model(self) -> PowerModel:
        scaling = ADVANCED.scaling
        return PowerModel(ADVANCED, self.params_raw / scaling, scaling, 0.0, 0, "none")


def generate(cfg: SynthConfig) -> list[Measurement]:
    """One measurement per (sequence, config) pair, sequence-major.

    Power is the ground-truth model on raw features times ``1 + e`` with
    ``e ~ N(0, sigma^2)``; draws giving non-positive power are redrawn.
    """
    params = cfg.params_raw
    rng = np.random.default_rng(cfg.seed)
    out = []
    for seq in cfg.sequence_grid:
        for config in cfg.config_grid:
            m = Measurement(seq, config, 0.0)
            clean = float(raw_feature_vector(m, ADVANCED) @ params)
            if not clean > 0:
                raise SynthConfigError(
                    f"ground truth gives non-positive power {clean!r} W for "
                    f"{seq.name} (crf {seq.crf}) with flags {config.flags()}"
                )
            power = clean
            if cfg.noise_sigma > 0:
                power = clean * (1.0 + cfg.noise_sigma * rng.standard_normal())
                while power <= 0:
                    power = clean * (1.0 + cfg.noise_sigma * rng.standard_normal())
            try:
                out.append(Measurement(seq, config, power))
            except ValidationError as exc:
                raise SynthConfigError(str(exc)) from None
    return out

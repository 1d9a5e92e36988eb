"""FMCW radar configuration, raw frame container and derived quantities."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RadarConfig:
    """Radar parameters; defaults are the BGT60TR13C setup used for faces."""

    n_tx: int = 1
    n_rx: int = 3
    n_chirps: int = 64
    n_samples: int = 128
    frame_period: float = 50e-3
    chirp_to_chirp: float = 391.55e-6
    f_min: float = 58.0e9
    f_max: float = 62.0e9
    adc_rate: float = 2.0e6
    # None -> n_samples / adc_rate
    chirp_duration: float | None = None

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_chirps", "n_samples"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.chirp_duration is None:
            object.__setattr__(self, "chirp_duration", self.n_samples / self.adc_rate)

    @property
    def bandwidth(self) -> float:
        return self.f_max - self.f_min

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RadarConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    def validate(self) -> None:
        if self.bandwidth <= 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.chirp_to_chirp <= 0:
            raise ConfigError("chirp_to_chirp must be positive")
        if self.chirp_duration <= 0 or self.adc_rate <= 0:
            raise ConfigError("chirp_duration and adc_rate must be positive")
        if self.frame_period < self.n_chirps * self.chirp_to_chirp:
            raise ConfigError(
                f"frame_period {self.frame_period} shorter than {self.n_chirps} chirps of {self.chirp_to_chirp}"
            )


@dataclass(frozen=True)
class DerivedParams:
    f_c: float
    chirp_rate: float
    range_res: float
    max_range: float
    max_velocity: float
    velocity_res: float
    c: float = SPEED_OF_LIGHT


def derive_params(config: RadarConfig) -> DerivedParams:
    """Range/velocity resolution and limits.

    The N_c/2 factor in ``velocity_res`` makes an N_c-point Doppler axis span
    ``(-max_velocity, +max_velocity)`` with one bin per ``velocity_res``.
    """
    config.validate()
    c = SPEED_OF_LIGHT
    f_c = 0.5 * (config.f_min + config.f_max)
    b = config.bandwidth
    range_res = c / (2.0 * b)
    return DerivedParams(
        f_c=f_c,
        chirp_rate=b / config.chirp_duration,
        range_res=range_res,
        max_range=(config.n_samples / 2) * range_res,
        max_velocity=c / (2.0 * f_c * config.chirp_to_chirp),
        velocity_res=c / (2.0 * f_c * (config.n_chirps / 2) * config.chirp_to_chirp),
        c=c,
    )


@dataclass(frozen=True, eq=False)
class RadarCube:
    """One raw frame of complex IF samples, shape (n_rx, n_chirps, n_samples)."""

    data: np.ndarray
    frame_index: int = 0
    config: RadarConfig = field(default_factory=RadarConfig)
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data.setflags(write=False)


def validate_cube(cube: RadarCube, config: RadarConfig | None = None) -> list[str]:
    """All shape / finiteness problems with ``cube``; empty means valid."""
    config = config or cube.config
    problems = []
    expected = (config.n_rx, config.n_chirps, config.n_samples)
    if cube.data.shape != expected:
        problems.append(f"shape {cube.data.shape} != expected {expected}")
    if not np.iscomplexobj(cube.data):
        problems.append(f"dtype {cube.data.dtype} is not complex")
    bad = np.argwhere(~np.isfinite(cube.data))
    for idx in bad[:10]:
        problems.append(f"non-finite sample at index {tuple(int(i) for i in idx)}")
    if len(bad) > 10:
        problems.append(f"... {len(bad) - 10} more non-finite samples")
    return problems

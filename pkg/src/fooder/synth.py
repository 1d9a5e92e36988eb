"""Point-scatterer FMCW IF frame synthesis and the default subject set.

IF model per scatterer, Rx channel ``q``, chirp ``m`` and fast-time sample
``n``::

    a * exp(j * (2*pi * f_b(r_m) * n / adc_rate + 2*pi * f_c * r_m / c + phase + rx_phase[q]))

with ``f_b(r) = 2 * S * r / c`` and ``r_m = r(t_m)`` sampled at the chirp
start time ``t_m = frame_index * T_f + m * T_cc``. The carrier term advances by
``2*pi * f_c * v * T_cc / c`` per chirp, which puts velocity ``v`` exactly at
Doppler offset ``v / velocity_res`` on an N_c-point Doppler axis.

All randomness uses numpy's PCG64 bit generator seeded through
``SeedSequence`` so streams are reproducible across platforms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .radar import SPEED_OF_LIGHT, ConfigError, RadarConfig, RadarCube, derive_params

RX_PHASE_OFFSETS = (0.0, math.pi / 7, math.pi / 3)
DEFAULT_RANGE = 0.25  # chin-rest distance from radar to face (m)

EXPRESSIONS = ("smile", "shock", "anger", "neutral")
DYNAMIC = frozenset({"smile", "shock"})
STATIC = frozenset({"anger", "neutral"})


def make_rng(*keys: int) -> np.random.Generator:
    """PCG64 generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys])))


@dataclass(frozen=True)
class Scatterer:
    range: float
    velocity: float = 0.0
    amplitude: float = 1.0
    micro_motion_amp: float = 0.0
    micro_motion_freq: float = 0.0
    # initial phase of both the return and the micro-motion sinusoid
    phase: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Scene:
    scatterers: tuple[Scatterer, ...] = ()
    noise_std: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {"scatterers": [s.to_dict() for s in self.scatterers], "noise_std": self.noise_std, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(tuple(Scatterer(**s) for s in d.get("scatterers", [])), d.get("noise_std", 0.0), d.get("seed", 0))


def _check_scene(scene: Scene, config: RadarConfig) -> None:
    dp = derive_params(config)
    if scene.noise_std < 0:
        raise ConfigError("noise_std must be >= 0")
    for s in scene.scatterers:
        if not 0 < s.range < dp.max_range:
            raise ConfigError(f"scatterer range {s.range} outside (0, {dp.max_range})")
        if abs(s.velocity) >= dp.max_velocity:
            raise ConfigError(f"scatterer velocity {s.velocity} outside +-{dp.max_velocity}")
        if s.amplitude < 0 or s.micro_motion_amp < 0:
            raise ConfigError("amplitude and micro_motion_amp must be >= 0")


def synth_frame(scene: Scene, config: RadarConfig, frame_index: int = 0) -> RadarCube:
    """Noiseless-sum-plus-noise IF cube for one frame, complex128."""
    _check_scene(scene, config)
    dp = derive_params(config)
    n_rx, n_c, n_s = config.n_rx, config.n_chirps, config.n_samples
    t = frame_index * config.frame_period + np.arange(n_c) * config.chirp_to_chirp  # (N_c,)
    n = np.arange(n_s) / config.adc_rate  # fast-time seconds
    rx = np.exp(1j * np.resize(np.asarray(RX_PHASE_OFFSETS), n_rx))
    acc = np.zeros((n_c, n_s), dtype=np.complex128)
    c = SPEED_OF_LIGHT
    for s in scene.scatterers:
        r = s.range + s.velocity * t
        if s.micro_motion_amp:
            r = r + s.micro_motion_amp * np.sin(2 * np.pi * s.micro_motion_freq * t + s.phase)
        f_b = 2.0 * dp.chirp_rate * r / c
        carrier = 2 * np.pi * dp.f_c * r / c + s.phase
        acc = acc + s.amplitude * np.exp(1j * (2 * np.pi * f_b[:, None] * n[None, :] + carrier[:, None]))
    data = rx[:, None, None] * acc[None]
    if scene.noise_std > 0:
        rng = make_rng(scene.seed, frame_index)
        sigma = scene.noise_std / math.sqrt(2.0)
        noise = rng.standard_normal((2, n_rx, n_c, n_s))
        data = data + sigma * (noise[0] + 1j * noise[1])
    return RadarCube(data, frame_index, config)


# -- subject profiles --------------------------------------------------------
@dataclass(frozen=True)
class Jitter:
    """Perturbation ranges; ``session_*`` drawn once per sequence, ``frame_*`` per frame."""

    session_range: float = 0.002  # m, uniform +-
    session_amp: float = 0.05  # relative, uniform +-
    session_freq: float = 0.1  # relative micro-motion frequency spread
    frame_range: float = 0.0006  # m, std of white per-frame head jitter
    sway_amp: float = 0.0  # m, slow sinusoidal head sway (amplitude drawn up to this per session)
    sway_freq: float = 0.3  # Hz, upper bound of the sway frequency
    frame_amp: float = 0.03  # relative std per frame
    session_phase: float = 0.05  # rad, uniform +-; relative phases otherwise follow geometry
    noise_std: float = 0.05


@dataclass(frozen=True)
class SubjectProfile:
    subject: str  # "id" or "ood-k"
    scatterers: tuple[Scatterer, ...]
    expression: str | None = None
    jitter: Jitter = field(default_factory=Jitter)

    @property
    def name(self) -> str:
        return self.expression if self.expression and self.subject == "id" else self.subject

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "expression": self.expression,
            "scatterers": [s.to_dict() for s in self.scatterers],
            "jitter": asdict(self.jitter),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubjectProfile":
        return cls(
            d["subject"],
            tuple(Scatterer(**s) for s in d["scatterers"]),
            d.get("expression"),
            Jitter(**d.get("jitter", {})),
        )


def synth_sequence(profile: SubjectProfile, n_frames: int, config: RadarConfig, seed: int) -> list[RadarCube]:
    """Consecutive frames of one recording session of ``profile``."""
    if n_frames <= 0:
        return []
    j = profile.jitter
    rng = make_rng(seed, 0xA11CE)
    k = len(profile.scatterers)
    offset = rng.uniform(-j.session_range, j.session_range)
    amp_scale = 1.0 + rng.uniform(-j.session_amp, j.session_amp, k)
    freq_scale = 1.0 + rng.uniform(-j.session_freq, j.session_freq, k)
    phases = rng.uniform(-j.session_phase, j.session_phase, k)
    sway_a = rng.uniform(0.5, 1.0) * j.sway_amp
    sway_f = rng.uniform(0.3, 1.0) * j.sway_freq
    sway_p = rng.uniform(0, 2 * np.pi)
    base = [
        replace(
            s,
            range=s.range + offset,
            amplitude=s.amplitude * amp_scale[i],
            micro_motion_freq=s.micro_motion_freq * freq_scale[i],
            phase=s.phase + phases[i],
        )
        for i, s in enumerate(profile.scatterers)
    ]
    labels = {"subject": profile.subject, "expression": profile.expression}
    frames = []
    for f in range(n_frames):
        fr = make_rng(seed, 0xF4A3E, f)
        sway = fr.normal(0.0, j.frame_range) + sway_a * math.sin(2 * np.pi * sway_f * f * config.frame_period + sway_p)
        amp = 1.0 + fr.normal(0.0, j.frame_amp, k)
        scats = tuple(replace(s, range=s.range + sway, amplitude=max(0.0, s.amplitude * amp[i])) for i, s in enumerate(base))
        cube = synth_frame(Scene(scats, j.noise_std, seed=(seed * 7919 + 17) & 0xFFFFFFFF), config, f)
        frames.append(RadarCube(cube.data, f, config, labels=dict(labels)))
    return frames


# -- default subject set -----------------------------------------------------
# facial points: (name, depth offset behind the nearest point in m, amplitude)
_FACE_POINTS = ("nose", "l_cheek", "r_cheek", "mouth", "chin", "brow", "l_eye", "r_eye", "neck", "chest")
_ID_FACE = {
    "nose": (0.000, 1.00),
    "l_cheek": (0.022, 0.65),
    "r_cheek": (0.026, 0.60),
    "mouth": (0.012, 0.55),
    "chin": (0.030, 0.70),
    "brow": (0.018, 0.80),
    "l_eye": (0.030, 0.35),
    "r_eye": (0.032, 0.35),
    "neck": (0.110, 0.60),
    "chest": (0.190, 1.20),
}
# physiological motion shared by every subject/expression: (point, amp m, freq Hz)
_PHYSIO = {"chest": (0.0015, 0.25), "neck": (0.0004, 1.1)}

# expression deltas for the face: point -> (depth shift m, amp scale, micro amp m, micro freq Hz)
_EXPRESSION_DELTAS = {
    "smile": {"l_cheek": (-0.006, 1.25, 0.002, 2.6), "r_cheek": (-0.006, 1.25, 0.002, 2.6), "mouth": (0.004, 1.3, 0.0015, 2.8)},
    "shock": {"mouth": (0.018, 0.6, 0.0025, 3.6), "chin": (0.020, 1.0, 0.002, 3.4), "l_eye": (-0.004, 1.4, 0.0012, 3.2), "r_eye": (-0.004, 1.4, 0.0012, 3.2)},
    "anger": {"brow": (-0.010, 1.5, 0.0003, 1.3), "mouth": (-0.006, 1.8, 0.0003, 1.2), "chin": (0.004, 1.3, 0.0002, 1.0)},
    "neutral": {"mouth": (0.0, 1.0, 0.00003, 0.5)},
}


def _face_scatterers(face: dict, physio: dict, expression: str | None, r0: float = DEFAULT_RANGE) -> tuple[Scatterer, ...]:
    deltas = _EXPRESSION_DELTAS.get(expression, {}) if expression else {}
    out = []
    for name in _FACE_POINTS:
        depth, amp = face[name]
        micro_a, micro_f = physio.get(name, (0.0, 0.0))
        if name in deltas:
            d_depth, d_amp, micro_a, micro_f = deltas[name]
            depth += d_depth
            amp *= d_amp
        out.append(Scatterer(range=r0 + depth, amplitude=amp, micro_motion_amp=micro_a, micro_motion_freq=micro_f))
    return tuple(out)


_OOD_FACE_SPREAD = 0.08  # m, uniform +- on facial depth offsets of other subjects
_OOD_BODY_SPREAD = 0.15  # m, same for neck and chest


def _ood_face(k: int) -> tuple[dict, dict]:
    rng = make_rng(0x00D, k)
    face = {}
    for name, (depth, amp) in _ID_FACE.items():
        if name in ("nose",):
            face[name] = (0.0, amp * rng.uniform(0.7, 1.3))
            continue
        spread = _OOD_BODY_SPREAD if name in ("neck", "chest") else _OOD_FACE_SPREAD
        face[name] = (max(0.002, depth + rng.uniform(-spread, spread)), amp * rng.uniform(0.5, 1.5))
    physio = {
        "chest": (0.0015 * rng.uniform(0.6, 1.4), 0.25 * rng.uniform(0.7, 1.4)),
        "neck": (0.0004 * rng.uniform(0.6, 1.4), 1.1 * rng.uniform(0.7, 1.4)),
    }
    return face, physio


def default_profiles(n_ood: int = 6) -> dict[str, SubjectProfile]:
    """ID subject at rest plus one profile per expression, and ``n_ood`` other subjects.

    OOD subjects carry no expression label; each of their sequences shows one
    of the four expressions (see :func:`profile_for_sequence`).
    """
    profiles = {"id": SubjectProfile("id", _face_scatterers(_ID_FACE, _PHYSIO, None))}
    for e in EXPRESSIONS:
        profiles[e] = SubjectProfile("id", _face_scatterers(_ID_FACE, _PHYSIO, e), expression=e)
    for k in range(1, n_ood + 1):
        face, physio = _ood_face(k)
        profiles[f"ood-{k}"] = SubjectProfile(f"ood-{k}", _face_scatterers(face, physio, None))
    return profiles


def ood_expression_profile(k: int, expression: str | None) -> SubjectProfile:
    face, physio = _ood_face(k)
    return SubjectProfile(f"ood-{k}", _face_scatterers(face, physio, expression))


def profile_for_sequence(profile: SubjectProfile, seq_index: int, seed: int) -> SubjectProfile:
    """OOD subjects vary expression between sessions; others are returned as-is."""
    if not profile.subject.startswith("ood-") or profile.expression is not None:
        return profile
    k = int(profile.subject.split("-")[1])
    choice = make_rng(seed, 0xE4, seq_index).integers(0, len(EXPRESSIONS) + 1)
    expr = None if choice == len(EXPRESSIONS) else EXPRESSIONS[choice]
    prof = ood_expression_profile(k, expr)
    return replace(prof, jitter=profile.jitter)


def expression_motion(profile: SubjectProfile) -> tuple[float, float]:
    """(max micro-motion amplitude, max micro-motion frequency) over the
    expression-driven facial points, excluding physiological motion."""
    if profile.expression is None:
        return 0.0, 0.0
    deltas = _EXPRESSION_DELTAS[profile.expression]
    return max(d[2] for d in deltas.values()), max(d[3] for d in deltas.values())

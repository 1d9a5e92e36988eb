"""Scorable sample assembly: RDI at frame t paired with the micro-RDI whose
8-frame window ends at t."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .dsp import MICRO_WINDOW, process_sequence
from .radar import RadarConfig
from .synth import EXPRESSIONS, SubjectProfile, default_profiles, profile_for_sequence, synth_sequence

PROFILE_SETS = ("default",)
DEFAULT_FRACTIONS = (0.7, 0.1, 0.2)  # train / cal / test


def entry_seed(seed: int, name: str, index: int) -> int:
    return (zlib.crc32(f"{seed}:{name}:{index}".encode()) & 0x7FFFFFFF)


@dataclass
class SampleSet:
    rdi: np.ndarray  # (N, 64, 64) float32
    micro: np.ndarray  # (N, 64, 64) float32
    subject: list[str] = field(default_factory=list)
    expression: list[str | None] = field(default_factory=list)
    sequence: list[str] = field(default_factory=list)
    frame: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rdi)

    @classmethod
    def empty(cls, side: int = 64) -> "SampleSet":
        z = np.zeros((0, side, side), dtype=np.float32)
        return cls(z, z.copy())

    def subset(self, mask) -> "SampleSet":
        idx = np.flatnonzero(np.asarray(mask))
        pick = lambda xs: [xs[i] for i in idx]  # noqa: E731
        return SampleSet(self.rdi[idx], self.micro[idx], pick(self.subject), pick(self.expression),
                         pick(self.sequence), pick(self.frame))

    @property
    def is_id(self) -> np.ndarray:
        return np.array([s == "id" for s in self.subject], dtype=bool)

    @staticmethod
    def concat(parts: list["SampleSet"]) -> "SampleSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return SampleSet.empty()
        return SampleSet(
            np.concatenate([p.rdi for p in parts]),
            np.concatenate([p.micro for p in parts]),
            sum((p.subject for p in parts), []),
            sum((p.expression for p in parts), []),
            sum((p.sequence for p in parts), []),
            sum((p.frame for p in parts), []),
        )


def pair_images(rdis: np.ndarray, micros: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Align per-frame RDIs (T, H, W) with window-end micro-RDIs (T-7, H, W)."""
    start = MICRO_WINDOW - 1
    if len(rdis) < MICRO_WINDOW:
        return rdis[:0], micros[:0], np.zeros(0, dtype=int)
    if len(micros) != len(rdis) - start:
        raise ValueError(f"{len(rdis)} RDIs need {len(rdis) - start} micro-RDIs, got {len(micros)}")
    return rdis[start:], micros, np.arange(start, len(rdis))


def synth_samples(profile: SubjectProfile, n_sequences: int, seq_len: int, seed: int,
                  config: RadarConfig | None = None, name: str | None = None, **pre) -> SampleSet:
    config = config or RadarConfig()
    name = name or profile.name
    parts = []
    for s in range(n_sequences):
        es = entry_seed(seed, name, s)
        prof = profile_for_sequence(profile, s, es)
        cubes = synth_sequence(prof, seq_len, config, es)
        rd, mi = process_sequence(cubes, **pre)
        r = np.array([x.data for x in rd], dtype=np.float32)
        m = np.array([x.data for x in mi], dtype=np.float32).reshape(-1, *r.shape[1:])
        r, m, frames = pair_images(r, m)
        k = len(r)
        parts.append(SampleSet(r, m, [profile.subject] * k, [profile.expression] * k, [f"{name}/{s}"] * k, list(frames)))
    return SampleSet.concat(parts)


# -- dataset plans -----------------------------------------------------------
@dataclass(frozen=True)
class PlannedSequence:
    """One recording session: which profile, how many frames, which split."""

    name: str  # profile key, e.g. "smile" or "ood-3"
    index: int
    subject: str
    expression: str | None
    split: str
    seed: int
    n_frames: int
    profile: SubjectProfile

    @property
    def key(self) -> str:
        return f"{self.name}_{self.index:03d}"

    def session_profile(self) -> SubjectProfile:
        """Profile actually recorded; OOD subjects vary expression by session."""
        return profile_for_sequence(self.profile, self.index, self.seed)

    def cubes(self, config: RadarConfig | None = None):
        return synth_sequence(self.session_profile(), self.n_frames, config or RadarConfig(), self.seed)


def split_counts(n: int, fractions=DEFAULT_FRACTIONS) -> tuple[int, int, int]:
    """Sequences per split; rounding favours train, then cal, test takes the rest."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n_train = min(n, round(fractions[0] * n))
    n_cal = min(n - n_train, round(fractions[1] * n))
    return n_train, n_cal, n - n_train - n_cal


def profile_set(name: str = "default") -> dict[str, SubjectProfile]:
    """ID subject's four expression profiles plus the six other subjects."""
    if name not in PROFILE_SETS:
        raise ValueError(f"unknown profile set {name!r}; expected one of {PROFILE_SETS}")
    profs = default_profiles()
    return {k: p for k, p in profs.items() if k in EXPRESSIONS or p.subject != "id"}


def plan_dataset(frames_per_subject: int, seq_len: int = 40, seed: int = 0, profiles: str = "default",
                 fractions=DEFAULT_FRACTIONS) -> list[PlannedSequence]:
    """Deterministic session plan.

    The ID subject records ``frames_per_subject`` frames of each expression;
    every OOD subject records ``frames_per_subject`` frames in total. Sessions
    are ``seq_len`` frames (the last one may be shorter). ID sessions split
    into train/cal/test by ``fractions``; OOD sessions are all held out for
    test since they must never reach training or calibration.
    """
    if frames_per_subject < 0:
        raise ValueError("frames_per_subject must be >= 0")
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    plan = []
    for name, prof in profile_set(profiles).items():
        n_seq = math.ceil(frames_per_subject / seq_len)
        lengths = [seq_len] * n_seq
        if n_seq and frames_per_subject % seq_len:
            lengths[-1] = frames_per_subject % seq_len
        if prof.subject == "id":
            n_train, n_cal, _ = split_counts(n_seq, fractions)
            splits = ["train"] * n_train + ["cal"] * n_cal
            splits += ["test"] * (n_seq - len(splits))
        else:
            splits = ["test"] * n_seq
        for i, (n, split) in enumerate(zip(lengths, splits)):
            plan.append(PlannedSequence(name, i, prof.subject, prof.expression, split, entry_seed(seed, name, i), n, prof))
    return plan


def sequence_samples(seq: PlannedSequence, config: RadarConfig | None = None, **pre) -> SampleSet:
    rd, mi = process_sequence(seq.cubes(config), **pre)
    return samples_from_images(seq, np.array([x.data for x in rd], dtype=np.float32),
                               np.array([x.data for x in mi], dtype=np.float32))


def samples_from_images(seq: PlannedSequence, rdis: np.ndarray, micros: np.ndarray) -> SampleSet:
    if len(rdis) == 0:
        return SampleSet.empty()
    micros = micros.reshape(-1, *rdis.shape[1:])
    r, m, frames = pair_images(rdis, micros)
    k = len(r)
    return SampleSet(r, m, [seq.subject] * k, [seq.expression] * k, [seq.key] * k, list(frames))


def materialize(plan: list[PlannedSequence], config: RadarConfig | None = None, **pre) -> dict[str, SampleSet]:
    """Synthesize and preprocess a plan in memory, grouped by split."""
    out = {}
    for split in ("train", "cal", "test"):
        out[split] = SampleSet.concat([sequence_samples(s, config, **pre) for s in plan if s.split == split])
    return out

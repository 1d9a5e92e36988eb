"""Authentication-gated expression recognition and the streaming replay loop."""

from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .auth import ID, OOD, AuthModel, forward_score, ScoreReport
from .dsp import Preprocessor
from .fer import Classification, FerCascade
from .radar import RadarCube


@dataclass
class GatedResult:
    decision: str  # ID | OOD
    score: ScoreReport
    expression: Classification | None = None


def gated_pipeline(auth: AuthModel, cascade: FerCascade, rdi: np.ndarray, micro: np.ndarray) -> GatedResult:
    """Score one (RDI, micro-RDI) pair; the cascade runs only on an ID decision."""
    if auth.threshold is None:
        raise ValueError("authenticator is not calibrated")
    rep = forward_score(auth, rdi, micro)
    if rep.decision == OOD:
        return GatedResult(OOD, rep)
    return GatedResult(ID, rep, cascade.classify(rdi, micro))


@dataclass
class FrameLog:
    frame: int
    timestamp: float  # seconds since stream start
    latency: float  # seconds spent processing this frame
    total: float | None = None
    decision: str | None = None  # None while the micro-RDI window is filling
    expression: str | None = None

    def replay_key(self) -> tuple:
        """Everything but the wall-clock fields."""
        return (self.frame, None if self.total is None else round(self.total, 12), self.decision, self.expression)


@dataclass
class StreamSummary:
    frames: int
    scored: int
    id_decisions: int
    specialist_evals: int
    latency_mean: float
    latency_p50: float
    latency_p99: float
    latency_max: float
    over_budget: list[int] = field(default_factory=list)  # frames slower than the frame period
    budget: float = 0.05

    def to_dict(self) -> dict:
        return dict(vars(self))


def stream(cubes: Iterable[RadarCube], auth: AuthModel, cascade: FerCascade, frame_period: float = 0.05,
           realtime: bool = False, preprocessor: Preprocessor | None = None, clock=time.perf_counter,
           sleep=time.sleep) -> tuple[list[FrameLog], StreamSummary]:
    """Strictly sequential replay: DSP, authentication, and (on ID) expression per frame.

    With ``realtime`` the loop waits for each frame's arrival slot
    ``k * frame_period`` before processing it. A frame index that does not
    increase marks the start of a new recording and resets the MTI and
    micro-RDI window state.
    """
    pre = preprocessor or Preprocessor()
    start_evals = cascade.specialist_evals
    logs: list[FrameLog] = []
    t0 = clock()
    last_index = None
    for k, cube in enumerate(cubes):
        if last_index is not None and cube.frame_index <= last_index:
            pre.reset()
        last_index = cube.frame_index
        if realtime:
            wait = t0 + k * frame_period - clock()
            if wait > 0:
                sleep(wait)
        t_in = clock()
        rdi, micro = pre.push(cube)
        entry = FrameLog(cube.frame_index, t_in - t0, 0.0)
        if micro is not None:
            res = gated_pipeline(auth, cascade, rdi.data, micro.data)
            entry.total, entry.decision = res.score.total, res.decision
            entry.expression = res.expression.label if res.expression else None
        entry.latency = clock() - t_in
        logs.append(entry)
    lat = np.array([e.latency for e in logs]) if logs else np.zeros(1)
    scored = [e for e in logs if e.decision is not None]
    summary = StreamSummary(
        frames=len(logs),
        scored=len(scored),
        id_decisions=sum(e.decision == ID for e in scored),
        specialist_evals=cascade.specialist_evals - start_evals,
        latency_mean=float(lat.mean()),
        latency_p50=float(np.percentile(lat, 50)),
        latency_p99=float(np.percentile(lat, 99)),
        latency_max=float(lat.max()),
        over_budget=[e.frame for e in logs if e.latency > frame_period],
        budget=frame_period,
    )
    return logs, summary


def _cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or "unknown"


def hardware_description() -> dict:
    """Host details reported next to latency figures."""
    return {"cpu": _cpu_model(), "machine": platform.machine(), "cpus": os.cpu_count(),
            "python": platform.python_version(), "numpy": np.__version__,
            "system": f"{platform.system()} {platform.release()}"}

"""Raw cube -> RDI / micro-RDI preprocessing.

RDI: range FFT -> Rx collapse -> frame-wise MTI -> Doppler FFT -> normalize.
Micro-RDI: range FFT -> Rx collapse -> stack 8 frames -> column/row mean
subtraction -> sinc low-pass along slow time -> Doppler FFT -> crop the
central Doppler bins -> normalize.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from .radar import RadarCube

MICRO_WINDOW = 8
IMAGE_SIDE = 64


@dataclass(frozen=True, eq=False)
class RangeProfile:
    """Complex range spectrum, (n_chirps, n_range_bins)."""

    data: np.ndarray
    frame_index: int = 0


@dataclass(frozen=True, eq=False)
class RDI:
    """Doppler x range magnitude in [0, 1]; zero velocity at row n_doppler/2."""

    data: np.ndarray
    frame_index: int = 0


@dataclass(frozen=True, eq=False)
class MicroRDI:
    data: np.ndarray
    window_end_frame: int = 0


@dataclass
class MtiState:
    alpha: float = 0.6
    reference: np.ndarray | None = None

    @property
    def initialized(self) -> bool:
        return self.reference is not None

    def reset(self) -> None:
        self.reference = None


def range_fft(cube: RadarCube) -> list[RangeProfile]:
    """Hann-windowed fast-time FFT per Rx, positive-range half."""
    x = np.asarray(cube.data)
    n_s = x.shape[-1]
    spec = np.fft.fft(x * np.hanning(n_s), axis=-1)[..., : n_s // 2]
    return [RangeProfile(spec[q], cube.frame_index) for q in range(spec.shape[0])]


def rx_collapse(profiles: Sequence[RangeProfile]) -> RangeProfile:
    """Average the Rx channels into one profile."""
    shapes = {p.data.shape for p in profiles}
    if len(shapes) != 1:
        raise ValueError(f"rx_collapse: profile shapes differ: {sorted(shapes)}")
    stack = np.stack([p.data for p in profiles])
    return RangeProfile(stack.mean(axis=0), profiles[0].frame_index)


def mti(profile: RangeProfile, state: MtiState) -> RangeProfile:
    """Subtract the running reference, then move it toward this frame by ``alpha``.

    The first frame of a sequence seeds the reference and yields zeros.
    """
    x = profile.data
    if state.reference is None:
        state.reference = x.copy()
        return RangeProfile(np.zeros_like(x), profile.frame_index)
    out = x - state.reference
    state.reference = state.reference + state.alpha * out
    return RangeProfile(out, profile.frame_index)


def normalize(image: np.ndarray) -> np.ndarray:
    """Per-image min-max scaling into [0, 1]; constant images map to zeros."""
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise ValueError("normalize: non-finite input")
    lo, hi = image.min(), image.max()
    if hi <= lo:
        return np.zeros_like(image)
    return (image - lo) / (hi - lo)


def doppler_fft(profile: RangeProfile) -> RDI:
    x = profile.data
    n_c = x.shape[0]
    spec = np.fft.fftshift(np.fft.fft(x * np.hanning(n_c)[:, None], axis=0), axes=0)
    return RDI(normalize(np.abs(spec)), profile.frame_index)


def sinc_kernel(cutoff: float = 0.125, taps: int = 31) -> np.ndarray:
    """Hamming-windowed sinc low-pass, unit DC gain."""
    if taps % 2 == 0:
        raise ValueError(f"sinc filter needs an odd tap count, got {taps}")
    if not 0 < cutoff < 0.5:
        raise ValueError(f"cutoff must be in (0, 0.5), got {cutoff}")
    n = np.arange(taps) - (taps - 1) / 2
    h = 2 * cutoff * np.sinc(2 * cutoff * n) * np.hamming(taps)
    return h / h.sum()


def sinc_filter(signal: np.ndarray, cutoff: float = 0.125, taps: int = 31, axis: int = 0) -> np.ndarray:
    """Zero-phase FIR low-pass, same length, reflect-padded edges."""
    h = sinc_kernel(cutoff, taps)
    x = np.asarray(signal)
    if np.iscomplexobj(x):
        return convolve1d(x.real, h, axis=axis, mode="mirror") + 1j * convolve1d(x.imag, h, axis=axis, mode="mirror")
    return convolve1d(x.astype(np.float64), h, axis=axis, mode="mirror")


def mean_subtract(block: np.ndarray) -> np.ndarray:
    """Remove per-column (slow-time) then per-row (fast-time) means."""
    block = block - block.mean(axis=0, keepdims=True)
    return block - block.mean(axis=1, keepdims=True)


def micro_spectrum(window: Sequence[RangeProfile], sinc_cutoff: float = 0.125, taps: int = 31,
                   out_bins: int = IMAGE_SIDE) -> np.ndarray:
    """Un-normalized magnitude of the central ``out_bins`` micro-Doppler bins."""
    if len(window) != MICRO_WINDOW:
        raise ValueError(f"micro_rdi needs {MICRO_WINDOW} frames, got {len(window)}")
    block = mean_subtract(np.concatenate([p.data for p in window], axis=0))
    block = sinc_filter(block, sinc_cutoff, taps, axis=0)
    n = block.shape[0]
    spec = np.fft.fftshift(np.fft.fft(block * np.hanning(n)[:, None], axis=0), axes=0)
    lo = n // 2 - out_bins // 2
    return np.abs(spec[lo : lo + out_bins])


def micro_rdi(window: Sequence[RangeProfile], sinc_cutoff: float = 0.125, taps: int = 31,
              out_bins: int = IMAGE_SIDE) -> MicroRDI:
    return MicroRDI(normalize(micro_spectrum(window, sinc_cutoff, taps, out_bins)), window[-1].frame_index)


RefinementHook = Callable[[np.ndarray], np.ndarray]


def identity_hook(image: np.ndarray) -> np.ndarray:
    return image


def refine(image: RDI | MicroRDI, hook: RefinementHook = identity_hook) -> RDI | MicroRDI:
    """Apply an image refinement hook; output must keep shape and [0, 1] range."""
    if hook is identity_hook:
        return image
    out = np.asarray(hook(image.data))
    if out.shape != image.data.shape:
        raise ValueError(f"refinement hook changed shape {image.data.shape} -> {out.shape}")
    if out.size and (out.min() < 0 or out.max() > 1 or not np.all(np.isfinite(out))):
        raise ValueError("refinement hook output left [0, 1]")
    if isinstance(image, RDI):
        return RDI(out, image.frame_index)
    return MicroRDI(out, image.window_end_frame)


@dataclass
class Preprocessor:
    """Stateful per-sequence front end producing (RDI, MicroRDI | None) per frame."""

    mti_alpha: float = 0.6
    sinc_cutoff: float = 0.125
    sinc_taps: int = 31
    hook: RefinementHook = identity_hook
    _mti: MtiState = field(init=False)
    _window: deque = field(init=False)

    def __post_init__(self):
        self._mti = MtiState(self.mti_alpha)
        self._window = deque(maxlen=MICRO_WINDOW)

    def reset(self) -> None:
        self._mti.reset()
        self._window.clear()

    def push(self, cube: RadarCube) -> tuple[RDI, MicroRDI | None]:
        prof = rx_collapse(range_fft(cube))
        rdi = refine(doppler_fft(mti(prof, self._mti)), self.hook)
        self._window.append(prof)
        micro = None
        if len(self._window) == MICRO_WINDOW:
            micro = refine(micro_rdi(list(self._window), self.sinc_cutoff, self.sinc_taps), self.hook)
        return rdi, micro


def process_sequence(cubes: Sequence[RadarCube], **kwargs) -> tuple[list[RDI], list[MicroRDI]]:
    """Every frame's RDI plus the micro-RDI of each full 8-frame window."""
    pre = Preprocessor(**kwargs)
    rdis, micros = [], []
    for cube in cubes:
        rdi, micro = pre.push(cube)
        rdis.append(rdi)
        if micro is not None:
            micros.append(micro)
    return rdis, micros

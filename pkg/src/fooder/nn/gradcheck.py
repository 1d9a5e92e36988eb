"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .layers import Module
from .tensor import Tensor


@dataclass
class GradCheckReport:
    # layer (module path) -> max relative error over its parameters
    per_layer: dict[str, float] = field(default_factory=dict)
    input_error: float | None = None

    @property
    def max_error(self) -> float:
        vals = list(self.per_layer.values())
        if self.input_error is not None:
            vals.append(self.input_error)
        return max(vals) if vals else 0.0


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``.

    Element-wise ratios blow up on entries whose true gradient is ~0, where
    finite differences only resolve round-off, so the norm form is used. The
    floor covers parameters with identically zero gradient (e.g. a bias that
    softmax is invariant to).
    """
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(num / den)


def _fd(fn: Callable[[], float], arr: np.ndarray, idx: np.ndarray, h: float) -> np.ndarray:
    flat = arr.reshape(-1)
    if not np.shares_memory(flat, arr):
        raise ValueError("finite differences need a contiguous array")
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        out[j] = (fp - fm) / (2 * h)
    return out


def grad_check(
    model: Module,
    x: np.ndarray,
    h: float = 1e-4,
    max_per_param: int = 100,
    check_input: bool = False,
    seed: int = 0,
    loss_fn: Callable[[Tensor], Tensor] | None = None,
) -> GradCheckReport:
    """Compare backprop gradients with central differences.

    The model must already be in float64 (``model.astype(np.float64)``). The
    scalar objective is ``sum(out * R)`` for a fixed random ``R`` unless
    ``loss_fn`` is given. Each parameter tensor contributes a random subsample
    of at most ``max_per_param`` coordinates; frozen parameters are skipped.
    """
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    for _, p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check requires a float64 model")
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x, requires_grad=check_input)
    probe = None

    def objective(t: Tensor) -> Tensor:
        nonlocal probe
        out = model(t)
        if loss_fn is not None:
            return loss_fn(out)
        if probe is None:
            probe = np.random.default_rng(seed + 1).standard_normal(out.shape)
        return (out * probe).sum()

    model.zero_grad()
    loss = objective(xt)
    loss.backward()

    def value() -> float:
        return float(objective(Tensor(xt.data)).data)

    report = GradCheckReport()
    for name, p in params:
        size = p.data.size
        idx = np.arange(size) if size <= max_per_param else rng.choice(size, max_per_param, replace=False)
        numeric = _fd(value, p.data, idx, h)
        analytic = p.grad.reshape(-1)[idx]
        layer = name.rsplit(".", 1)[0] if "." in name else name
        err = relative_error(analytic, numeric)
        report.per_layer[layer] = max(report.per_layer.get(layer, 0.0), err)
    if check_input:
        size = x.size
        idx = np.arange(size) if size <= max_per_param else rng.choice(size, max_per_param, replace=False)
        numeric = _fd(value, xt.data, idx, h)
        report.input_error = relative_error(xt.grad.reshape(-1)[idx], numeric)
    return report

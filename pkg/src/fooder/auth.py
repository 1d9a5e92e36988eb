"""Reconstruction-based facial authentication (one-class OOD detector).

Two convolutional encoder/decoder pairs (RDI and micro-RDI branches), each
with an intermediate linear encoder-decoder (ILED) in front of the decoder's
last upsampling layer. The anomaly score is the sum of four MSE terms.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .nn import Tensor, no_grad
from .nn.losses import per_sample_mse
from .synth import make_rng

log = logging.getLogger(__name__)

ID, OOD = "ID", "OOD"
SCORE_TERMS = ("mse_R", "mse_mR", "mse_iled_R", "mse_iled_mR")
ABLATIONS = {
    "full": SCORE_TERMS,
    "rdi": ("mse_R", "mse_iled_R"),
    "micro": ("mse_mR", "mse_iled_mR"),
    "bp": ("mse_R", "mse_mR"),
    "iled": ("mse_iled_R", "mse_iled_mR"),
}


@dataclass
class AuthConfig:
    input_side: int = 64
    latent: int = 128
    slope: float = 0.01
    iled_mode: str = "inline"  # or "side": ILED only feeds the loss/score
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    # re-estimate batch-norm statistics over the whole training set once training ends
    recalibrate_bn: bool = True

    def __post_init__(self):
        if self.input_side % 8:
            raise ValueError("input_side must be divisible by 8")
        if self.iled_mode not in ("inline", "side"):
            raise ValueError(f"unknown iled_mode {self.iled_mode!r}")


# Layers feeding a batch norm carry no bias: the norm cancels any per-channel
# shift, so such a bias would only add parameters with zero gradient.
def _down(c_in, c_out, slope, rng):
    return [nn.Conv2d(c_in, c_out, 3, 2, 1, bias=False, rng=rng), nn.BatchNorm2d(c_out), nn.LeakyReLU(slope)]


class Encoder(nn.Sequential):
    def __init__(self, slope: float, rng):
        super().__init__(*_down(1, 16, slope, rng), *_down(16, 32, slope, rng), *_down(32, 64, slope, rng))


class Decoder(nn.Module):
    """64x(s/8) -> 32x(s/4) -> 16x(s/2) [feature F] -> 1xs with sigmoid."""

    def __init__(self, slope: float, rng):
        super().__init__()
        self.up = nn.Sequential(
            nn.ConvTranspose2d(64, 32, 3, 2, 1, 1, bias=False, rng=rng), nn.BatchNorm2d(32), nn.LeakyReLU(slope),
            nn.ConvTranspose2d(32, 16, 3, 2, 1, 1, bias=False, rng=rng), nn.BatchNorm2d(16), nn.LeakyReLU(slope),
        )
        self.last = nn.ConvTranspose2d(16, 1, 3, 2, 1, 1, rng=rng)
        self.out = nn.Sigmoid()

    def features(self, z: Tensor) -> Tensor:
        return self.up(z)

    def head(self, f: Tensor) -> Tensor:
        return self.out(self.last(f))

    def forward(self, z):
        return self.head(self.features(z))


class ILED(nn.Module):
    """flatten -> linear(D->latent) -> BN -> linear(latent->D) -> BN -> reshape."""

    def __init__(self, feature_shape: tuple[int, int, int], latent: int, rng):
        super().__init__()
        self.feature_shape = tuple(feature_shape)
        d = int(np.prod(feature_shape))
        self.flatten = nn.Flatten()
        self.enc = nn.Linear(d, latent, bias=False, rng=rng)
        self.enc_bn = nn.BatchNorm1d(latent)
        self.dec = nn.Linear(latent, d, bias=False, rng=rng)
        self.dec_bn = nn.BatchNorm1d(d)
        self.reshape = nn.Reshape(self.feature_shape)

    def forward(self, f):
        h = self.enc_bn(self.enc(self.flatten(f)))
        return self.reshape(self.dec_bn(self.dec(h)))


class BodyPart(nn.Module):
    def __init__(self, slope: float, rng):
        super().__init__()
        self.encoder_R = Encoder(slope, rng)
        self.decoder_R = Decoder(slope, rng)
        self.encoder_mR = Encoder(slope, rng)
        self.decoder_mR = Decoder(slope, rng)


@dataclass
class ScoreReport:
    mse_R: float
    mse_mR: float
    mse_iled_R: float
    mse_iled_mR: float
    decision: str | None = None
    warning: str | None = None

    @property
    def total(self) -> float:
        return self.mse_R + self.mse_mR + self.mse_iled_R + self.mse_iled_mR


class AuthModel(nn.Module):
    def __init__(self, config: AuthConfig | None = None):
        super().__init__()
        self.config = config or AuthConfig()
        rng = make_rng(self.config.seed, 0xA07)
        s = self.config.input_side
        self.body_part = BodyPart(self.config.slope, rng)
        feat = (16, s // 2, s // 2)
        self.iled_R = ILED(feat, self.config.latent, rng)
        self.iled_mR = ILED(feat, self.config.latent, rng)
        self.threshold: float | None = None
        self.history: list[dict] = []
        self.assign_names()

    def _branch(self, x: Tensor, enc, dec, iled) -> tuple[Tensor, Tensor, Tensor]:
        f = dec.features(enc(x))
        f_hat = iled(f)
        recon = dec.head(f_hat if self.config.iled_mode == "inline" else f)
        return recon, f, f_hat

    def forward(self, x_r: Tensor, x_mr: Tensor) -> dict[str, tuple[Tensor, Tensor]]:
        """(target, reconstruction) pair per score term; inputs are (N, 1, s, s)."""
        bp = self.body_part
        rec_r, f_r, fh_r = self._branch(x_r, bp.encoder_R, bp.decoder_R, self.iled_R)
        rec_m, f_m, fh_m = self._branch(x_mr, bp.encoder_mR, bp.decoder_mR, self.iled_mR)
        return {
            "mse_R": (x_r, rec_r),
            "mse_mR": (x_mr, rec_m),
            "mse_iled_R": (f_r, fh_r),
            "mse_iled_mR": (f_m, fh_m),
        }

    def check_input(self, rdi: np.ndarray, micro: np.ndarray) -> None:
        s = self.config.input_side
        for name, arr in (("rdi", rdi), ("micro", micro)):
            if arr.shape[-2:] != (s, s):
                raise nn.ShapeError(f"{name}: expected trailing shape ({s}, {s}), got {arr.shape}")

    def score_terms(self, rdi: np.ndarray, micro: np.ndarray, batch_size: int = 64) -> dict[str, np.ndarray]:
        """Per-sample score terms for arrays of shape (N, s, s), float64 output."""
        rdi, micro = np.asarray(rdi), np.asarray(micro)
        if rdi.ndim == 2:
            rdi, micro = rdi[None], micro[None]
        self.check_input(rdi, micro)
        was_training = self.training
        self.eval()
        out = {k: [] for k in SCORE_TERMS}
        dtype = self.body_part.encoder_R[0].weight.dtype
        with no_grad():
            for i in range(0, len(rdi), batch_size):
                xr = Tensor(rdi[i : i + batch_size, None].astype(dtype))
                xm = Tensor(micro[i : i + batch_size, None].astype(dtype))
                for k, (a, b) in self(xr, xm).items():
                    out[k].append(per_sample_mse(a.data.astype(np.float64), b.data.astype(np.float64)))
        self.train(was_training)
        return {k: np.concatenate(v) if v else np.zeros(0) for k, v in out.items()}

    def scores(self, rdi, micro, ablation: str = "full", batch_size: int = 64) -> np.ndarray:
        terms = self.score_terms(rdi, micro, batch_size)
        return ablation_score(terms, ablation)


def ablation_score(terms: dict[str, np.ndarray], ablation: str = "full") -> np.ndarray:
    keys = ABLATIONS[ablation]
    total = terms[keys[0]].copy()
    for k in keys[1:]:
        total = total + terms[k]
    return total


def decide(total: float, threshold: float) -> str:
    """OOD iff the score strictly exceeds the threshold."""
    return OOD if total > threshold else ID


def forward_score(model: AuthModel, rdi: np.ndarray, micro: np.ndarray) -> ScoreReport:
    terms = model.score_terms(np.asarray(rdi)[None], np.asarray(micro)[None])
    rep = ScoreReport(*(float(terms[k][0]) for k in SCORE_TERMS))
    if model.threshold is None:
        rep.warning = "model is not calibrated; no decision"
        warnings.warn(rep.warning, stacklevel=2)
    else:
        rep.decision = decide(rep.total, model.threshold)
    return rep


def calibrate_threshold(id_scores, tpr: float = 0.95) -> float:
    """Nearest-rank ``tpr`` quantile of in-distribution calibration scores."""
    s = np.sort(np.asarray(id_scores, dtype=np.float64))
    if len(s) < 20:
        raise ValueError(f"need at least 20 calibration samples, got {len(s)}")
    rank = math.ceil(round(tpr * len(s), 9))
    return float(s[max(rank, 1) - 1])


def calibrate(model: AuthModel, rdi, micro, labels=None, tpr: float = 0.95) -> float:
    if labels is not None and any(lbl != "id" for lbl in labels):
        raise ValueError("calibration data must be in-distribution only")
    model.threshold = calibrate_threshold(model.scores(rdi, micro), tpr)
    return model.threshold


def train_auth(rdi: np.ndarray, micro: np.ndarray, labels=None, config: AuthConfig | None = None,
               progress=None) -> AuthModel:
    """Jointly minimize the four reconstruction losses with Adamax on ID data."""
    config = config or AuthConfig()
    rdi, micro = np.asarray(rdi, dtype=np.float32), np.asarray(micro, dtype=np.float32)
    if len(rdi) == 0:
        raise ValueError("empty training set")
    if len(rdi) != len(micro):
        raise ValueError("rdi/micro length mismatch")
    if labels is not None and any(lbl != "id" for lbl in labels):
        raise ValueError("training data must contain in-distribution samples only")
    model = AuthModel(config)
    model.check_input(rdi, micro)
    opt = nn.Adamax(model.parameters(), lr=config.learning_rate)
    rng = make_rng(config.seed, 0x7EA1)
    n = len(rdi)
    bs = min(config.batch_size, n)
    model.train()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = {k: 0.0 for k in ("loss", "L_BP", "L_ILED")}
        steps = 0
        for i in range(0, n, bs):
            idx = order[i : i + bs]
            if len(idx) < 2 and n > 1:
                continue  # batch norm needs >1 sample
            terms = model(Tensor(rdi[idx, None]), Tensor(micro[idx, None]))
            losses = {k: nn.mse(a, b) for k, (a, b) in terms.items()}
            l_bp = losses["mse_R"] + losses["mse_mR"]
            l_iled = losses["mse_iled_R"] + losses["mse_iled_mR"]
            loss = l_bp + l_iled
            opt.zero_grad()
            loss.backward()
            opt.step()
            step = {"epoch": epoch, "loss": loss.item(), "L_BP": l_bp.item(), "L_ILED": l_iled.item()}
            step.update({k: v.item() for k, v in losses.items()})
            model.history.append(step)
            for k in sums:
                sums[k] += step[k]
            steps += 1
        if progress is not None:
            progress(epoch, {k: v / max(steps, 1) for k, v in sums.items()})
        log.info("auth epoch %d loss %.5f", epoch, sums["loss"] / max(steps, 1))
    if config.recalibrate_bn:
        recalibrate_bn(model, rdi, micro)
    model.eval()
    return model


def recalibrate_bn(model: AuthModel, rdi: np.ndarray, micro: np.ndarray, batch_size: int = 64) -> None:
    """Population batch-norm statistics from ID data, in place.

    Running averages gathered during small-batch training trail the weights
    and are noisy; scoring with them inflates held-out reconstruction error.
    """
    n = len(rdi)
    if n < 2:
        return  # a single sample has no batch variance to measure
    spans = [(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]
    if len(spans) > 1 and spans[-1][1] - spans[-1][0] < 2:
        spans[-2] = (spans[-2][0], n)
        spans.pop()
    nn.recalibrate_batchnorm(
        model, lambda s: model(Tensor(rdi[s[0] : s[1], None]), Tensor(micro[s[0] : s[1], None])), spans
    )


def epoch_means(history: list[dict], key: str = "loss") -> list[float]:
    by_epoch: dict[int, list[float]] = {}
    for h in history:
        by_epoch.setdefault(h["epoch"], []).append(h[key])
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def config_dict(model: AuthModel) -> dict:
    return asdict(model.config)

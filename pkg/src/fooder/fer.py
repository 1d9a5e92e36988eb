"""Hierarchical facial-expression classifier.

A residual gate decides dynamic vs static from the channel-stacked
(RDI, micro-RDI) pair; a separable-attention specialist then resolves
smile/shock, or a multi-head-attention specialist resolves anger/neutral.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Tensor, no_grad
from .nn.tensor import sigmoid
from .synth import make_rng

log = logging.getLogger(__name__)

EXPRESSIONS = ("smile", "shock", "anger", "neutral")
CATEGORY = {"smile": "dynamic", "shock": "dynamic", "anger": "static", "neutral": "static"}
SPECIALIST_CLASSES = {"mvit2-lite": ("smile", "shock"), "mvit-lite": ("anger", "neutral")}


def category(label: str) -> str:
    try:
        return CATEGORY[label]
    except KeyError:
        raise ValueError(f"unknown expression {label!r}") from None


def concat_modalities(rdi: np.ndarray, micro: np.ndarray) -> np.ndarray:
    """Stack RDI (channel 0) and micro-RDI (channel 1): (..., H, W) -> (..., 2, H, W)."""
    rdi, micro = np.asarray(rdi), np.asarray(micro)
    if rdi.shape != micro.shape:
        raise ValueError(f"modality shapes differ: {rdi.shape} vs {micro.shape}")
    return np.stack([rdi, micro], axis=-3)


def split_modalities(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x[..., 0, :, :], x[..., 1, :, :]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0


# -- networks ------------------------------------------------------------------
def _conv_bn(c_in, c_out, stride, rng, act="leaky"):
    layers = [nn.Conv2d(c_in, c_out, 3, stride, 1, rng=rng), nn.BatchNorm2d(c_out)]
    layers.append(nn.ReLU() if act == "relu" else nn.LeakyReLU(0.01))
    return layers


class GateNet(nn.Module):
    """ResNet18 stage layout (4 stages x 2 basic blocks) at reduced width."""

    def __init__(self, in_ch: int = 2, width: int = 16, n_out: int = 1, seed: int = 0):
        super().__init__()
        rng = make_rng(seed, 0x6A7E)
        self.width, self.n_out = width, n_out
        self.stem = nn.Sequential(*_conv_bn(in_ch, width, 2, rng, act="relu"))
        blocks = []
        c = width
        # stage 1 also downsamples, standing in for the reference stem max-pool
        for mult in (1, 2, 4, 8):
            out = width * mult
            blocks.append(nn.ResidualBlock(c, out, 2, rng=rng))
            blocks.append(nn.ResidualBlock(out, out, 1, rng=rng))
            c = out
        self.stages = nn.Sequential(*blocks)
        self.pool = nn.GlobalAvgPool()
        self.head = nn.Linear(c, n_out, rng=rng)
        self.assign_names()

    def features(self, x: Tensor) -> Tensor:
        """Pooled penultimate activations, (N, 8 * width)."""
        return self.pool(self.stages(self.stem(x)))

    def logits(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))

    def forward(self, x: Tensor) -> Tensor:
        out = self.logits(x)
        return sigmoid(out) if self.n_out == 1 else out


class HybridBlock(nn.Module):
    """Local conv, patch-token transformer layer, fold back and fuse."""

    def __init__(self, channels: int, side: int, dim: int, attention: str, heads: int, rng, patch: int = 2):
        super().__init__()
        self.local = nn.Sequential(nn.Conv2d(channels, channels, 3, 1, 1, rng=rng), nn.BatchNorm2d(channels), nn.LeakyReLU(0.01))
        self.patchify = nn.Patchify(patch)
        tok = channels * patch * patch
        self.embed = nn.Linear(tok, dim, rng=rng)
        self.norm1 = nn.LayerNorm(dim)
        if attention == "separable":
            self.attn = nn.SeparableAttention(dim, rng=rng)
        else:
            self.attn = nn.MultiHeadAttention(dim, heads, rng=rng)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim, rng=rng), nn.LeakyReLU(0.01), nn.Linear(2 * dim, dim, rng=rng))
        self.unembed = nn.Linear(dim, tok, rng=rng)
        self.fold = nn.Unpatchify(channels, side, side, patch)
        self.fuse = nn.Sequential(nn.Conv2d(2 * channels, channels, 1, 1, 0, rng=rng), nn.BatchNorm2d(channels), nn.LeakyReLU(0.01))

    def forward(self, x):
        h = self.local(x)
        t = self.embed(self.patchify(h))
        t = t + self.attn(self.norm1(t))
        t = t + self.mlp(self.norm2(t))
        g = self.fold(self.unembed(t))
        return self.fuse(nn.concat([x, g], axis=1))


class SpecialistNet(nn.Module):
    """Conv stem + two hybrid conv/attention stages + pooled 2-logit head."""

    def __init__(self, kind: str, in_ch: int = 2, side: int = 64, dim: int = 64, heads: int = 2, seed: int = 0):
        super().__init__()
        if kind not in SPECIALIST_CLASSES:
            raise ValueError(f"unknown specialist kind {kind!r}")
        rng = make_rng(seed, 0x5BEC)
        self.kind, self.dim, self.heads = kind, dim, heads
        attention = "separable" if kind == "mvit2-lite" else "mha"
        self.stem = nn.Sequential(*_conv_bn(in_ch, 16, 2, rng), *_conv_bn(16, 32, 2, rng))
        self.stage1 = HybridBlock(32, side // 4, dim, attention, heads, rng)
        self.down = nn.Sequential(*_conv_bn(32, 64, 2, rng))
        self.stage2 = HybridBlock(64, side // 8, dim, attention, heads, rng)
        self.pool = nn.GlobalAvgPool()
        self.head = nn.Linear(64, 2, rng=rng)
        self.assign_names()

    @property
    def classes(self) -> tuple[str, str]:
        return SPECIALIST_CLASSES[self.kind]

    def forward(self, x):
        h = self.stage2(self.down(self.stage1(self.stem(x))))
        return self.head(self.pool(h))


# -- training ----------------------------------------------------------------
def _check_input(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4 or x.shape[1] != 2:
        raise nn.ShapeError(f"expected (N, 2, H, W) stacked input, got {x.shape}")
    return x


def _fit(model: nn.Module, x: np.ndarray, y: np.ndarray, loss_kind: str, cfg: TrainConfig) -> list[dict]:
    opt = nn.Adam(model.parameters(), lr=cfg.learning_rate)
    rng = make_rng(cfg.seed, 0xF17)
    n = len(x)
    history = []
    model.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        tot, correct, seen = 0.0, 0, 0
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            if len(idx) < 2:
                continue
            xb = Tensor(x[idx])
            if loss_kind == "bce":
                p = model(xb)
                loss = nn.bce(p, y[idx].astype(np.float32)[:, None])
                pred = (p.data[:, 0] > 0.5).astype(int)
            else:
                logits = model(xb)
                loss = nn.cross_entropy(logits, y[idx])
                pred = logits.data.argmax(axis=1)
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item() * len(idx)
            correct += int((pred == y[idx]).sum())
            seen += len(idx)
        rec = {"epoch": epoch, "loss": tot / max(seen, 1), "train_accuracy": correct / max(seen, 1)}
        history.append(rec)
        log.info("%s epoch %d loss %.4f acc %.4f", type(model).__name__, epoch, rec["loss"], rec["train_accuracy"])
    model.eval()
    return history


def train_gate(x: np.ndarray, labels, cfg: TrainConfig | None = None, width: int = 16) -> GateNet:
    """Binary dynamic(1)/static(0) gate trained on all four expressions."""
    cfg = cfg or TrainConfig()
    x = _check_input(x)
    labels = list(labels)
    missing = set(EXPRESSIONS) - set(labels)
    if missing:
        raise ValueError(f"gate training needs all four expressions; missing {sorted(missing)}")
    y = np.array([1 if category(lbl) == "dynamic" else 0 for lbl in labels])
    gate = GateNet(width=width, seed=cfg.seed)
    gate.history = _fit(gate, x, y, "bce", cfg)
    gate.train_accuracy = gate.history[-1]["train_accuracy"] if gate.history else None
    return gate


def train_specialist(kind: str, x: np.ndarray, labels, cfg: TrainConfig | None = None, dim: int = 64,
                     heads: int = 2) -> SpecialistNet:
    cfg = cfg or TrainConfig()
    if kind not in SPECIALIST_CLASSES:
        raise ValueError(f"unknown specialist kind {kind!r}")
    classes = SPECIALIST_CLASSES[kind]
    labels = list(labels)
    bad = sorted(set(labels) - set(classes))
    if bad:
        raise ValueError(f"{kind} trains on {classes} only; got {bad}")
    if len(set(labels)) < 2:
        raise ValueError(f"{kind} needs both classes {classes}")
    x = _check_input(x)
    y = np.array([classes.index(lbl) for lbl in labels])
    net = SpecialistNet(kind, dim=dim, heads=heads, seed=cfg.seed)
    net.history = _fit(net, x, y, "ce", cfg)
    return net


def train_flat(x: np.ndarray, labels, cfg: TrainConfig | None = None, width: int = 16) -> GateNet:
    """Single 4-way classifier on the gate backbone, for the hierarchy comparison."""
    cfg = cfg or TrainConfig()
    x = _check_input(x)
    y = np.array([EXPRESSIONS.index(lbl) for lbl in labels])
    net = GateNet(width=width, n_out=4, seed=cfg.seed)
    net.history = _fit(net, x, y, "ce", cfg)
    return net


def flat_outputs(net: GateNet, x: np.ndarray, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """(logits, pooled features) of a flat classifier, float64, for the baseline scores."""
    x = _check_input(x)
    logits, feats = [], []
    with no_grad():
        for i in range(0, len(x), batch_size):
            f = net.features(Tensor(x[i : i + batch_size]))
            feats.append(f.data)
            logits.append(net.head(f).data)
    if not logits:
        return np.zeros((0, net.n_out)), np.zeros((0, 8 * net.width))
    return np.concatenate(logits).astype(np.float64), np.concatenate(feats).astype(np.float64)


def predict_flat(net: GateNet, x: np.ndarray, batch_size: int = 64) -> list[str]:
    logits, _ = flat_outputs(net, x, batch_size)
    return [EXPRESSIONS[i] for i in logits.argmax(axis=1)]


# -- inference ---------------------------------------------------------------
def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Classification:
    label: str
    gate_prob: float
    specialist_probs: tuple[float, float]
    routed: str  # "dynamic" | "static"


@dataclass
class FerCascade:
    gate: GateNet
    dynamic_specialist: SpecialistNet
    static_specialist: SpecialistNet
    gate_threshold: float = 0.5
    specialist_evals: int = 0
    route_log: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.dynamic_specialist.kind != "mvit2-lite" or self.static_specialist.kind != "mvit-lite":
            raise ValueError("dynamic specialist must be mvit2-lite and static specialist mvit-lite")
        for net in (self.gate, self.dynamic_specialist, self.static_specialist):
            net.freeze()

    def gate_probs(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        x = _check_input(x)
        out = []
        with no_grad():
            for i in range(0, len(x), batch_size):
                out.append(self.gate(Tensor(x[i : i + batch_size])).data[:, 0])
        return np.concatenate(out).astype(np.float64) if out else np.zeros(0)

    def _specialist_probs(self, net: SpecialistNet, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        with no_grad():
            for i in range(0, len(x), batch_size):
                out.append(_softmax(net(Tensor(x[i : i + batch_size])).data.astype(np.float64)))
        self.specialist_evals += len(x)
        return np.concatenate(out) if out else np.zeros((0, 2))

    def classify_batch(self, x: np.ndarray, batch_size: int = 64) -> list[Classification]:
        """Route every sample through the gate and exactly one specialist."""
        x = _check_input(x)
        g = self.gate_probs(x, batch_size)
        dyn = g > self.gate_threshold
        results: list[Classification | None] = [None] * len(x)
        for mask, net, routed in ((dyn, self.dynamic_specialist, "dynamic"), (~dyn, self.static_specialist, "static")):
            idx = np.flatnonzero(mask)
            if len(idx) == 0:
                continue
            probs = self._specialist_probs(net, x[idx], batch_size)
            for j, i in enumerate(idx):
                p = probs[j]
                results[i] = Classification(net.classes[int(p.argmax())], float(g[i]), (float(p[0]), float(p[1])), routed)
                self.route_log.append(routed)
        return results  # type: ignore[return-value]

    def classify(self, rdi: np.ndarray, micro: np.ndarray) -> Classification:
        return self.classify_batch(concat_modalities(rdi, micro)[None])[0]


def classify(cascade: FerCascade, rdi: np.ndarray, micro: np.ndarray) -> Classification:
    return cascade.classify(rdi, micro)


def arch_dict(net: nn.Module) -> dict:
    if isinstance(net, GateNet):
        return {"kind": "gate", "width": net.width, "n_out": net.n_out}
    if isinstance(net, SpecialistNet):
        return {"kind": net.kind, "dim": net.dim, "heads": net.heads}
    raise TypeError(type(net))


def build_from_arch(arch: dict) -> nn.Module:
    if arch["kind"] == "gate":
        return GateNet(width=arch["width"], n_out=arch.get("n_out", 1))
    return SpecialistNet(arch["kind"], dim=arch["dim"], heads=arch["heads"])


__all__ = [
    "CATEGORY", "Classification", "EXPRESSIONS", "FerCascade", "GateNet", "SpecialistNet", "TrainConfig",
    "arch_dict", "build_from_arch", "category", "classify", "concat_modalities", "flat_outputs",
    "predict_flat", "split_modalities", "train_flat", "train_gate", "train_specialist",
]

"""Model <-> Checkpoint conversion for the authenticator and FER networks."""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from ..auth import AuthConfig, AuthModel
from ..fer import FerCascade, GateNet, SpecialistNet, arch_dict, build_from_arch
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint

AUTH_KIND = "rfood"


def _history(hist) -> list:
    return [{k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in h.items()} for h in hist]


def auth_to_checkpoint(model: AuthModel, extra: dict | None = None) -> Checkpoint:
    meta = {
        "config": asdict(model.config),
        "seed": model.config.seed,
        "threshold": model.threshold,
        "loss_history": _history(model.history),
    }
    meta.update(extra or {})
    return Checkpoint(AUTH_KIND, dict(model.state_dict()), meta)


def auth_from_checkpoint(ckpt: Checkpoint) -> AuthModel:
    if ckpt.kind != AUTH_KIND:
        raise CheckpointError(f"expected an {AUTH_KIND!r} checkpoint, got {ckpt.kind!r}")
    model = AuthModel(AuthConfig(**ckpt.metadata["config"]))
    model.load_state_dict(ckpt.state)
    model.threshold = ckpt.metadata.get("threshold")
    model.history = list(ckpt.metadata.get("loss_history", []))
    model.eval()
    return model


def save_auth(path, model: AuthModel, extra: dict | None = None) -> None:
    save_checkpoint(path, auth_to_checkpoint(model, extra))


def load_auth(path) -> AuthModel:
    return auth_from_checkpoint(load_checkpoint(path, AUTH_KIND))


def fer_to_checkpoint(net: GateNet | SpecialistNet, extra: dict | None = None) -> Checkpoint:
    arch = arch_dict(net)
    meta = {"arch": arch, "loss_history": _history(getattr(net, "history", []))}
    meta.update(extra or {})
    return Checkpoint(f"fer-{arch['kind']}", dict(net.state_dict()), meta)


def fer_from_checkpoint(ckpt: Checkpoint):
    if not ckpt.kind.startswith("fer-"):
        raise CheckpointError(f"expected a FER checkpoint, got {ckpt.kind!r}")
    net = build_from_arch(ckpt.metadata["arch"])
    net.load_state_dict(ckpt.state)
    net.history = list(ckpt.metadata.get("loss_history", []))
    net.eval()
    return net


def save_fer(path, net, extra: dict | None = None) -> None:
    save_checkpoint(path, fer_to_checkpoint(net, extra))


def load_fer(path):
    return fer_from_checkpoint(load_checkpoint(path))


def load_cascade(gate_path, dynamic_path, static_path, gate_threshold: float = 0.5) -> FerCascade:
    gate, dyn, sta = load_fer(gate_path), load_fer(dynamic_path), load_fer(static_path)
    if not isinstance(gate, GateNet) or not isinstance(dyn, SpecialistNet) or not isinstance(sta, SpecialistNet):
        raise CheckpointError("cascade needs a gate checkpoint plus two specialist checkpoints")
    return FerCascade(gate, dyn, sta, gate_threshold)

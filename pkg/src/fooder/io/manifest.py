"""JSON dataset manifests.

One manifest describes one dataset recorded under exactly one radar config.
Each entry is one recorded sequence (a FrameFile of raw cubes); derived
manifests written by ``preprocess`` point at RDI and micro-RDI files instead.
Paths are stored relative to the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..radar import RadarConfig

SPLITS = ("train", "cal", "test")
SUBJECT_RE = "id | ood-<k>"
EXPRESSION_LABELS = ("smile", "shock", "anger", "neutral")
MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


def valid_subject(label: str) -> bool:
    if label == "id":
        return True
    head, _, k = label.partition("-")
    return head == "ood" and k.isdigit() and int(k) >= 1


@dataclass
class Entry:
    path: str
    subject_label: str
    split: str
    seed: int
    expression_label: str | None = None
    n_frames: int = 0
    micro_path: str | None = None  # derived manifests only
    profile: str | None = None  # key into Manifest.profiles

    def validate(self) -> None:
        if not valid_subject(self.subject_label):
            raise ManifestError(f"subject_label {self.subject_label!r} not in {SUBJECT_RE}")
        if self.expression_label is not None and self.expression_label not in EXPRESSION_LABELS:
            raise ManifestError(f"expression_label {self.expression_label!r} not in {EXPRESSION_LABELS}")
        if self.split not in SPLITS:
            raise ManifestError(f"split {self.split!r} not in {SPLITS}")

    @property
    def is_id(self) -> bool:
        return self.subject_label == "id"


@dataclass
class Manifest:
    dataset: str
    config: RadarConfig
    entries: list[Entry] = field(default_factory=list)
    kind: str = "raw"  # raw | derived
    profiles: dict[str, dict] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    root: Path = field(default=Path("."), compare=False)

    def resolve(self, rel: str) -> Path:
        return (self.root / rel).resolve()

    def select(self, split: str | None = None, subject: str | None = None, id_only: bool = False) -> list[Entry]:
        out = []
        for e in self.entries:
            if split is not None and e.split != split:
                continue
            if subject is not None and e.subject_label != subject:
                continue
            if id_only and not e.is_id:
                continue
            out.append(e)
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": MANIFEST_VERSION,
            "dataset": self.dataset,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "profiles": self.profiles,
            "extra": self.extra,
            "entries": [{k: v for k, v in asdict(e).items() if v is not None} for e in self.entries],
        }

    def validate(self, check_paths: bool = True) -> None:
        self.config.validate()
        for e in self.entries:
            e.validate()
            if check_paths:
                for rel in (e.path, e.micro_path):
                    if rel is not None and not self.resolve(rel).is_file():
                        raise ManifestError(f"entry path does not resolve: {rel}")


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path, check_paths: bool = True) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from None
    if doc.get("format_version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {doc.get('format_version')}")
    if "config" not in doc or isinstance(doc["config"], list):
        raise ManifestError(f"{path}: a manifest carries exactly one config object")
    try:
        entries = [Entry(**e) for e in doc.get("entries", [])]
    except TypeError as exc:
        raise ManifestError(f"{path}: malformed entry: {exc}") from None
    m = Manifest(
        dataset=doc["dataset"],
        config=RadarConfig.from_dict(doc["config"]),
        entries=entries,
        kind=doc.get("kind", "raw"),
        profiles=doc.get("profiles", {}),
        extra=doc.get("extra", {}),
        root=path.parent,
    )
    m.validate(check_paths)
    return m

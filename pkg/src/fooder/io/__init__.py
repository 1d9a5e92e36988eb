"""File formats: frame files, manifests, checkpoints."""

from .checkpoint import Checkpoint, CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .frames import FormatError, decode_frames, encode_frames, read_frames, write_frames
from .manifest import Entry, Manifest, ManifestError, load_manifest, save_manifest

__all__ = [
    "Checkpoint", "CheckpointError", "Entry", "FormatError", "Manifest", "ManifestError",
    "decode_checkpoint", "decode_frames", "encode_checkpoint", "encode_frames", "load_checkpoint",
    "load_manifest", "read_frames", "save_checkpoint", "save_manifest", "write_frames",
]

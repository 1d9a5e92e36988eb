import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fooder.auth import AuthConfig, AuthModel
from fooder.fer import GateNet, SpecialistNet
from fooder.io import (Checkpoint, CheckpointError, Entry, FormatError, Manifest, ManifestError, decode_checkpoint,
                       decode_frames, encode_checkpoint, encode_frames, load_checkpoint, load_manifest, read_frames,
                       save_checkpoint, save_manifest, write_frames)
from fooder.io.models import auth_from_checkpoint, auth_to_checkpoint, fer_from_checkpoint, fer_to_checkpoint
from fooder.radar import RadarConfig

f32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)
shapes = st.lists(st.integers(1, 5), min_size=1, max_size=4).map(tuple)


@settings(max_examples=50, deadline=None)
@given(shapes.flatmap(lambda s: arrays(np.float32, s, elements=f32)) | arrays(np.float32, (), elements=f32))
def test_real_frames_round_trip_bitwise(a):
    blob = encode_frames(a, "rdi")
    header = 4 + 2 + 1 + 1 + 4 * a.ndim
    assert len(blob) == header + a.size * 4
    back, kind = decode_frames(blob)
    assert kind == "rdi" and back.dtype == np.float32
    assert back.tobytes() == a.tobytes() and back.shape == a.shape


@settings(max_examples=50, deadline=None)
@given(shapes.flatmap(lambda s: st.tuples(arrays(np.float32, s, elements=f32), arrays(np.float32, s, elements=f32))))
def test_complex_frames_round_trip_bitwise(parts):
    a = (parts[0] + 1j * parts[1]).astype(np.complex64)
    blob = encode_frames(a, "raw_cube")
    assert len(blob) == 8 + 4 * a.ndim + a.size * 2 * 4
    back, kind = decode_frames(blob)
    assert kind == "raw_cube" and back.dtype == np.complex64
    assert back.tobytes() == a.tobytes()


def test_frame_header_layout():
    blob = encode_frames(np.zeros((2, 3), np.float32), "micro_rdi")
    assert blob[:4] == b"FOOD"
    assert struct.unpack_from("<HBB", blob, 4) == (1, 2, 2)
    assert struct.unpack_from("<2I", blob, 8) == (2, 3)


def test_frame_errors():
    blob = encode_frames(np.ones((2, 2), np.float32), "rdi")
    with pytest.raises(FormatError, match="truncated"):
        decode_frames(blob[:-1])
    with pytest.raises(FormatError, match="trailing"):
        decode_frames(blob + b"\0")
    with pytest.raises(FormatError, match="magic"):
        decode_frames(b"NOPE" + blob[4:])
    with pytest.raises(FormatError, match="version"):
        decode_frames(blob[:4] + struct.pack("<H", 9) + blob[6:])
    with pytest.raises(FormatError):
        decode_frames(b"FO")
    with pytest.raises(ValueError):
        encode_frames(np.ones(2, complex), "rdi")
    with pytest.raises(ValueError):
        encode_frames(np.array([np.inf], np.float32), "rdi")
    with pytest.raises(ValueError):
        encode_frames(np.ones(2), "video")


def test_frame_file_io_and_kind_check(tmp_path):
    p = tmp_path / "x.food"
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_frames(p, a, "rdi")
    np.testing.assert_array_equal(read_frames(p, "rdi"), a)
    with pytest.raises(FormatError):
        read_frames(p, "micro_rdi")


def test_checkpoint_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    state = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32), "b": np.asarray(rng.normal(), np.float32)}
    ck = Checkpoint("demo", state, {"seed": 3, "history": [1.5, 2.0]})
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, ck)
    back = load_checkpoint(p, "demo")
    assert back.metadata == ck.metadata and back.kind == "demo"
    for k in state:
        assert back.state[k].tobytes() == state[k].tobytes() and back.state[k].shape == state[k].shape
    assert encode_checkpoint(back) == encode_checkpoint(ck)


def test_checkpoint_errors(tmp_path):
    blob = encode_checkpoint(Checkpoint("demo", {"w": np.ones(2, np.float32)}))
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(blob[:8] + struct.pack("<H", 2) + blob[10:])
    with pytest.raises(CheckpointError, match="truncated"):
        decode_checkpoint(blob[:-3])
    with pytest.raises(CheckpointError, match="expected"):
        decode_checkpoint(blob, expect_kind="rfood")
    with pytest.raises(CheckpointError):
        encode_checkpoint(Checkpoint("demo", {"w": np.ones(2)}))
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_auth_model_reload_reproduces_scores():
    model = AuthModel(AuthConfig(seed=4))
    model.eval()
    model.threshold = 0.25
    back = auth_from_checkpoint(decode_checkpoint(encode_checkpoint(auth_to_checkpoint(model))))
    x = np.random.default_rng(1).uniform(size=(3, 64, 64)).astype(np.float32)
    a, b = model.score_terms(x, x[::-1]), back.score_terms(x, x[::-1])
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()
    assert back.threshold == 0.25


@pytest.mark.parametrize("make", [lambda: GateNet(seed=1), lambda: SpecialistNet("mvit-lite", seed=2),
                                  lambda: SpecialistNet("mvit2-lite", seed=3)])
def test_fer_reload_reproduces_outputs(make):
    from fooder.nn import Tensor, no_grad

    net = make()
    net.eval()
    back = fer_from_checkpoint(decode_checkpoint(encode_checkpoint(fer_to_checkpoint(net))))
    x = Tensor(np.random.default_rng(2).uniform(size=(2, 2, 64, 64)).astype(np.float32))
    with no_grad():
        assert net(x).data.tobytes() == back(x).data.tobytes()
    assert type(back) is type(net)


def _manifest(tmp_path):
    p = tmp_path / "raw"
    p.mkdir()
    write_frames(p / "a.food", np.zeros((1, 1, 2, 2), np.complex64), "raw_cube")
    return Manifest("demo", RadarConfig(), [Entry("a.food", "id", "train", 1, "smile", 1)], root=p)


def test_manifest_round_trip(tmp_path):
    m = _manifest(tmp_path)
    save_manifest(m, tmp_path / "raw" / "manifest.json")
    back = load_manifest(tmp_path / "raw" / "manifest.json")
    assert back == m
    assert back.select(split="train", id_only=True)[0].expression_label == "smile"


def test_manifest_validation(tmp_path):
    m = _manifest(tmp_path)
    path = tmp_path / "raw" / "manifest.json"
    for bad in (Entry("a.food", "bob", "train", 1), Entry("a.food", "id", "dev", 1),
                Entry("a.food", "id", "train", 1, "joy"), Entry("gone.food", "id", "train", 1)):
        m.entries = [bad]
        save_manifest(m, path)
        with pytest.raises(ManifestError):
            load_manifest(path)
    doc = json.loads(path.read_text())
    doc["config"] = [doc["config"], doc["config"]]
    path.write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="exactly one config"):
        load_manifest(path)
    path.write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(path)

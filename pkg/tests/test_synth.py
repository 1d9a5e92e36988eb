import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fooder.dsp import process_sequence, range_fft, rx_collapse
from fooder.radar import ConfigError, RadarConfig, derive_params
from fooder.synth import (DYNAMIC, EXPRESSIONS, STATIC, Scatterer, Scene, SubjectProfile, default_profiles,
                          expression_motion, make_rng, profile_for_sequence, synth_frame, synth_sequence)

CFG = RadarConfig()
DP = derive_params(CFG)


def test_sequence_is_deterministic():
    prof = default_profiles()["id"]
    a = synth_sequence(prof, 10, CFG, seed=42)
    b = synth_sequence(prof, 10, CFG, seed=42)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))


def test_zero_frames_is_empty():
    assert synth_sequence(default_profiles()["id"], 0, CFG, seed=1) == []


def test_different_seeds_differ():
    prof = default_profiles()["id"]
    a = synth_sequence(prof, 2, CFG, seed=1)[1].data
    b = synth_sequence(prof, 2, CFG, seed=2)[1].data
    assert not np.array_equal(a, b)


def test_cube_shape_and_labels():
    cube = synth_sequence(default_profiles()["smile"], 1, CFG, seed=0)[0]
    assert cube.data.shape == (3, 64, 128) and cube.data.dtype == np.complex128
    assert cube.labels == {"subject": "id", "expression": "smile"}


def test_scene_validation():
    with pytest.raises(ConfigError):
        synth_frame(Scene((Scatterer(3.0),)), CFG)
    with pytest.raises(ConfigError):
        synth_frame(Scene((Scatterer(0.5, velocity=7.0),)), CFG)
    with pytest.raises(ConfigError):
        synth_frame(Scene((Scatterer(0.5, micro_motion_amp=-1e-3),)), CFG)
    with pytest.raises(ConfigError):
        synth_frame(Scene((Scatterer(0.5),), noise_std=-1), CFG)


def test_rx_phase_offsets():
    cube = synth_frame(Scene((Scatterer(0.4),)), CFG)
    ratio = cube.data[1] / cube.data[0]
    np.testing.assert_allclose(np.angle(ratio), np.pi / 7, atol=1e-12)
    np.testing.assert_allclose(np.angle(cube.data[2] / cube.data[0]), np.pi / 3, atol=1e-12)


def test_single_scatterer_matches_closed_form():
    s = Scatterer(0.3, velocity=0.5, amplitude=0.7, phase=0.2)
    cube = synth_frame(Scene((s,)), CFG, frame_index=3)
    m, n = 5, 17
    t = 3 * CFG.frame_period + m * CFG.chirp_to_chirp
    r = s.range + s.velocity * t
    c = 299_792_458.0
    phase = 2 * np.pi * (2 * DP.chirp_rate * r / c) * n / CFG.adc_rate + 2 * np.pi * DP.f_c * r / c + s.phase
    assert cube.data[0, m, n] == pytest.approx(0.7 * np.exp(1j * phase), abs=1e-9)


scatterer = st.builds(
    Scatterer,
    range=st.floats(0.1, 2.0),
    velocity=st.floats(-3, 3),
    amplitude=st.floats(0, 2),
    micro_motion_amp=st.floats(0, 0.003),
    micro_motion_freq=st.floats(0, 4),
    phase=st.floats(-3, 3),
)


@settings(max_examples=25, deadline=None)
@given(st.lists(scatterer, min_size=1, max_size=3), st.lists(scatterer, min_size=1, max_size=3), st.integers(0, 50))
def test_superposition(a, b, frame):
    fa = synth_frame(Scene(tuple(a)), CFG, frame).data
    fb = synth_frame(Scene(tuple(b)), CFG, frame).data
    fab = synth_frame(Scene(tuple(a + b)), CFG, frame).data
    np.testing.assert_allclose(fab, fa + fb, rtol=0, atol=1e-12 * (len(a) + len(b)) * 4)


@settings(max_examples=40, deadline=None)
@given(st.floats(2 * DP.range_res, DP.max_range - 2 * DP.range_res))
def test_range_peak_location(r):
    cube = synth_frame(Scene((Scatterer(r),)), CFG)
    prof = rx_collapse(range_fft(cube)).data
    peak = int(np.abs(prof).sum(axis=0).argmax())
    assert abs(peak - round(r / DP.range_res)) <= 1


def test_noise_reproducible_per_seed_and_frame():
    scene = Scene((Scatterer(0.5),), noise_std=0.1, seed=9)
    np.testing.assert_array_equal(synth_frame(scene, CFG, 4).data, synth_frame(scene, CFG, 4).data)
    assert not np.array_equal(synth_frame(scene, CFG, 4).data, synth_frame(scene, CFG, 5).data)


def test_make_rng_is_pcg64_and_keyed():
    g = make_rng(1, 2)
    assert isinstance(g.bit_generator, np.random.PCG64)
    assert make_rng(1, 2).random() == make_rng(1, 2).random() != make_rng(2, 1).random()


def test_default_profiles_cover_subjects():
    profs = default_profiles()
    assert set(EXPRESSIONS) <= set(profs)
    assert [k for k in profs if k.startswith("ood-")] == [f"ood-{k}" for k in range(1, 7)]
    assert all(profs[e].expression == e and profs[e].subject == "id" for e in EXPRESSIONS)
    assert all(profs[f"ood-{k}"].expression is None for k in range(1, 7))


def test_dynamic_expressions_have_more_micro_motion():
    profs = default_profiles()
    for d in DYNAMIC:
        for s in STATIC:
            ad, fd = expression_motion(profs[d])
            as_, fs = expression_motion(profs[s])
            assert ad > as_ and fd > fs


def test_profile_round_trip():
    prof = default_profiles()["shock"]
    assert SubjectProfile.from_dict(prof.to_dict()) == prof


def test_ood_sessions_vary_expression_without_label():
    prof = default_profiles()["ood-2"]
    variants = {profile_for_sequence(prof, i, 0).scatterers for i in range(20)}
    assert len(variants) > 1
    assert all(profile_for_sequence(prof, i, 0).expression is None for i in range(5))
    id_prof = default_profiles()["smile"]
    assert profile_for_sequence(id_prof, 3, 0) is id_prof


def _doppler_spread(profile, seed):
    """Mean fraction of RDI energy off the zero-Doppler row."""
    rdis, _ = process_sequence(synth_sequence(profile, 24, CFG, seed))
    off = np.arange(64) != 32
    return float(np.mean([(r.data[off] ** 2).sum() / (r.data**2).sum() for r in rdis[1:]]))


@pytest.mark.parametrize("seed", [0, 5])
def test_smile_has_wider_doppler_spread_than_neutral(seed):
    profs = default_profiles()
    assert _doppler_spread(profs["smile"], seed) > _doppler_spread(profs["neutral"], seed)

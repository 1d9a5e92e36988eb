"""End-to-end acceptance suite, one test per criterion.

Each test records a verdict line (printed in the terminal summary) before
asserting, so a failing criterion shows its measured values. The heavy
training runs share one synthetic dataset built once per module.
"""

import time

import numpy as np
import pytest

from acceptance_log import record
from cases import autoencoder_case, f64, gradcheck_cases, gradcheck_tolerance
from oracles import aupr_enumerate, auroc_pairs, confusion_loops, fpr_at_tpr_enumerate, random_scores
from fooder import auth as A
from fooder import fer as FER
from fooder import metrics as M
from fooder.dataset import materialize, plan_dataset
from fooder.dsp import doppler_fft, range_fft, rx_collapse
from fooder.io import decode_checkpoint, decode_frames, encode_checkpoint, encode_frames
from fooder.io.models import auth_from_checkpoint, auth_to_checkpoint, fer_from_checkpoint, fer_to_checkpoint
from fooder.nn import Tensor, grad_check, no_grad
from fooder.pipeline import hardware_description, stream
from fooder.radar import RadarConfig, derive_params
from fooder.synth import Scatterer, Scene, synth_frame

pytestmark = pytest.mark.slow

CFG = RadarConfig()
DP = derive_params(CFG)

# Desk-scale training settings; the library defaults target longer runs.
AUTH_CFG = A.AuthConfig(epochs=12, batch_size=8, learning_rate=5e-3, seed=0)
FER_CFG = FER.TrainConfig(epochs=10, batch_size=16, learning_rate=1e-3, seed=0)
FRAMES_PER_SUBJECT = 800


# -- fast criteria ---------------------------------------------------------------
def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    worst = {}
    ok = True
    for name, module, x in gradcheck_cases():
        module = f64(module)
        module.assign_names(name)
        rep = grad_check(module, x, h=1e-4, check_input=True)
        worst[name] = rep.max_error
        ok &= rep.max_error < gradcheck_tolerance(name)
    module, x, kwargs = autoencoder_case()
    worst["autoencoder"] = grad_check(module, x, **kwargs).max_error
    ok &= worst["autoencoder"] < 1e-5
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120
    top = max(worst, key=worst.get)
    assert record(1, ok, f"{len(worst)} checks, worst {top}={worst[top]:.2e}, {elapsed:.1f}s")


def test_criterion_2_dsp_peak_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    # speeds whose in-frame range migration drags the Doppler peak by at most one bin
    v_max = 2 * DP.range_res / (CFG.n_chirps * CFG.chirp_to_chirp)
    misses = []
    for i in range(50):
        r = rng.uniform(2 * DP.range_res, DP.max_range - 2 * DP.range_res)
        v = rng.uniform(-v_max, v_max)
        cube = synth_frame(Scene((Scatterer(r, velocity=v, phase=rng.uniform(-np.pi, np.pi)),)), CFG)
        prof = rx_collapse(range_fft(cube))
        r_bin = int(np.abs(prof.data).sum(axis=0).argmax())
        rdi = doppler_fft(prof).data
        d_bin, _ = np.unravel_index(rdi.argmax(), rdi.shape)
        if abs(r_bin - round(r / DP.range_res)) > 1 or abs(int(d_bin) - (32 + round(v / DP.velocity_res))) > 1:
            misses.append((r, v))
    elapsed = time.perf_counter() - t0
    ok = not misses and elapsed < 30
    assert record(2, ok, f"50 scenes, {len(misses)} misses, |v| <= {v_max:.2f} m/s, {elapsed:.1f}s"), misses


def test_criterion_3_derived_parameters():
    stated = {"range_res": 0.0375, "max_range": 2.4, "max_velocity": 6.38, "velocity_res": 0.20}
    got = {k: getattr(DP, k) for k in stated}
    rel = {k: abs(got[k] - v) / v for k, v in stated.items()}
    ok = all(e <= 0.01 for e in rel.values())
    detail = ", ".join(f"{k}={got[k]:.4g} ({rel[k]:.2%})" for k in stated)
    assert record(3, ok, detail)


def test_criterion_4_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    classes = ["smile", "shock", "anger", "neutral"]
    worst = 0.0
    for _ in range(200):
        id_s, ood_s = random_scores(rng)
        errs = [
            abs(M.auroc(id_scores=id_s, ood_scores=ood_s) - auroc_pairs(id_s, ood_s)),
            abs(M.aupr(positive=M.ID, id_scores=id_s, ood_scores=ood_s) - aupr_enumerate(id_s, ood_s)),
            abs(M.aupr(positive=M.OOD, id_scores=id_s, ood_scores=ood_s) - aupr_enumerate(-ood_s, -id_s)),
            abs(M.fpr_at_tpr(id_scores=id_s, ood_scores=ood_s) - fpr_at_tpr_enumerate(id_s, ood_s)),
        ]
        n = int(rng.integers(1, 101))
        truth = list(rng.choice(classes, n))
        pred = list(rng.choice(classes, n))
        res = M.confusion_matrix(pred, truth, classes)
        m, avg = confusion_loops(pred, truth, classes)
        errs += [float(np.abs(res.matrix - m).max()), abs(res.average - avg)]
        worst = max(worst, *errs)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 60
    assert record(4, ok, f"200 instances, max deviation {worst:.1e}, {elapsed:.1f}s")


def test_criterion_5_calibration_guarantee():
    rng = np.random.default_rng(5)
    bad = []
    for i in range(100):
        n = int(rng.integers(20, 400))
        s = rng.gamma(2.0, 1.0, n) if i % 2 else rng.normal(0, 1, n)
        thr = A.calibrate_threshold(s)
        tpr = float(np.mean([A.decide(v, thr) == A.ID for v in s]))
        if not 0.95 <= tpr <= 0.95 + 1 / n:
            bad.append((n, tpr))
    assert record(5, not bad, f"100 sets, {len(bad)} outside [0.95, 0.95 + 1/N]"), bad


# -- shared synthetic dataset ----------------------------------------------------------
@pytest.fixture(scope="module")
def dataset():
    t0 = time.perf_counter()
    plan = plan_dataset(FRAMES_PER_SUBJECT, seed=0)
    data = materialize(plan, CFG)
    return {"plan": plan, "data": data, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def auth_run(dataset):
    data = dataset["data"]
    t0 = time.perf_counter()
    train = data["train"]
    model = A.train_auth(train.rdi, train.micro, train.subject, config=AUTH_CFG)
    cal = data["cal"]
    A.calibrate(model, cal.rdi, cal.micro, cal.subject)
    test = data["test"]
    terms = model.score_terms(test.rdi, test.micro)
    seconds = time.perf_counter() - t0 + dataset["seconds"]
    return {"model": model, "terms": terms, "is_id": test.is_id, "seconds": seconds}


@pytest.fixture(scope="module")
def fer_run(dataset):
    data = dataset["data"]
    train = data["train"]
    t0 = time.perf_counter()
    x = FER.concat_modalities(train.rdi, train.micro)
    labels = np.array(train.expression)
    gate = FER.train_gate(x, labels, FER_CFG)
    dyn = np.isin(labels, ["smile", "shock"])
    dynamic = FER.train_specialist("mvit2-lite", x[dyn], labels[dyn], FER_CFG)
    static = FER.train_specialist("mvit-lite", x[~dyn], labels[~dyn], FER_CFG)
    seconds = time.perf_counter() - t0
    return {"cascade": FER.FerCascade(gate, dynamic, static), "seconds": seconds}


def _ablation_aurocs(run):
    out = {}
    for name in A.ABLATIONS:
        s = A.ablation_score(run["terms"], name)
        out[name] = M.auroc(id_scores=s[run["is_id"]], ood_scores=s[~run["is_id"]])
    return out


def test_criterion_6_authentication(auth_run):
    model, is_id = auth_run["model"], auth_run["is_id"]
    total = A.ablation_score(auth_run["terms"], "full")
    id_s, ood_s = total[is_id], total[~is_id]
    report = M.evaluate(id_s, ood_s)
    held_out_fpr = float(np.mean(ood_s <= model.threshold))
    ok = (report.auroc >= 0.90 and report.fpr95 <= 0.35 and auth_run["seconds"] < 900
          and len(id_s) >= 500 and len(ood_s) >= 500)
    detail = (f"AUROC {report.auroc:.4f}, FPR95 {report.fpr95:.4f}, FPR at calibrated threshold "
              f"{held_out_fpr:.4f}, n_id {len(id_s)}, n_ood {len(ood_s)}, {auth_run['seconds']:.0f}s")
    assert record(6, ok, detail)


def test_criterion_7_ablation_direction(auth_run):
    au = _ablation_aurocs(auth_run)
    modality_ok = au["full"] >= max(au["rdi"], au["micro"]) - 0.02
    parts_ok = au["full"] >= max(au["bp"], au["iled"]) - 0.02
    detail = ", ".join(f"{k} {v:.4f}" for k, v in au.items())
    assert record(7, modality_ok and parts_ok, detail)


def test_criterion_8_expression_cascade(dataset, fer_run):
    test = dataset["data"]["test"].subset(dataset["data"]["test"].is_id)
    cascade = fer_run["cascade"]
    x = FER.concat_modalities(test.rdi, test.micro)
    truth = list(test.expression)
    gate_p = cascade.gate_probs(x)
    gate_acc = float(np.mean((gate_p > cascade.gate_threshold) == np.isin(truth, ["smile", "shock"])))
    before = cascade.specialist_evals
    res = cascade.classify_batch(x)
    exclusive = cascade.specialist_evals - before == len(x) and all(
        FER.category(r.label) == r.routed == ("dynamic" if p > cascade.gate_threshold else "static")
        for r, p in zip(res, gate_p))
    conf = M.confusion_matrix([r.label for r in res], truth, FER.EXPRESSIONS)
    ok = gate_acc >= 0.95 and conf.average >= 0.90 and exclusive and fer_run["seconds"] < 1200
    per = ", ".join(f"{k} {v:.3f}" for k, v in conf.per_class.items())
    detail = (f"gate {gate_acc:.4f}, average {conf.average:.4f} ({per}), exclusive {exclusive}, "
              f"training {fer_run['seconds']:.0f}s")
    assert record(8, ok, detail)


@pytest.fixture(scope="module")
def stream_run(dataset, auth_run, fer_run):
    plan = dataset["plan"]
    ids = [s for s in plan if s.split == "test" and s.subject == "id"]
    ood_all = [s for s in plan if s.subject != "id"]
    oods = ood_all[:: max(1, len(ood_all) // len(ids))]  # spread over all six subjects
    order = [seq for pair in zip(ids, oods) for seq in pair]
    cubes = [c for seq in order for c in seq.cubes(CFG)]
    logs, summary = stream(cubes, auth_run["model"], fer_run["cascade"], frame_period=CFG.frame_period)
    return {"logs": logs, "summary": summary, "n_id_seq": len(ids), "n_ood_seq": len(oods)}


def test_criterion_9_gated_pipeline(stream_run):
    s = stream_run["summary"]
    decisions = {d: sum(e.decision == d for e in stream_run["logs"]) for d in (A.ID, A.OOD)}
    ok = s.specialist_evals == s.id_decisions and decisions[A.ID] > 0 and decisions[A.OOD] > 0
    detail = (f"specialist evals {s.specialist_evals}, ID decisions {s.id_decisions}, OOD decisions "
              f"{decisions[A.OOD]} over {stream_run['n_id_seq']} ID + {stream_run['n_ood_seq']} OOD sessions")
    assert record(9, ok, detail)


def test_criterion_10_streaming_budget(stream_run):
    s = stream_run["summary"]
    hw = hardware_description()
    ok = s.frames >= 1000 and s.latency_p99 < 0.050
    detail = (f"{s.frames} frames, p50 {s.latency_p50 * 1e3:.1f} ms, p99 {s.latency_p99 * 1e3:.1f} ms, "
              f"max {s.latency_max * 1e3:.1f} ms on {hw['cpu']} ({hw['cpus']} cpu, numpy {hw['numpy']})")
    assert record(10, ok, detail)


def test_criterion_11_serialization(dataset, auth_run, fer_run):
    test = dataset["data"]["test"]
    model = auth_run["model"]
    blob = encode_checkpoint(auth_to_checkpoint(model))
    back = auth_from_checkpoint(decode_checkpoint(blob))
    again = back.score_terms(test.rdi, test.micro)
    scores_ok = all(again[k].tobytes() == auth_run["terms"][k].tobytes() for k in A.SCORE_TERMS)
    ckpt_ok = encode_checkpoint(auth_to_checkpoint(back)) == blob

    cascade = fer_run["cascade"]
    x = FER.concat_modalities(test.rdi[:64], test.micro[:64])
    fer_ok = True
    for net in (cascade.gate, cascade.dynamic_specialist, cascade.static_specialist):
        reloaded = fer_from_checkpoint(decode_checkpoint(encode_checkpoint(fer_to_checkpoint(net))))
        with no_grad():
            fer_ok &= net(Tensor(x)).data.tobytes() == reloaded(Tensor(x)).data.tobytes()

    seq = dataset["plan"][0]
    raw = np.stack([c.data for c in seq.cubes(CFG)]).astype(np.complex64)
    frames_ok = True
    for arr, kind in ((raw, "raw_cube"), (test.rdi[:40], "rdi"), (test.micro[:40], "micro_rdi")):
        out, k = decode_frames(encode_frames(arr, kind))
        frames_ok &= k == kind and out.tobytes() == arr.tobytes() and out.shape == arr.shape
    ok = scores_ok and ckpt_ok and fer_ok and frames_ok
    detail = (f"auth scores bitwise {scores_ok}, checkpoint bytes stable {ckpt_ok}, FER outputs bitwise "
              f"{fer_ok}, frame files bitwise {frames_ok}")
    assert record(11, ok, detail)

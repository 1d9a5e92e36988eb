"""Command-line front end: ``fooder <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data or contract violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import auth as A
from . import fer as FER
from . import metrics as M
from .dataset import DEFAULT_FRACTIONS, PROFILE_SETS, SampleSet, pair_images, plan_dataset
from .dsp import MICRO_WINDOW, process_sequence
from .io.checkpoint import CheckpointError
from .io.frames import FormatError, read_frames, write_frames
from .io.manifest import Entry, Manifest, ManifestError, load_manifest, save_manifest
from .io.models import load_auth, load_cascade, load_fer, save_auth, save_fer
from .pipeline import hardware_description, stream
from .radar import ConfigError, RadarConfig, RadarCube

log = logging.getLogger("fooder")

FER_FILES = ("gate.ckpt", "dynamic.ckpt", "static.ckpt")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which is reserved for data errors
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {p}: {exc}") from None
    if not os.access(p, os.W_OK):
        raise DataError(f"output directory {p} is not writable")
    return p


# -- dataset loading -----------------------------------------------------------
def _derived(manifest_path: str) -> Manifest:
    m = load_manifest(manifest_path)
    if m.kind != "derived":
        raise DataError(f"{manifest_path} lists raw cubes; run `fooder preprocess` first")
    return m


def _load_samples(m: Manifest, entries: list[Entry]) -> SampleSet:
    parts = []
    for e in entries:
        rdi = read_frames(m.resolve(e.path), "rdi")
        micro = read_frames(m.resolve(e.micro_path), "micro_rdi") if e.micro_path else rdi[:0]
        try:
            rdi, micro, frames = pair_images(rdi, micro)
        except ValueError as exc:
            raise DataError(f"{e.path}: {exc}") from None
        k = len(rdi)
        seq = Path(e.path).name.split(".")[0]
        parts.append(SampleSet(rdi, micro, [e.subject_label] * k, [e.expression_label] * k, [seq] * k,
                               list(frames)))
    return SampleSet.concat(parts)


def _raw_cubes(m: Manifest, e: Entry) -> list[RadarCube]:
    data = read_frames(m.resolve(e.path), "raw_cube")
    cfg = m.config
    want = (cfg.n_rx, cfg.n_chirps, cfg.n_samples)
    if data.ndim != 4 or data.shape[1:] != want:
        raise DataError(f"{e.path}: cube shape {data.shape[1:]} does not match config {want}")
    labels = {"subject": e.subject_label, "expression": e.expression_label}
    return [RadarCube(data[t].astype(np.complex128), t, cfg, dict(labels)) for t in range(len(data))]


def _sample_ids(s: SampleSet) -> list[str]:
    return [f"{q}@{f}" for q, f in zip(s.sequence, s.frame)]


def _fer_paths(spec: list[str]) -> list[Path]:
    if len(spec) == 1 and Path(spec[0]).is_dir():
        return [Path(spec[0]) / n for n in FER_FILES]
    if len(spec) != 3:
        raise UsageError("--fer-ckpts takes a directory or three files (gate, dynamic, static)")
    return [Path(p) for p in spec]


# -- commands ------------------------------------------------------------------
def cmd_synth(a) -> dict:
    out = _out_dir(a.out_dir)
    fractions = (a.train_frac, a.cal_frac, a.test_frac)
    plan = plan_dataset(a.frames_per_subject, a.seq_len, a.seed, a.profile_set, fractions)
    config = RadarConfig()
    (out / "raw").mkdir(exist_ok=True)
    entries, profiles = [], {}
    for seq in plan:
        cubes = seq.cubes(config)
        rel = f"raw/{seq.key}.food"
        write_frames(out / rel, np.stack([c.data for c in cubes]), "raw_cube")
        prof = seq.session_profile()
        profiles[seq.key] = prof.to_dict()
        entries.append(Entry(rel, seq.subject, seq.split, seq.seed, seq.expression, seq.n_frames, profile=seq.key))
    m = Manifest(f"synthetic-{a.profile_set}", config, entries, "raw", profiles,
                 {"seed": a.seed, "frames_per_subject": a.frames_per_subject, "seq_len": a.seq_len,
                  "fractions": list(fractions)}, root=out)
    save_manifest(m, out / "manifest.json")
    return {"manifest": str(out / "manifest.json"), "sequences": len(entries),
            "frames": sum(e.n_frames for e in entries)}


def cmd_preprocess(a) -> dict:
    m = load_manifest(a.manifest)
    if m.kind != "raw":
        raise DataError(f"{a.manifest} is already a derived manifest")
    out = _out_dir(a.out_dir)
    (out / "derived").mkdir(exist_ok=True)
    entries, skipped, n_micro = [], 0, 0
    for e in m.entries:
        rd, mi = process_sequence(_raw_cubes(m, e), mti_alpha=a.mti_alpha, sinc_cutoff=a.sinc_cutoff)
        stem = Path(e.path).name.split(".")[0]
        rdi_rel, micro_rel = f"derived/{stem}.rdi.food", f"derived/{stem}.micro.food"
        side = rd[0].data.shape if rd else (64, 64)
        write_frames(out / rdi_rel, np.array([x.data for x in rd], dtype=np.float32).reshape(-1, *side), "rdi")
        write_frames(out / micro_rel, np.array([x.data for x in mi], dtype=np.float32).reshape(-1, *side), "micro_rdi")
        lacking = min(len(rd), MICRO_WINDOW - 1)
        if lacking:
            log.info("%s: %d frame(s) lack a full %d-frame window and are not scorable", stem, lacking, MICRO_WINDOW)
        skipped += lacking
        n_micro += len(mi)
        entries.append(Entry(rdi_rel, e.subject_label, e.split, e.seed, e.expression_label, e.n_frames,
                             micro_rel, e.profile))
    extra = dict(m.extra, preprocess={"mti_alpha": a.mti_alpha, "sinc_cutoff": a.sinc_cutoff})
    derived = Manifest(m.dataset, m.config, entries, "derived", m.profiles, extra, root=out)
    save_manifest(derived, out / "manifest.json")
    return {"manifest": str(out / "manifest.json"), "rdis": sum(e.n_frames for e in entries),
            "micro_rdis": n_micro, "unscorable_frames": skipped}


def cmd_train_auth(a) -> dict:
    m = _derived(a.manifest)
    data = _load_samples(m, m.select(split="train", id_only=True))
    if len(data) == 0:
        raise DataError("no scorable ID training samples in the manifest")
    cfg = A.AuthConfig(learning_rate=a.lr, batch_size=a.batch_size, epochs=a.epochs, seed=a.seed,
                       iled_mode=a.iled_mode)
    t0 = time.perf_counter()
    model = A.train_auth(data.rdi, data.micro, data.subject, cfg)
    save_auth(a.out, model, {"train_samples": len(data), "train_time": time.perf_counter() - t0})
    return {"checkpoint": a.out, "train_samples": len(data), "final_loss": A.epoch_means(model.history)[-1]}


def cmd_calibrate(a) -> dict:
    m = _derived(a.manifest)
    entries = m.select(split=a.split)
    ood = sorted({e.subject_label for e in entries if not e.is_id})
    if ood:
        raise DataError(f"calibration split {a.split!r} contains OOD entries ({', '.join(ood)}); ID only")
    data = _load_samples(m, entries)
    model = load_auth(a.ckpt)
    thr = A.calibrate(model, data.rdi, data.micro, data.subject)
    save_auth(a.ckpt, model, {"calibration_samples": len(data)})
    return {"checkpoint": a.ckpt, "threshold": thr, "calibration_samples": len(data)}


def cmd_eval_auth(a) -> dict:
    m = _derived(a.manifest)
    model = load_auth(a.ckpt)
    if model.threshold is None:
        raise DataError(f"{a.ckpt} is not calibrated; run `fooder calibrate` first")
    data = _load_samples(m, m.select(split=a.split))
    is_id = data.is_id
    if is_id.all() or not is_id.any():
        raise DataError(f"split {a.split!r} needs both ID and OOD samples")
    t0 = time.perf_counter()
    terms = model.score_terms(data.rdi, data.micro)
    elapsed = time.perf_counter() - t0
    total = A.ablation_score(terms, "full")
    report = M.evaluate(total[is_id], total[~is_id], elapsed)
    out = _out_dir(a.out_dir)
    (out / "report.json").write_text(report.to_json() + "\n")
    ablations = {ab: M.auroc(id_scores=A.ablation_score(terms, ab)[is_id], ood_scores=A.ablation_score(terms, ab)[~is_id])
                 for ab in A.ABLATIONS}
    accepted = total <= model.threshold
    _write_json(out / "ablations.json", {"auroc": ablations, "threshold": model.threshold,
                                          "tpr": float(accepted[is_id].mean()), "fpr": float(accepted[~is_id].mean())})
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "score", "label", *A.SCORE_TERMS])
        for i, sid in enumerate(_sample_ids(data)):
            w.writerow([sid, repr(float(total[i])), M.ID if is_id[i] else M.OOD,
                        *(repr(float(terms[k][i])) for k in A.SCORE_TERMS)])
    return {"report": json.loads(report.to_json()), "ablation_auroc": ablations}


def _fer_data(m: Manifest, split: str) -> tuple[np.ndarray, list[str]]:
    entries = [e for e in m.select(split=split, id_only=True) if e.expression_label]
    data = _load_samples(m, entries)
    return FER.concat_modalities(data.rdi, data.micro), list(data.expression)


def cmd_train_fer(a) -> dict:
    m = _derived(a.manifest)
    x, labels = _fer_data(m, "train")
    if len(x) == 0:
        raise DataError("no labelled ID training samples in the manifest")
    cfg = FER.TrainConfig(learning_rate=a.lr, batch_size=a.batch_size, epochs=a.epochs, seed=a.seed)
    out = _out_dir(a.out_dir)
    gate = FER.train_gate(x, labels, cfg)
    dyn_mask = np.array([FER.category(lbl) == "dynamic" for lbl in labels])
    dyn = FER.train_specialist("mvit2-lite", x[dyn_mask], [l for l, d in zip(labels, dyn_mask) if d], cfg)
    sta = FER.train_specialist("mvit-lite", x[~dyn_mask], [l for l, d in zip(labels, dyn_mask) if not d], cfg)
    for name, net in zip(FER_FILES, (gate, dyn, sta)):
        save_fer(out / name, net, {"seed": a.seed, "train_samples": len(x)})
    return {"checkpoints": [str(out / n) for n in FER_FILES], "train_samples": len(x),
            "gate_train_accuracy": gate.train_accuracy}


def cmd_eval_fer(a) -> dict:
    m = _derived(a.manifest)
    cascade = load_cascade(*_fer_paths(a.fer_ckpts))
    x, labels = _fer_data(m, a.split)
    if len(x) == 0:
        raise DataError(f"no labelled ID samples in split {a.split!r}")
    results = cascade.classify_batch(x)
    cm = M.confusion_matrix([r.label for r in results], labels, FER.EXPRESSIONS)
    gate_truth = [FER.category(lbl) for lbl in labels]
    doc = cm.to_dict()
    doc["gate_accuracy"] = float(np.mean([r.routed == t for r, t in zip(results, gate_truth)]))
    doc["specialist_evals"] = cascade.specialist_evals
    if a.out:
        _write_json(Path(a.out), doc)
    return doc


def cmd_baseline_scores(a) -> dict:
    m = _derived(a.manifest)
    out = _out_dir(a.out_dir)
    x_tr, y_tr = _fer_data(m, "train")
    if a.classifier:
        net = load_fer(a.classifier)
        if not isinstance(net, FER.GateNet) or net.n_out != len(FER.EXPRESSIONS):
            raise DataError(f"{a.classifier} is not a 4-way expression classifier")
    else:
        if len(x_tr) == 0:
            raise DataError("no labelled ID training samples to fit the classifier")
        cfg = FER.TrainConfig(learning_rate=a.lr, batch_size=a.batch_size, epochs=a.epochs, seed=a.seed)
        net = FER.train_flat(x_tr, y_tr, cfg)
        save_fer(out / "flat.ckpt", net, {"seed": a.seed})
    test = _load_samples(m, m.select(split=a.split))
    is_id = test.is_id
    if is_id.all() or not is_id.any():
        raise DataError(f"split {a.split!r} needs both ID and OOD samples")
    _, f_tr = FER.flat_outputs(net, x_tr)
    z, f = FER.flat_outputs(net, FER.concat_modalities(test.rdi, test.micro))
    fit = M.fit_mahalanobis(f_tr, y_tr)
    summary = {}
    for method in a.methods:
        s = M.baseline_scores(method, z, f, temperature=a.temperature, fit=fit, bank=f_tr, k=a.k)
        with open(out / f"{method}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "score", "label"])
            for sid, v, i in zip(_sample_ids(test), s, is_id):
                w.writerow([sid, repr(float(v)), M.ID if i else M.OOD])
        summary[method] = json.loads(M.evaluate(s[is_id], s[~is_id]).to_json())
    _write_json(out / "baselines.json", summary)
    return summary


def cmd_stream(a) -> dict:
    m = load_manifest(a.manifest)
    if m.kind != "raw":
        raise DataError("stream replays raw cubes; pass the manifest written by `fooder synth` or `import`")
    for p in [Path(a.auth_ckpt), *_fer_paths(a.fer_ckpts)]:
        if not p.is_file():
            raise DataError(f"checkpoint not found: {p}")
    model = load_auth(a.auth_ckpt)
    if model.threshold is None:
        raise DataError(f"{a.auth_ckpt} is not calibrated")
    cascade = load_cascade(*_fer_paths(a.fer_ckpts))
    entries = m.select(split=a.split) if a.split != "all" else list(m.entries)

    def cubes():
        n = 0
        for e in entries:
            for c in _raw_cubes(m, e):
                if a.limit and n >= a.limit:
                    return
                n += 1
                yield c

    logs, summary = stream(cubes(), model, cascade, realtime=a.realtime)
    if a.log:
        path = Path(a.log)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for e in logs:
                fh.write(json.dumps(vars(e)) + "\n")
    doc = summary.to_dict()
    doc["hardware"] = hardware_description()
    return doc


def cmd_import(a) -> dict:
    out = _out_dir(a.out_dir)
    mpath = out / "manifest.json"
    if mpath.exists():
        m = load_manifest(mpath)
        if m.kind != "raw":
            raise DataError(f"{mpath} is a derived manifest")
    else:
        m = Manifest(a.dataset, RadarConfig(), [], "raw", root=out)
    cfg = m.config
    (out / "raw").mkdir(exist_ok=True)
    added = []
    for i, src in enumerate(a.files):
        data = read_frames(src, "raw_cube")
        want = (cfg.n_rx, cfg.n_chirps, cfg.n_samples)
        if data.ndim != 4 or data.shape[1:] != want:
            raise DataError(f"{src}: cube shape {data.shape[1:]} does not match the manifest config {want}")
        rel = f"raw/{Path(src).name}"
        if (out / rel).resolve() != Path(src).resolve():
            shutil.copyfile(src, out / rel)
        e = Entry(rel, a.subject, a.split, a.seed + i, a.expression, len(data))
        e.validate()
        m.entries.append(e)
        added.append(rel)
    save_manifest(m, mpath)
    return {"manifest": str(mpath), "added": added}


# -- parser --------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fooder", description="Radar face authentication and expression recognition")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize a labelled raw-cube dataset")
    s.add_argument("--profile-set", default="default", choices=PROFILE_SETS)
    s.add_argument("--frames-per-subject", type=int, default=800)
    s.add_argument("--seq-len", type=int, default=40)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-frac", type=float, default=DEFAULT_FRACTIONS[0])
    s.add_argument("--cal-frac", type=float, default=DEFAULT_FRACTIONS[1])
    s.add_argument("--test-frac", type=float, default=DEFAULT_FRACTIONS[2])
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="raw cubes -> RDI / micro-RDI files")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--sinc-cutoff", type=float, default=0.125)
    s.add_argument("--mti-alpha", type=float, default=0.6)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train-auth", help="train the authenticator on ID training entries")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=A.AuthConfig.epochs)
    s.add_argument("--lr", type=float, default=A.AuthConfig.learning_rate)
    s.add_argument("--batch-size", type=int, default=A.AuthConfig.batch_size)
    s.add_argument("--iled-mode", default="inline", choices=("inline", "side"))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_auth)

    s = sub.add_parser("calibrate", help="set the 95%%-TPR threshold from ID calibration data")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", default="cal")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("eval-auth", help="score held-out data; writes report.json and scores.csv")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_eval_auth)

    s = sub.add_parser("train-fer", help="train gate + two specialists")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--epochs", type=int, default=FER.TrainConfig.epochs)
    s.add_argument("--lr", type=float, default=FER.TrainConfig.learning_rate)
    s.add_argument("--batch-size", type=int, default=FER.TrainConfig.batch_size)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_fer)

    s = sub.add_parser("eval-fer", help="confusion matrix of the cascade on ID data")
    s.add_argument("--manifest", required=True)
    s.add_argument("--fer-ckpts", nargs="+", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_fer)

    s = sub.add_parser("baseline-scores", help="classifier-based OOD baselines, one CSV per method")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--classifier", help="4-way classifier checkpoint; trained on the fly when omitted")
    s.add_argument("--methods", nargs="+", default=list(M.BASELINES), choices=M.BASELINES)
    s.add_argument("--split", default="test")
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--epochs", type=int, default=FER.TrainConfig.epochs)
    s.add_argument("--lr", type=float, default=FER.TrainConfig.learning_rate)
    s.add_argument("--batch-size", type=int, default=FER.TrainConfig.batch_size)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_baseline_scores)

    s = sub.add_parser("stream", help="replay raw frames through the gated pipeline")
    s.add_argument("--manifest", required=True)
    s.add_argument("--auth-ckpt", required=True)
    s.add_argument("--fer-ckpts", nargs="+", required=True)
    s.add_argument("--realtime", action="store_true", help="pace frames at the 50 ms frame period")
    s.add_argument("--split", default="test", help="split to replay, or 'all'")
    s.add_argument("--limit", type=int, default=0, help="stop after this many frames (0 = all)")
    s.add_argument("--log", help="write the per-frame decision log here (JSON lines)")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("import", help="add external raw-cube frame files to a manifest")
    s.add_argument("files", nargs="+")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--subject", required=True, help="id or ood-<k>")
    s.add_argument("--expression", choices=FER.EXPRESSIONS)
    s.add_argument("--split", default="train", choices=("train", "cal", "test"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dataset", default="imported")
    s.set_defaults(func=cmd_import)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"fooder: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except UsageError as exc:
        print(f"fooder: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError, ManifestError, CheckpointError, ConfigError, ValueError, KeyError,
            OSError) as exc:
        print(f"fooder: {args.command}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())

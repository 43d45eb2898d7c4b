"""Command-line harness: gen-data, train, attack, evaluate, reproduce.

Output layout under ``--out``::

    data/train.mnd, data/train.json      training split and manifest
    data/test.mnd,  data/test.json       held-out split and manifest
    classifier.ckpt, training.csv        checkpoint and per-epoch report
    attacks/skipped.csv                  held-out images the classifier gets wrong
    attacks/<mode>/<method>/             adversarial P6 images + records.json
    reports/<mode>/per_image.csv         one row per (method, image)
    reports/<mode>/aggregate.csv         one row per method, table order
    reports/<mode>/artifacts/            optional diff maps and Grad-CAM heatmaps
    summary.json, summary.txt            ordering verdicts (reproduce only)
"""

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import attacks as A
from . import classifier as C
from . import data as D
from . import metrics as M
from .config import METHODS, load_config
from .errors import EvaluationError, MNDError, UsageError

UNKNOWN_LABEL = 255
TIE_DB = 0.05


class StageError(MNDError):
    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def slug(method):
    return method.lower().replace("+", "_").replace(" ", "_")


def image_id(index):
    return f"test-{index:05d}"


class Layout:
    def __init__(self, out, cfg):
        self.out = out
        self.data = os.path.join(out, "data")
        self.train = os.path.join(self.data, "train.mnd")
        self.test = os.path.join(self.data, "test.mnd")
        ck = cfg.classifier.checkpoint
        self.checkpoint = ck if os.path.isabs(ck) else os.path.join(out, ck)
        self.training_csv = os.path.join(out, "training.csv")
        self.attacks = os.path.join(out, "attacks")
        self.skipped = os.path.join(self.attacks, "skipped.csv")
        self.reports = os.path.join(out, "reports")

    def method_dir(self, mode, method):
        return os.path.join(self.attacks, mode, slug(method))

    def report_dir(self, mode):
        return os.path.join(self.reports, mode)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(cfg, out):
    lay = Layout(out, cfg)
    os.makedirs(lay.data, exist_ok=True)
    ds_cfg = cfg.dataset
    train = D.generate(ds_cfg.train_per_class, cfg.seed)
    if ds_cfg.source == "folder":
        names, images = D.load_image_folder(ds_cfg.folder)
        if len(names) == 0:
            raise UsageError(f"no .ppm images found in {ds_cfg.folder}")
        test = D.Dataset(images, np.full(len(names), UNKNOWN_LABEL, dtype=np.int64), cfg.seed + 1)
    else:
        test = D.generate(ds_cfg.test_per_class, cfg.seed + 1)
    for ds, path in ((train, lay.train), (test, lay.test)):
        D.save_dataset(ds, path)
        D.write_manifest(ds, path, os.path.splitext(path)[0] + ".json")
    _log(f"gen-data: {len(train)} training and {len(test)} held-out images in {lay.data}")
    return train, test


# ---------------------------------------------------------------- train


def cmd_train(cfg, out):
    lay = Layout(out, cfg)
    if not os.path.exists(lay.train):
        raise UsageError(f"training data {lay.train} not found; run gen-data first")
    train = D.load_dataset(lay.train)
    clf = C.build_small_cnn(train.images.shape[1:], cfg.dataset.num_classes, seed=cfg.seed)
    c = cfg.classifier
    report = C.train(
        clf, train.images, train.labels, c.epochs, c.learning_rate, c.batch_size, seed=cfg.seed, log=_log
    )
    os.makedirs(os.path.dirname(lay.checkpoint) or ".", exist_ok=True)
    C.save(clf, lay.checkpoint)
    with open(lay.training_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy"])
        for i, (loss, acc) in enumerate(zip(report.epoch_loss, report.epoch_accuracy)):
            w.writerow([i + 1, repr(loss), repr(acc)])
    _log(f"train: checkpoint {lay.checkpoint} (checksum {clf.checksum()})")
    return clf, report


# ---------------------------------------------------------------- attack


def select_images(clf, test, count):
    """First ``count`` correctly classified held-out images, and the skip list.

    Images with an unknown label (external folders) are taken as correct.
    """
    pred = C.predict_batch(clf, test.images)
    known = test.labels != UNKNOWN_LABEL
    wrong = known & (pred != test.labels)
    skipped = [(int(i), int(test.labels[i]), int(pred[i])) for i in np.flatnonzero(wrong)]
    chosen = np.flatnonzero(~wrong)[:count]
    labels = np.where(known[chosen], test.labels[chosen], pred[chosen])
    return chosen, labels, skipped


def _run_method(cfg, clf, mode, method, images, labels):
    if method in A.BASELINES:
        return A.BASELINE_ATTACKS[method](images, clf, labels, cfg.baseline_config())
    return A.mnd_attack_batch(images, clf, cfg.attack_config(mode, method), labels, method=method)


def _finite(v):
    return v if math.isfinite(v) else None


def cmd_attack(cfg, out):
    lay = Layout(out, cfg)
    if not os.path.exists(lay.checkpoint):
        raise UsageError(f"checkpoint {lay.checkpoint} not found; run train first")
    if not os.path.exists(lay.test):
        raise UsageError(f"held-out data {lay.test} not found; run gen-data first")
    clf = C.load(lay.checkpoint)
    before = clf.checksum()
    test = D.load_dataset(lay.test)
    chosen, labels, skipped = select_images(clf, test, cfg.attack.num_images)
    if len(chosen) < 2:
        raise UsageError("fewer than two correctly classified held-out images to attack")
    os.makedirs(lay.attacks, exist_ok=True)
    with open(lay.skipped, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "label", "predicted"])
        for idx, lab, pred in skipped:
            w.writerow([image_id(idx), lab, pred])
    images = test.images[chosen]
    written = {}
    for mode in cfg.attack.modes:
        for method in [m for m in METHODS if m in cfg.attack.methods]:
            if mode == "targeted" and method in A.BASELINES:
                continue
            t0 = time.time()
            results = _run_method(cfg, clf, mode, method, images, labels)
            folder = lay.method_dir(mode, method)
            os.makedirs(folder, exist_ok=True)
            records = []
            for idx, lab, res in sorted(zip(chosen, labels, results), key=lambda t: image_id(t[0])):
                iid = image_id(int(idx))
                name = f"{iid}.ppm"
                D.write_ppm(os.path.join(folder, name), res.adversarial)
                records.append(
                    {
                        "image_id": iid,
                        "index": int(idx),
                        "method": method,
                        "mode": mode,
                        "label": int(lab),
                        "clean_class": res.clean_class,
                        "adversarial_class": res.adversarial_class,
                        "target_class": res.target_class,
                        "success": res.success,
                        "iterations": res.iterations_used,
                        "final_loss": _finite(res.final_loss),
                        "file": name,
                    }
                )
            with open(os.path.join(folder, "records.json"), "w") as fh:
                json.dump(records, fh, indent=1)
                fh.write("\n")
            rate = np.mean([r["success"] for r in records])
            _log(f"attack: {mode} {method}: success {rate:.2f} ({time.time() - t0:.1f}s)")
            written[(mode, method)] = records
    if clf.checksum() != before:
        raise EvaluationError("classifier parameters changed during the attack stage")
    return written


# ---------------------------------------------------------------- evaluate


def _load_records(lay, mode, method):
    path = os.path.join(lay.method_dir(mode, method), "records.json")
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        return json.load(fh)


def cmd_evaluate(cfg, out):
    lay = Layout(out, cfg)
    if not os.path.exists(lay.test):
        raise UsageError(f"held-out data {lay.test} not found; run gen-data first")
    test = D.load_dataset(lay.test)
    clf = C.load(lay.checkpoint) if os.path.exists(lay.checkpoint) else None
    ev = cfg.evaluation
    reports = {}
    for mode in cfg.attack.modes:
        rows = []
        for method in METHODS:
            if method not in cfg.attack.methods:
                continue
            recs = _load_records(lay, mode, method)
            if recs is None:
                continue
            folder = lay.method_dir(mode, method)
            for k, rec in enumerate(recs):
                clean = test.images[rec["index"]]
                adv = D.read_pnm(os.path.join(folder, rec["file"]))
                if clf is not None:
                    cls = C.predict(clf, adv)[0]
                    if cls != rec["adversarial_class"]:
                        raise EvaluationError(
                            f"{mode}/{method}/{rec['image_id']}: stored image classifies as {cls}, "
                            f"record says {rec['adversarial_class']}"
                        )
                rows.append(
                    {
                        "method": method,
                        "image_id": rec["image_id"],
                        "psnr": M.psnr(adv, clean),
                        "ssim": M.ssim_eval(adv, clean),
                        "success": bool(rec["success"]),
                        "iterations": int(rec["iterations"]),
                        "deviation_pixel_ratio": M.deviation_pixel_ratio(adv, clean),
                    }
                )
                if k < ev.artifact_limit and (ev.diff_maps or (ev.grad_cam and clf is not None)):
                    _write_artifacts(lay, cfg, clf, mode, method, rec, clean, adv)
        if not rows:
            continue
        rdir = lay.report_dir(mode)
        os.makedirs(rdir, exist_ok=True)
        report = M.aggregate(rows, order=METHODS)
        M.write_csv(os.path.join(rdir, "per_image.csv"), rows, M.RECORD_FIELDS)
        M.write_csv(os.path.join(rdir, "aggregate.csv"), report.rows, M.AGGREGATE_FIELDS)
        for r in report.rows:
            _log(
                f"evaluate: {mode} {r['method']:8s} success {r['success_rate']:.2f} "
                f"PSNR {r['psnr_mean']:.2f} SSIM {r['ssim_mean']:.4f} ratio {r['ratio_mean']:.4f}"
            )
        reports[mode] = report
    if not reports:
        raise UsageError("no attack outputs found; run attack first")
    return reports


def _write_artifacts(lay, cfg, clf, mode, method, rec, clean, adv):
    adir = os.path.join(lay.report_dir(mode), "artifacts", slug(method))
    os.makedirs(adir, exist_ok=True)
    iid = rec["image_id"]
    if cfg.evaluation.diff_maps:
        D.write_ppm(os.path.join(adir, f"{iid}_diff.ppm"), M.abs_diff_map(adv, clean) / 255.0)
    if cfg.evaluation.grad_cam and clf is not None:
        cls = rec["clean_class"]
        D.write_pgm(os.path.join(adir, f"{iid}_cam_clean.pgm"), M.grad_cam(clf, clean, cls))
        D.write_pgm(os.path.join(adir, f"{iid}_cam_adv.pgm"), M.grad_cam(clf, adv, cls))


# ---------------------------------------------------------------- reproduce


def _ssim_db(s):
    return -10.0 * math.log10(max(1.0 - s, 1e-300))


def chain_holds(means, chain, kind="psnr", tie_db=TIE_DB):
    """``means[a] >= means[b]`` along the chain, adjacent ties within ``tie_db``.

    SSIM values are compared on the ``-10 log10(1 - SSIM)`` scale so one
    tolerance serves both metrics. The first element must beat every other
    chain member strictly.
    """
    conv = _ssim_db if kind == "ssim" else float
    vals = [conv(means[m]) for m in chain]
    if any(not math.isfinite(v) for v in vals):
        return False
    adjacent = all(a >= b - tie_db for a, b in zip(vals, vals[1:]))
    top = all(vals[0] > v for v in vals[1:])
    return adjacent and top


def _verdict(ok):
    return "reproduced" if ok else "not reproduced"


def ordering_summary(reports):
    """One verdict per ordering claim of the quality tables."""
    claims = []
    for mode, table in (("non_targeted", "non-targeted table"), ("targeted", "targeted table")):
        rep = reports.get(mode)
        if rep is None:
            continue
        rows = {r["method"]: r for r in rep.rows}
        psnr = {m: r["psnr_mean"] for m, r in rows.items()}
        ssim = {m: r["ssim_mean"] for m, r in rows.items()}
        base = [m for m in A.BASELINES if m in rows]

        def add(claim, ok):
            claims.append({"table": table, "claim": claim, "verdict": ok})

        if "MND" in rows and base:
            add("MND PSNR above every baseline", _verdict(all(psnr["MND"] > psnr[b] for b in base)))
            add("MND SSIM above every baseline", _verdict(all(ssim["MND"] > ssim[b] for b in base)))
        variants = [m for m in A.PRESETS if m in rows]
        if "MND" in rows and len(variants) > 1:
            for kind, vals in (("PSNR", psnr), ("SSIM", ssim)):
                others = [m for m in variants if m != "MND"]
                add(f"MND {kind} above every MND variant", _verdict(all(vals["MND"] > vals[m] for m in others)))
        for chain in (("MND", "L1+SSIM", "L1", "No norm"), ("MND", "SSIM", "No norm")):
            if all(m in rows for m in chain):
                for kind, vals in (("psnr", psnr), ("ssim", ssim)):
                    add(
                        f"{kind.upper()} chain {' >= '.join(chain)}",
                        _verdict(chain_holds(vals, chain, kind)),
                    )
    nt, tg = reports.get("non_targeted"), reports.get("targeted")
    if nt is not None and tg is not None:
        try:
            a, b = nt.row("MND"), tg.row("MND")
        except KeyError:
            a = b = None
        if a is not None:
            claims.append(
                {
                    "table": "both tables",
                    "claim": "targeted MND needs at least as many iterations as non-targeted",
                    "verdict": _verdict(b["iterations_mean"] >= a["iterations_mean"]),
                }
            )
            claims.append(
                {
                    "table": "both tables",
                    "claim": "targeted MND PSNR not above non-targeted",
                    "verdict": _verdict(b["psnr_mean"] <= a["psnr_mean"]),
                }
            )
    return claims


def write_summary(out, claims):
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(claims, fh, indent=1)
        fh.write("\n")
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        for c in claims:
            fh.write(f"[{c['verdict']}] {c['table']}: {c['claim']}\n")


def cmd_reproduce(cfg, out):
    t0 = time.time()
    for stage, fn in (("gen-data", cmd_gen_data), ("train", cmd_train), ("attack", cmd_attack)):
        _stage(stage, fn, cfg, out)
    reports = _stage("evaluate", cmd_evaluate, cfg, out)
    claims = ordering_summary(reports)
    write_summary(out, claims)
    _log(f"reproduce: {sum(c['verdict'] == 'reproduced' for c in claims)}/{len(claims)} orderings reproduced")
    _log(f"reproduce: finished in {time.time() - t0:.1f}s")
    return reports, claims


def _stage(stage, fn, cfg, out):
    try:
        return fn(cfg, out)
    except StageError:
        raise
    except (MNDError, ValueError, OSError, ArithmeticError, RuntimeError) as exc:
        raise StageError(stage, exc) from exc


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
    "reproduce": cmd_reproduce,
}


def build_parser():
    p = argparse.ArgumentParser(prog="mnd", description="Quality-preserving adversarial image experiments.")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="JSON experiment config (defaults are the desk-scale settings)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", default="mnd-run", help="output directory (default: %(default)s)")
    p.add_argument("--methods", help="comma-separated subset of: " + ", ".join(METHODS))
    p.add_argument("--mode", choices=["targeted", "non-targeted"], help="attack a single mode")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    stage = "config"
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.methods:
            cfg.attack.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        if args.mode:
            cfg.attack.modes = [args.mode.replace("-", "_")]
        from .config import validate

        validate(cfg)
        os.makedirs(args.out, exist_ok=True)
        stage = args.command
        if args.command == "reproduce":
            cmd_reproduce(cfg, args.out)
        else:
            _stage(stage, COMMANDS[args.command], cfg, args.out)
    except StageError as exc:
        print(f"mnd: error in {exc.stage}: {exc.cause}", file=sys.stderr)
        return 1
    except (MNDError, ValueError, OSError) as exc:
        print(f"mnd: error in {stage}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

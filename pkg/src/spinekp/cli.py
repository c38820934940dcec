"""Command line entry point: ``spinekp {phantom,train,eval,infer,plot}``."""
from __future__ import annotations

import argparse
import dataclasses
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence


from .config import load_config
from .data import PhantomSpec, generate_phantom_exam, list_exams, load_exam, save_exam
from .data.io import is_writable_dir
from .metrics import BRANCHES, DEFAULT_THRESHOLDS

log = logging.getLogger("spinekp")


def cmd_phantom(spec: PhantomSpec, out_dir) -> List[Path]:
    out = Path(out_dir)
    if not is_writable_dir(out):
        raise PermissionError(f"{out} is not writable")
    out.mkdir(parents=True, exist_ok=True)
    return [save_exam(out, *generate_phantom_exam(spec, i)) for i in range(spec.count)]


def write_report(report: dict, out_dir) -> dict:
    """report.json, report.csv (one row per branch x class) and pck_curve.csv when present."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "csv": out / "report.csv"}
    with open(paths["json"], "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["branch", "class", "precision", "recall", "f1", "tp", "fp", "fn", "pck"])
        for b in BRANCHES:
            br = report["branches"][b]
            for name, row in br["classes"].items():
                w.writerow([b, name, f"{row['precision']:.6f}", f"{row['recall']:.6f}", f"{row['f1']:.6f}",
                            row.get("tp", ""), row.get("fp", ""), row.get("fn", ""), f"{br['pck']:.6f}"])
        w.writerow(["all", "micro_ap", f"{report['micro_ap']:.6f}", "", "", "", "", "", f"{report['pck']:.6f}"])
    if report.get("pck_curve"):
        paths["curve"] = out / "pck_curve.csv"
        with open(paths["curve"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold_mm", *BRANCHES, "all"])
            for row in report["pck_curve"]:
                w.writerow([row["threshold_mm"], *(f"{row[b]:.6f}" for b in BRANCHES), f"{row['all']:.6f}"])
    return paths


def cmd_eval(checkpoint, data_dir, out_dir, thresholds: Sequence[float] = (6.0,)) -> dict:
    from . import pipeline

    model, cfg, _ = pipeline.load_checkpoint(checkpoint)
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("at least one threshold is required")
    cfg = cfg.replace(threshold_mm=6.0 if 6.0 in thresholds else thresholds[0])
    exams = pipeline.load_prepared(list_exams(data_dir), cfg)
    if not exams:
        raise ValueError(f"no exams in {data_dir}")
    report = pipeline.evaluate_model(model, exams, cfg, thresholds if len(thresholds) > 1 else ())
    report["checkpoint"] = str(checkpoint)
    paths = write_report(report, out_dir)
    if "curve" in paths:
        from .plotting import plot_pck_curves

        plot_pck_curves([report], Path(out_dir) / "pck_curve.png")
    return report


def cmd_infer(checkpoint, exam_dir, out_dir) -> dict:
    from . import pipeline
    from .plotting import overlay

    model, cfg, _ = pipeline.load_checkpoint(checkpoint)
    exam, ann = load_exam(exam_dir)
    prepared = pipeline.prepare_exam(exam, ann, cfg)
    t0 = time.perf_counter()
    det = pipeline.predict(model, [prepared], cfg)[0]
    latency = time.perf_counter() - t0
    log.info("inference on %s took %.3fs", exam.exam_id, latency)
    detections = [pipeline.map_to_original(d, prepared.transform) for b in BRANCHES for d in det[b]]
    result = {"exam_id": exam.exam_id, "latency_s": latency, "detections": detections}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{exam.exam_id}_detections.json", "w") as fh:
        json.dump(result, fh, indent=2)
    overlay(prepared.middle, detections, ann.keypoints, out / f"{exam.exam_id}_overlay.png")
    return result


def cmd_plot(reports: Sequence, out_dir, logs: Sequence = ()) -> List[Path]:
    from .plotting import plot_loss_curve, plot_pck_curves

    loaded, labels = [], []
    for path in reports:
        with open(path) as fh:
            rep = json.load(fh)
        if not rep.get("pck_curve"):
            raise ValueError(f"{path} has no PCK curve")
        loaded.append(rep)
        labels.append(Path(path).parent.name or str(path))
    if not loaded and not logs:
        raise ValueError("nothing to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if loaded:
        written.append(plot_pck_curves(loaded, out / "pck_curve.png", labels))
    for path in logs:
        written.append(plot_loss_curve(path, out / f"{Path(path).stem}_loss.png"))
    return written


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinekp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="write synthetic exams")
    ph.add_argument("out_dir")
    ph.add_argument("--count", type=int, default=200)
    ph.add_argument("--image-size", type=int, default=160)
    ph.add_argument("--degenerative-rate", type=float, default=0.3)
    ph.add_argument("--jitter", type=float, default=1.0)
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--pixel-spacing", type=float, default=1.3125)
    ph.add_argument("--spacing-jitter", type=float, default=0.05)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--config", help="RunConfig JSON file")
    tr.add_argument("--profile", default="default", choices=["default", "tiny"])
    tr.add_argument("--data-dir")
    tr.add_argument("--val-dir")
    tr.add_argument("--out-dir")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--no-oa", action="store_true", help="disable objective association")
    tr.add_argument("--resume", help="checkpoint to continue from (config must match)")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("data_dir")
    ev.add_argument("--out-dir", default="eval")
    ev.add_argument("--thresholds", default="6", help="comma list of mm thresholds, or 'curve' for 1..10")

    inf = sub.add_parser("infer", help="detect keypoints on one exam")
    inf.add_argument("checkpoint")
    inf.add_argument("exam_dir")
    inf.add_argument("--out-dir", default="infer")

    pl = sub.add_parser("plot", help="plot PCK curves and loss logs")
    pl.add_argument("reports", nargs="*")
    pl.add_argument("--log", action="append", default=[])
    pl.add_argument("--out-dir", default="figures")
    return p


def _thresholds(raw: str):
    if raw == "curve":
        return list(DEFAULT_THRESHOLDS)
    return [float(t) for t in raw.split(",") if t.strip()]


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(asctime)s %(message)s")
    if args.command == "phantom":
        spec = PhantomSpec(
            count=args.count, image_size=args.image_size, degenerative_rate=args.degenerative_rate,
            jitter=args.jitter, rng_seed=args.seed, pixel_spacing=args.pixel_spacing,
            spacing_jitter=args.spacing_jitter,
        )
        paths = cmd_phantom(spec, args.out_dir)
        print(f"wrote {len(paths)} exams to {args.out_dir}")
    elif args.command == "train":
        from . import pipeline

        cfg = load_config(args.config, args.profile, data_dir=args.data_dir, val_dir=args.val_dir,
                          out_dir=args.out_dir, epochs=args.epochs, seed=args.seed)
        if args.no_oa:
            cfg = cfg.replace(oa=dataclasses.replace(cfg.oa, enabled=False))
        result = pipeline.train(cfg, resume=args.resume)
        print(json.dumps({k: v for k, v in result.items() if k != "last_report"}, indent=2))
    elif args.command == "eval":
        report = cmd_eval(args.checkpoint, args.data_dir, args.out_dir, _thresholds(args.thresholds))
        print(json.dumps({"pck": report["pck"], "macro_f1_mean": report["macro_f1_mean"],
                          "micro_ap": report["micro_ap"]}, indent=2))
    elif args.command == "infer":
        result = cmd_infer(args.checkpoint, args.exam_dir, args.out_dir)
        print(json.dumps(result, indent=2))
    elif args.command == "plot":
        for path in cmd_plot(args.reports, args.out_dir, args.log):
            print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

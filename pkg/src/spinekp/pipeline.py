"""Preprocessing, training loop, evaluation, inference and checkpoints."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .config import RunConfig
from .data import (
    AugmentationSpec,
    ExamAnnotation,
    ExamRecord,
    GeometryTransform,
    alignment_transform,
    apply_augmentation,
    list_exams,
    load_exam,
    normalize_intensity,
    select_middle_slices,
    split_dataset,
    warp_stack,
)
from .decode import DetectedKeypoint, decode_branch
from .metrics import BRANCHES, ExamResult, evaluate
from .network import KeypointNet, build_model
from .objectives import BranchTargets, EpochState, total_loss
from .targets import EncodingSpec, encode_exam_targets, stack_targets

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


class ConfigMismatch(RuntimeError):
    pass


@dataclass
class PreparedExam:
    exam_id: str
    stack: np.ndarray  # (n_slices, canvas, canvas), normalized
    annotation: ExamAnnotation  # canvas coordinates
    transform: GeometryTransform  # original pixels -> canvas
    middle: np.ndarray  # raw middle slice, original geometry (for overlays)


def prepare_exam(exam: ExamRecord, annotation: ExamAnnotation, cfg: RunConfig) -> PreparedExam:
    """Middle slices -> per-exam normalization -> spacing alignment onto the canvas."""
    stack = normalize_intensity(select_middle_slices(exam, cfg.n_slices))
    transform = alignment_transform(exam.shape, exam.pixel_spacing, cfg.spacing, cfg.canvas, exam.exam_id)
    canvas = warp_stack(stack, transform, (cfg.canvas, cfg.canvas))
    ann = annotation.map_positions(transform.forward, bounds=(cfg.canvas, cfg.canvas))
    return PreparedExam(exam.exam_id, canvas, ann, transform, exam.slices[exam.middle_index])


def load_prepared(paths: Sequence[Path], cfg: RunConfig) -> List[PreparedExam]:
    return [prepare_exam(*load_exam(p), cfg) for p in paths]


def lr_at(epoch: int, cfg: RunConfig) -> float:
    return cfg.initial_lr * (1.0 - epoch / cfg.epochs) ** cfg.lr_power


def augmentation_seed(seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


class TrainingSet(Dataset):
    """Augmented crops with their targets; the draw depends only on (seed, epoch, index)."""

    def __init__(self, exams: Sequence[PreparedExam], cfg: RunConfig):
        self.exams = list(exams)
        self.cfg = cfg
        self.epoch = 0
        self.encoding = EncodingSpec(radius_px=cfg.radius_px, grid=(cfg.crop, cfg.crop))

    def __len__(self):
        return len(self.exams)

    def __getitem__(self, index):
        ex = self.exams[index]
        spec = AugmentationSpec(
            hflip_prob=self.cfg.hflip_prob,
            zoom_range=self.cfg.zoom_range,
            crop_size=self.cfg.crop,
            rng_seed=augmentation_seed(self.cfg.seed, self.epoch, index),
        )
        stack, ann = apply_augmentation(ex.stack, ex.annotation, spec)
        disc, vert = encode_exam_targets(ann, self.encoding)
        out = {"image": torch.from_numpy(stack)}
        for name, maps in (("disc", disc), ("vert", vert)):
            h, o, m = stack_targets(maps)
            out[f"{name}_heatmap"] = torch.from_numpy(h)
            out[f"{name}_offset"] = torch.from_numpy(o)
            out[f"{name}_mask"] = torch.from_numpy(m)
        return out


def _branch_targets(batch, name) -> BranchTargets:
    return BranchTargets(batch[f"{name}_heatmap"], batch[f"{name}_offset"], batch[f"{name}_mask"])


def make_model(cfg: RunConfig) -> KeypointNet:
    return build_model(cfg.n_slices, cfg.feature_size, cfg.widths, cfg.attention_enabled)


def seed_everything(seed: int):
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


@torch.no_grad()
def predict(model: KeypointNet, exams: Sequence[PreparedExam], cfg: RunConfig) -> List[Dict[str, list]]:
    """Top-k detections per branch on the canvas grid."""
    model.eval()
    out = []
    for ex in exams:
        x = torch.from_numpy(ex.stack).unsqueeze(0)
        pred = model(x)
        det = {}
        for branch, heat, off in (
            ("disc", pred.disc_heatmap, pred.disc_offset),
            ("vertebra", pred.vert_heatmap, pred.vert_offset),
        ):
            det[branch] = decode_branch(heat[0].numpy(), off[0].numpy(), cfg.radius_px, branch, k=cfg.top_k)
        out.append(det)
    return out


def evaluate_model(model, exams: Sequence[PreparedExam], cfg: RunConfig, thresholds=()) -> dict:
    detections = predict(model, exams, cfg)
    results = [
        ExamResult(
            ex.exam_id,
            det,
            {b: [kp for kp in ex.annotation.branch(b) if kp.valid] for b in BRANCHES},
            (cfg.spacing, cfg.spacing),
        )
        for ex, det in zip(exams, detections)
    ]
    return evaluate(results, cfg.threshold_mm, thresholds)


def save_checkpoint(model, cfg: RunConfig, path, epoch: int, metrics: Optional[dict] = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    meta = {
        "format_version": CHECKPOINT_FORMAT,
        "backbone": model.spec.name,
        "epoch": epoch,
        "config_hash": cfg.config_hash(),
        "metrics": metrics or {},
        "config": cfg.to_dict(),
    }
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_checkpoint(path, cfg: Optional[RunConfig] = None):
    """Returns (model, config, meta). With ``cfg`` given its hash must match the checkpoint's."""
    path = Path(path)
    with open(path.with_suffix(".json")) as fh:
        meta = json.load(fh)
    if meta.get("format_version") != CHECKPOINT_FORMAT:
        raise ConfigMismatch(f"unsupported checkpoint format {meta.get('format_version')}")
    saved = RunConfig(**meta["config"])
    if saved.config_hash() != meta["config_hash"]:
        raise ConfigMismatch(f"{path}: sidecar config does not match its recorded hash")
    if cfg is not None and cfg.config_hash() != meta["config_hash"]:
        raise ConfigMismatch(f"{path} was trained with config {meta['config_hash']}, got {cfg.config_hash()}")
    model = make_model(saved)
    model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    model.eval()
    return model, saved, meta


class JsonlLog:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w")

    def write(self, record: dict):
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def split_exam_dirs(cfg: RunConfig):
    """(train, validation) exam directories; a separate ``val_dir`` takes precedence over splitting."""
    paths = list_exams(cfg.data_dir)
    if not paths:
        raise ValueError(f"no exams found in {cfg.data_dir}")
    if cfg.val_dir:
        return paths, list_exams(cfg.val_dir)
    by_id = {p.name: p for p in paths}
    train_ids, val_ids = split_dataset(sorted(by_id), 1.0 - cfg.val_fraction, cfg.seed)
    return [by_id[i] for i in sorted(train_ids)], [by_id[i] for i in sorted(val_ids)]


def train(cfg: RunConfig, resume: Optional[str] = None) -> dict:
    """Train, keeping best-by-validation-macro-F1 and last checkpoints under ``cfg.out_dir``."""
    seed_everything(cfg.seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")

    train_paths, val_paths = split_exam_dirs(cfg)
    train_set = TrainingSet(load_prepared(train_paths, cfg), cfg)
    val_exams = load_prepared(val_paths, cfg)

    model = make_model(cfg)
    start_epoch = 0
    if resume is not None:
        loaded, _, meta = load_checkpoint(resume, cfg)
        model.load_state_dict(loaded.state_dict())
        start_epoch = meta["epoch"] + 1
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.initial_lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay
    )
    generator = torch.Generator().manual_seed(cfg.seed)
    loader = DataLoader(
        train_set, batch_size=cfg.batch_size, shuffle=True, generator=generator,
        num_workers=cfg.workers, drop_last=len(train_set) > cfg.batch_size,
    )
    steps = JsonlLog(out / "train_log.jsonl")
    epochs = JsonlLog(out / "epoch_log.jsonl")
    best_f1, best_epoch, last_report = -1.0, -1, {}
    t0 = time.perf_counter()
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        train_set.epoch = epoch
        model.train()
        state = EpochState(epoch, cfg.epochs)
        sums, n = {}, 0
        for step, batch in enumerate(loader):
            outputs = model(batch["image"])
            losses = total_loss(
                outputs, _branch_targets(batch, "disc"), _branch_targets(batch, "vert"), state, cfg.gamma, cfg.oa
            )
            if not torch.isfinite(losses.total):
                raise FloatingPointError(f"non-finite loss at epoch {epoch} step {step}")
            optimizer.zero_grad(set_to_none=True)
            losses.total.backward()
            optimizer.step()
            rec = losses.as_record()
            for k, v in rec.items():
                if k != "oa_active":
                    sums[k] = sums.get(k, 0.0) + v
            n += 1
            if step % cfg.log_every == 0:
                steps.write({"epoch": epoch, "step": step, "lr": lr, **rec})
        summary = {"epoch": epoch, "lr": lr, "oa_active": state.epoch >= cfg.oa.activation_epoch(cfg.epochs)
                   and cfg.oa.enabled, **{k: v / max(n, 1) for k, v in sums.items()}}
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            last_report = evaluate_model(model, val_exams, cfg) if val_exams else {}
            f1 = last_report.get("macro_f1_mean", 0.0)
            summary.update(val_macro_f1=f1, val_pck=last_report.get("pck", 0.0))
            if f1 > best_f1:
                best_f1, best_epoch = f1, epoch
                save_checkpoint(model, cfg, out / "best.pt", epoch, last_report)
        summary["elapsed_s"] = round(time.perf_counter() - t0, 3)
        epochs.write(summary)
        log.info("epoch %d %s", epoch, {k: round(v, 4) if isinstance(v, float) else v for k, v in summary.items()})
    save_checkpoint(model, cfg, out / "last.pt", cfg.epochs - 1, last_report)
    steps.close()
    epochs.close()
    return {"best_epoch": best_epoch, "best_val_macro_f1": best_f1, "last_report": last_report,
            "train_seconds": time.perf_counter() - t0}


def map_to_original(det: DetectedKeypoint, transform: GeometryTransform) -> dict:
    r, c = transform.inverse(*det.position)
    d = det.to_dict()
    d.update(row=float(r), col=float(c))
    return d

"""Run configuration: JSON file + ``SPINEONE_<FIELD>`` environment overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .objectives import OASpec

ENV_PREFIX = "SPINEONE_"

# (batch size, initial lr) keyed by whether attention modules are used
DEFAULT_BATCH_LR = {False: (64, 0.04), True: (16, 0.01)}

# fields that do not change the trained model and stay out of the config hash
_UNHASHED = {"data_dir", "val_dir", "out_dir", "workers", "log_every"}


@dataclass
class RunConfig:
    data_dir: str = "data"
    val_dir: Optional[str] = None  # when unset, val_fraction of data_dir is held out
    out_dir: str = "runs/default"
    n_slices: int = 7
    canvas: int = 640
    crop: int = 512
    spacing: float = 0.4375
    radius_px: float = 6.0
    gamma: float = 2.0
    epochs: int = 300
    attention_enabled: bool = True
    batch_size: Optional[int] = None
    initial_lr: Optional[float] = None
    lr_power: float = 0.9
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    oa: OASpec = field(default_factory=OASpec)
    seed: int = 0
    feature_size: Tuple[int, int] = (128, 128)
    widths: Tuple[int, ...] = (32, 64, 128, 256)
    hflip_prob: float = 0.5
    zoom_range: Tuple[float, float] = (0.7, 1.3)
    val_fraction: float = 0.2
    eval_every: int = 10
    threshold_mm: float = 6.0
    top_k: int = 5
    workers: int = 0
    log_every: int = 1

    def __post_init__(self):
        if isinstance(self.oa, dict):
            self.oa = OASpec(**self.oa)
        for name in ("betas", "feature_size", "widths", "zoom_range"):
            setattr(self, name, tuple(getattr(self, name)))
        bs, lr = DEFAULT_BATCH_LR[bool(self.attention_enabled)]
        if self.batch_size is None:
            self.batch_size = bs
        if self.initial_lr is None:
            self.initial_lr = lr
        self.validate()

    def validate(self):
        positive = ("n_slices", "canvas", "crop", "spacing", "radius_px", "epochs", "batch_size",
                    "initial_lr", "lr_power", "eps", "eval_every", "threshold_mm", "top_k")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"config field {name} must be positive, got {getattr(self, name)}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.n_slices % 2 == 0:
            raise ValueError("n_slices must be odd")
        if self.crop > self.canvas:
            raise ValueError("crop must not exceed canvas")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def tiny_profile(**overrides) -> RunConfig:
    """Desk-scale profile: 160px canvas, 128px crops, 2px disks.

    The spacing is chosen so 2px still spans 2.625mm, keeping mm thresholds meaningful.
    """
    base = dict(
        canvas=160,
        crop=128,
        spacing=2.625 / 2,
        radius_px=2.0,
        epochs=60,
        feature_size=(16, 16),
        widths=(16, 24, 32, 48),
        batch_size=16,
        initial_lr=0.004,
        eval_every=10,
    )
    base.update(overrides)
    return RunConfig(**base)


PROFILES = {"default": RunConfig, "tiny": tiny_profile}


def _coerce(raw: str, current):
    if isinstance(current, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float) or current is None:
        return float(raw)
    if isinstance(current, (tuple, list, dict)):
        return json.loads(raw)
    return raw


def apply_env_overrides(values: dict, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    names = {f.name for f in dataclasses.fields(RunConfig)}
    out = dict(values)
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name not in names:
            continue
        default = getattr(RunConfig, name, None) if name != "oa" else {}
        out[name] = _coerce(raw, out.get(name, default))
    return out


def load_config(path=None, profile: str = "default", environ=None, **overrides) -> RunConfig:
    """Profile defaults, then the JSON file, then environment, then explicit overrides."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    values = PROFILES[profile]().to_dict()
    if path is not None:
        with open(path) as fh:
            values.update(json.load(fh))
    values = apply_env_overrides(values, environ)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)

"""Training recipe, evaluation, inference and config files."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .checkpoint import Checkpoint
from .data import Sample, augment, collate, normalize, read_image
from .loss import LossConfig, total_loss
from .metrics import MetricReport, image_metrics
from .model import MGNet

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 0.08
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 32
    batch_size: int = 12
    input_size: int = 384
    scales: tuple = (0.7, 1.0, 1.2)
    t_refine: int = 2
    use_frm: bool = True
    use_ppg: bool = True
    use_ual: bool = True
    seed: int = 0
    profile: str = "full"
    level_channels: tuple | None = None
    decoder_channels: tuple | None = None
    pair_mode: str = "carry"
    weights_source: str | None = None
    freeze_bn: bool = False
    warmup_epochs: float = 1.0
    max_steps: int | None = None
    ual_weight: float = 1.5
    lambda_schedule: str = "cosine_increase"
    supervise_trace: bool = False
    supervise_coarse: bool = False
    grad_clip: float | None = None
    augment: bool = True

    def __post_init__(self):
        for name in ("scales", "level_channels", "decoder_channels"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, tuple(v))
        for name in ("lr0", "epochs", "batch_size", "input_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0 or self.t_refine < 0:
            raise ValueError("weight_decay and t_refine must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def load_config(path) -> TrainConfig:
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        d = tomllib.loads(path.read_text())
    else:
        d = json.loads(path.read_text())
    return TrainConfig.from_dict(d)


def effective_seed(cfg: TrainConfig) -> int:
    env = os.environ.get("MGNET_SEED")
    return int(env) if env not in (None, "") else cfg.seed


def build_model(cfg: TrainConfig, load_weights: bool = True) -> MGNet:
    return MGNet(
        profile=cfg.profile,
        level_channels=cfg.level_channels,
        decoder_channels=cfg.decoder_channels,
        use_frm=cfg.use_frm,
        use_ppg=cfg.use_ppg,
        t_refine=cfg.t_refine,
        scales=cfg.scales,
        pair_mode=cfg.pair_mode,
        weights_source=cfg.weights_source if load_weights else None,
        freeze_bn=cfg.freeze_bn,
    )


def lr_at(step: int, total_steps: int, cfg: TrainConfig, steps_per_epoch: int | None = None) -> float:
    """Linear warmup from 0 over ``warmup_epochs``, then linear decay to 0 at ``total_steps``."""
    if steps_per_epoch is None:
        steps_per_epoch = max(1, total_steps // cfg.epochs)
    warmup = max(1, int(round(cfg.warmup_epochs * steps_per_epoch)))
    warmup = min(warmup, max(1, total_steps - 1))
    if step <= warmup:
        return cfg.lr0 * step / warmup
    remaining = max(1, total_steps - warmup)
    return cfg.lr0 * max(0.0, (total_steps - step) / remaining)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict] = field(default_factory=list)


def _seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def train(cfg: TrainConfig, dataset, out_dir=None, on_step=None) -> TrainResult:
    """SGD training; returns the final checkpoint and one log record per step."""
    samples: list[Sample] = list(dataset)
    if not samples:
        raise ValueError("cannot train on an empty dataset")
    seed = effective_seed(cfg)
    rng = _seed_everything(seed)
    model = build_model(cfg)
    model.train()

    n = len(samples)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.max_steps or cfg.epochs * steps_per_epoch
    loss_cfg = LossConfig(cfg.ual_weight, cfg.lambda_schedule, total_steps, cfg.use_ual)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.SGD(params, lr=0.0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "w")
    records = []

    def snapshot(step):
        return Checkpoint(
            params=model.state_dict(), config=cfg.to_dict() | {"seed": seed},
            optimizer=opt.state_dict(), step=step,
        )

    step, epoch = 0, 0
    try:
        while step < total_steps:
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                if step >= total_steps:
                    break
                batch = [samples[i] for i in order[start:start + cfg.batch_size]]
                if cfg.augment:
                    batch = [augment(s, rng) for s in batch]
                images, masks = collate(batch)
                lr = lr_at(step, total_steps, cfg, steps_per_epoch)
                for group in opt.param_groups:
                    group["lr"] = lr

                pred = model(images)
                loss, parts = total_loss(torch.sigmoid(pred.final_logits), masks, step, loss_cfg,
                                         return_parts=True)
                extra = []
                if cfg.supervise_trace and model.use_ppg:
                    extra += pred.trace[:-1]
                if cfg.supervise_coarse and not (cfg.supervise_trace and model.use_ppg):
                    extra.append(pred.coarse_logits)
                for logits in extra:
                    up = F.interpolate(logits, size=masks.shape[-2:], mode="bilinear", align_corners=False)
                    loss = loss + total_loss(torch.sigmoid(up), masks, step, loss_cfg)
                if not torch.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss at step {step}")

                opt.zero_grad(set_to_none=True)
                loss.backward()
                if cfg.grad_clip:
                    torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                opt.step()

                rec = {
                    "step": step, "epoch": epoch, "loss": loss.item(),
                    "bce": parts["bce"].item(),
                    "ual": None if parts["ual"] is None else parts["ual"].item(),
                    "lambda": parts["lambda"], "lr": lr,
                }
                records.append(rec)
                log.debug("step %(step)d loss %(loss).4f lr %(lr).5f lambda %(lambda).3f", rec)
                if out_dir is not None:
                    log_fh.write(json.dumps(rec) + "\n")
                if on_step is not None:
                    on_step(rec)
                step += 1
            epoch += 1
            if out_dir is not None:
                snapshot(step).save(out_dir / f"epoch_{epoch:03d}.ckpt")
    finally:
        if out_dir is not None:
            log_fh.close()

    ckpt = snapshot(step)
    if out_dir is not None:
        ckpt.save(out_dir / "last.ckpt")
    return TrainResult(ckpt, records)


def model_from_checkpoint(ckpt) -> MGNet:
    if not isinstance(ckpt, Checkpoint):
        ckpt = Checkpoint.load(ckpt)
    cfg = TrainConfig.from_dict(ckpt.config)
    model = build_model(cfg, load_weights=False)
    model.load_state_dict(ckpt.params, strict=True)
    model.eval()
    return model


@torch.no_grad()
def predict(model: MGNet, image: np.ndarray, out_size=None):
    """Probability map (H x W float32) for one H x W x 3 image, plus trace probabilities."""
    model.eval()
    x = normalize(image).unsqueeze(0)
    pred = model(x)
    size = out_size or image.shape[:2]
    prob = torch.sigmoid(F.interpolate(pred.final_logits, size=size, mode="bilinear", align_corners=False))
    trace = [
        torch.sigmoid(F.interpolate(m, size=size, mode="bilinear", align_corners=False))[0, 0].numpy()
        for m in pred.trace
    ]
    return prob[0, 0].numpy(), trace


def evaluate(ckpt, dataset, threshold: float = 0.5) -> MetricReport:
    model = model_from_checkpoint(ckpt)
    rows = []
    for s in dataset:
        prob, _ = predict(model, s.image)
        rows.append(image_metrics(s.id, prob, s.mask, threshold))
    return MetricReport.from_images(rows)


def to_png8(prob: np.ndarray) -> np.ndarray:
    return np.clip(np.round(prob * 255.0), 0, 255).astype(np.uint8)


def infer(ckpt, image_paths, out_dir, dump_trace: bool = False, threshold: float = 0.5) -> list[Path]:
    """Write ``<stem>_prob.png`` and ``<stem>_mask.png`` (and trace panels) per image."""
    model = model_from_checkpoint(ckpt)
    size = TrainConfig.from_dict(
        ckpt.config if isinstance(ckpt, Checkpoint) else Checkpoint.load(ckpt).config
    ).input_size
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path in sorted(Path(p) for p in image_paths):
        original = read_image(path)
        image = read_image(path, size)
        prob, trace = predict(model, image, out_size=original.shape[:2])
        stem = path.stem
        targets = [
            (out_dir / f"{stem}_prob.png", to_png8(prob)),
            (out_dir / f"{stem}_mask.png", ((prob >= threshold) * 255).astype(np.uint8)),
        ]
        if dump_trace:
            targets += [(out_dir / f"{stem}_trace{t}.png", to_png8(p)) for t, p in enumerate(trace)]
        for target, arr in targets:
            Image.fromarray(arr).save(target)
            written.append(target)
    return written

"""Per-image IoU, MAE and balanced error rate, averaged over a dataset."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _as_array(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def confusion(pred, gt, threshold: float = 0.5) -> ConfusionCounts:
    pred, gt = _as_array(pred), _as_array(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred >= threshold
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, tn, fn)


def iou(c: ConfusionCounts) -> float:
    union = c.tp + c.fp + c.fn
    if union == 0:
        return 1.0
    return c.tp / union


def mae(pred, gt) -> float:
    pred, gt = _as_array(pred), _as_array(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return float(np.mean(np.abs(pred.astype(np.float64) - gt.astype(np.float64))))


def ber(c: ConfusionCounts) -> float:
    rates = []
    n_pos = c.tp + c.fn
    n_neg = c.tn + c.fp
    if n_pos:
        rates.append(c.tp / n_pos)
    if n_neg:
        rates.append(c.tn / n_neg)
    if not rates:
        return 0.0
    return 100.0 * (1.0 - sum(rates) / len(rates))


@dataclass
class ImageMetrics:
    id: str
    iou: float
    mae: float
    ber: float


@dataclass
class MetricReport:
    per_image: list[ImageMetrics] = field(default_factory=list)
    miou: float = 0.0
    mae: float = 0.0
    mber: float = 0.0
    n_images: int = 0

    @classmethod
    def from_images(cls, rows) -> "MetricReport":
        rows = sorted(rows, key=lambda r: r.id)
        n = len(rows)
        if n == 0:
            return cls()
        return cls(
            per_image=rows,
            miou=100.0 * float(np.mean([r.iou for r in rows])),
            mae=float(np.mean([r.mae for r in rows])),
            mber=float(np.mean([r.ber for r in rows])),
            n_images=n,
        )

    def merge(self, other: "MetricReport") -> "MetricReport":
        ids = {r.id for r in self.per_image} & {r.id for r in other.per_image}
        if ids:
            raise ValueError(f"reports overlap on ids {sorted(ids)[:3]}")
        return MetricReport.from_images(self.per_image + other.per_image)

    def to_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "miou": self.miou,
            "mae": self.mae,
            "mber": self.mber,
            "per_image": [vars(r) for r in self.per_image],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            per_image=[ImageMetrics(**r) for r in d["per_image"]],
            miou=d["miou"], mae=d["mae"], mber=d["mber"], n_images=d["n_images"],
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "iou", "mae", "ber"])
            for r in self.per_image:
                writer.writerow([r.id, r.iou, r.mae, r.ber])


def image_metrics(id_: str, pred, gt, threshold: float = 0.5) -> ImageMetrics:
    c = confusion(pred, gt, threshold)
    return ImageMetrics(id=id_, iou=iou(c), mae=mae(pred, gt), ber=ber(c))


def evaluate_dataset(pairs, threshold: float = 0.5) -> MetricReport:
    """``pairs`` yields ``(id, probability_map, binary_gt)``."""
    return MetricReport.from_images(image_metrics(i, p, g, threshold) for i, p, g in pairs)

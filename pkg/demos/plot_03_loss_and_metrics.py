"""
Loss terms and evaluation metrics
=================================

Evaluate the training loss on a few hand-made predictions and score them
with the dataset metrics.
"""

import numpy as np
import torch

from mgnet.loss import LossConfig, bce, lambda_at, total_loss, ual
from mgnet.metrics import evaluate_dataset

# The ambiguity term is largest at p = 0.5 and vanishes at 0 and 1.
for v in (0.0, 0.25, 0.5, 0.75, 1.0):
    print(f"ual({v}) = {ual(torch.tensor([v])).item():.3f}")

# Its weight ramps from 0 to 1 along a half cosine over training.
total = 100
print("lambda:", [round(lambda_at(s, total), 3) for s in (0, 25, 50, 75, 100)])

gt = torch.zeros(8, 8)
gt[2:6, 2:6] = 1
unsure = torch.full((8, 8), 0.5)
cfg = LossConfig(total_steps=total)
for step in (0, 50, 100):
    loss, parts = total_loss(unsure, gt, step, cfg, return_parts=True)
    print(f"step {step}: total {loss.item():.3f} (bce {parts['bce'].item():.3f})")
print("bce of a confident correct map:", bce(gt.clamp(0.01, 0.99), gt).item())

# Metrics are computed per image and then averaged over the dataset.
g = gt.numpy().astype(np.uint8)
shifted = np.roll(g, 1, axis=1).astype(float)
report = evaluate_dataset([("exact", g.astype(float), g), ("shifted", shifted, g)])
for row in report.per_image:
    print(row)
print(f"mIoU {report.miou:.2f}  MAE {report.mae:.4f}  mBER {report.mber:.2f}")

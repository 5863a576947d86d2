"""
Synthetic glass scenes
======================

Generate a small dataset of procedurally drawn glass panes, read it back
through the regular loader and look at the mask statistics.
"""

import tempfile

import numpy as np

from mgnet.data import augment, load_dataset, synth_generate

# Each scene is a textured background with a convex pane drawn on top.
# Inside the pane the background is shifted, tinted and given a highlight.
root = tempfile.mkdtemp()
layout = synth_generate(6, 96, seed=0, out=root)
print("images in", layout.images_path)

# The loader pairs images with masks by file stem and binarizes masks at 128.
samples = list(load_dataset(layout, input_size=96))
for s in samples:
    print(f"{s.id}: image {s.image.shape} {s.image.dtype}, glass fraction {s.mask.mean():.2f}")

# Augmentation flips and rotates image and mask together.
rng = np.random.default_rng(0)
a = augment(samples[0], rng)
print("mask pixels before/after augment:", samples[0].mask.sum(), a.mask.sum())

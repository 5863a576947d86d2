"""
A short training run
====================

Train the tiny profile on a handful of synthetic scenes, then evaluate the
checkpoint and write prediction maps. Takes a few minutes on one CPU core.
"""

import tempfile
from pathlib import Path

from mgnet.data import load_dataset, synth_generate
from mgnet.pipeline import TrainConfig, evaluate, infer, train

root = Path(tempfile.mkdtemp())
train_layout = synth_generate(8, 96, seed=0, out=root)
test_layout = synth_generate(4, 96, seed=1, out=root, split="test")
train_set = list(load_dataset(train_layout, 96))
test_set = list(load_dataset(test_layout, 96))

# One batch holds the whole training set, so each step sees every image.
cfg = TrainConfig(profile="tiny", input_size=96, batch_size=8, epochs=60, augment=False, seed=0)
result = train(cfg, train_set, out_dir=root / "run",
               on_step=lambda r: r["step"] % 10 == 0 and print(
                   f"step {r['step']:3d}  loss {r['loss']:.3f}  lr {r['lr']:.4f}  lambda {r['lambda']:.2f}"))

# Training and held-out scores.
print("train", evaluate(result.checkpoint, train_set).to_dict() | {"per_image": "..."})
print("test ", evaluate(result.checkpoint, test_set).to_dict() | {"per_image": "..."})

# Probability maps, binary masks and the refinement trace go to PNG files.
written = infer(result.checkpoint, sorted(test_layout.images_path.glob("*.png")), root / "preds",
                dump_trace=True)
print(len(written), "files written to", root / "preds")

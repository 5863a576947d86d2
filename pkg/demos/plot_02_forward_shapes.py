"""
Tracing tensor shapes through the network
=========================================

Push one image through the tiny profile and print what each stage returns.
"""

import torch

from mgnet.encoder import extract_features
from mgnet.model import MGNet

torch.manual_seed(0)
model = MGNet("tiny").eval()
image = torch.randn(1, 3, 96, 96)

# The encoder gives five levels at strides 2 to 32.
with torch.no_grad():
    levels = extract_features(model.encoder, image).levels
for i, t in enumerate(levels):
    print(f"level {i}: {tuple(t.shape)}")

# The fusion module runs the encoder on 0.7x, 1.0x and 1.2x copies of the
# image and merges them per level, keeping the 1.0x sizes.
with torch.no_grad():
    fused = model.fused_features(image)
    x, coarse = model.decoder(fused)
print("decoder feature:", tuple(x.shape), "coarse logits:", tuple(coarse.shape))

# Refinement reuses the decoder feature and returns every intermediate map.
with torch.no_grad():
    pred = model(image)
print("final logits:", tuple(pred.final_logits.shape), "trace length:", len(pred.trace))

# The same code builds the full ResNeXt model; on the meta device no memory
# is allocated, so only the shapes are computed.
with torch.device("meta"):
    full = MGNet("full").eval()
    out = full(torch.empty(1, 3, 384, 384))
print("full profile final logits:", tuple(out.final_logits.shape))

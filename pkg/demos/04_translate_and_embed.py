"""
Translations and the shared latent space
========================================

Uses the checkpoint written by 03_short_training_run.py. Every test image
is translated into the other two styles, and the content tensors of all
three domains are projected to 2-D. Domains the encoder has aligned sit on
top of each other; an unaligned domain forms its own cluster.
"""
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from codagan.conditioning import encode_onehot
from codagan.config import load_config
from codagan.data import denormalize, make_split, open_dataset
from codagan.evaluation import embed_project, separation
from codagan.training import load_checkpoint, networks_from_checkpoint

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"

config = load_config(DESK)
registry = config.registry()
state = load_checkpoint("demo_checkpoint.bin")
G, _, _ = networks_from_checkpoint(state)
n = len(registry)

# rows: source image, then its rendering in each domain's style
source = open_dataset(registry.by_name("source"))
test = make_split(source, config.train.seed).test_indices[:6]
x = torch.from_numpy(np.stack([source.image(i) for i in test])[:, None])
rows = [x]
with torch.no_grad():
    for k in range(n):
        rows.append(G.translate(x, encode_onehot(0, n), encode_onehot(k, n)))
grid = np.vstack([np.hstack([denormalize(t[0].numpy()) for t in row]) for row in rows])
Image.fromarray(grid).save("translations.png")
print("wrote translations.png (top row: input; then source, shifted, artifact styles)")

proj = embed_project(state, registry, samples_per_dataset=40, seed=0)
print(f"content tensors flattened to {proj.flat_dim} values each")
for desc in registry:
    d = separation(proj, desc.id)
    print(f"{desc.name:>8}: " + ", ".join(f"{registry[k].name} {v:.2f}" for k, v in d.items()) + " pooled SD")

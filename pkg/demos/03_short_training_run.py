"""
A short adaptation run
======================

Train the conditional translator, discriminator and latent segmenter on the
desk benchmark for a handful of epochs, then compare against a U-Net that
only ever sees the labeled source.

The full 40-epoch desk run takes about ten minutes on one CPU core; this
demo stops at 8 epochs so it finishes in a couple of minutes. Pass a larger
number as the first argument to train longer.
"""
import sys
from pathlib import Path

import torch

from codagan.config import load_config
from codagan.evaluation import evaluate_baseline, evaluate_dataset
from codagan.training import TrainConfig, Trainer, train_baseline

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 8
config = load_config(DESK)
registry = config.registry()
train_cfg = TrainConfig.from_dict({**config.train.to_dict(), "epochs": epochs})

trainer = Trainer(train_cfg, registry)
print(f"{trainer.iterations_per_epoch} iterations per epoch, "
      f"full training until epoch {train_cfg.switch_epoch}, then supervision tuning")
for epoch in range(1, epochs + 1):
    trainer.train_epoch()
    print(f"epoch {epoch} done")

state = trainer.state_dict()
model = (trainer.G, trainer.M, state)
baseline = train_baseline(train_cfg, registry, [registry.by_name("source").id],
                          base_filters=train_cfg.base_filters)

print(f"\n{'dataset':>8}  codagan  source-only U-Net")
for desc, ds, split in zip(registry, trainer.datasets, trainer.splits):
    ours = evaluate_dataset(model, ds, split).mean
    theirs = evaluate_baseline(baseline, ds, split, train_cfg.task).mean
    print(f"{desc.name:>8}  {ours:7.3f}  {theirs:7.3f}")

torch.save(state, "demo_checkpoint.bin")
print("\nsaved demo_checkpoint.bin (usable with 04_translate_and_embed.py)")

"""Train the toy model for a few hundred steps and compare it to bicubic.

Uses synthetic textures in which every region repeats elsewhere at twice the
size, the situation cross-scale attention is built for. A short run already
approaches the bicubic baseline; the 2000-step acceptance config passes it.

    python demos/quick_train.py [steps]
"""

import sys

from csnln.data import load_dataset
from csnln.training import TrainConfig, bicubic_validation_psnr, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = TrainConfig(batch=8, crop=32, lr=2e-3, halve_every=20, epochs=max(1, steps // 100), steps_per_epoch=100,
                  train_count=64, val_count=8, seed=0)
val = load_dataset("synthetic", count=cfg.val_count, size=cfg.image_size, seed=cfg.seed + 1_000_003)
print(f"bicubic baseline: {bicubic_validation_psnr(val, cfg.scale):.2f} dB")

result = train(cfg, write=False)
for row in result.history:
    print(f"epoch {row['epoch']:>3}  loss {row['loss']:.4f}  val {row['val_psnr']:.2f} dB")
print(f"final validation PSNR {result.history[-1]['val_psnr']:.2f} dB")

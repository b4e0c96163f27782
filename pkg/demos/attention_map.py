"""Where does a patch look for its larger twin?

Builds a 48x48 image holding a small random motif and a 2x enlarged copy of
it, asks the cross-scale attention for one query pixel inside the small motif,
and writes the correlation heatmap. The hottest cell lands on the enlarged
copy, which after 2x downscaling looks exactly like the query's neighbourhood.

    python demos/attention_map.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from csnln.cli import main
from csnln.imageio import save_png

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out_dir.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(11)
k = 6
motif = (128 + rng.choice([-60, 60], size=(k, k, 3))).astype(np.uint8)
img = np.full((48, 48, 3), 128, dtype=np.uint8)
img[5:5 + k, 7:7 + k] = motif
img[28:28 + 2 * k, 20:20 + 2 * k] = motif.repeat(2, 0).repeat(2, 1)
save_png(out_dir / "constructed.png", img)

# query the centre of the small motif; no checkpoint means raw-pixel embeddings
main(["attnmap", "--input", str(out_dir / "constructed.png"), "--query", "8,10",
      "--out", str(out_dir / "attention.png")])
print("the enlarged copy covers rows 28-39, cols 20-31 of the input")

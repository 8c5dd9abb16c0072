"""Context maps: what the modulation's context branch responds to.

Builds a synthetic bar image, taps the context branch of one block, and
writes the channel-mean map as a PGM next to this script.

Run: python3 demos/06_context_maps.py
"""

import pathlib

import numpy as np

from effmod import model as M
from effmod import trainer as T
from effmod.ctxmap import context_map
from effmod.pnm import write_pgm

ds = T.gen_dataset(3, n=4, noise=0.0)
img32 = ds.images[0]  # [3, 32, 32], class = a bar at one of 4 angles
big = np.repeat(np.repeat(img32, 2, axis=1), 2, axis=2)  # 64x64 keeps stages roomy

model = M.build_model(M.build_preset("micro"), seed=0)
out_dir = pathlib.Path(__file__).resolve().parent

print(f"input: class {ds.labels[0]} bar, upsampled to {big.shape[1]}x{big.shape[2]}")
for stage, block in [(0, 0), (1, 0), (2, 0)]:
    cm = context_map(model, big, stage, block)
    path = out_dir / f"ctxmap_stage{stage}.pgm"
    write_pgm(str(path), cm.grid)
    print(
        f"  stage {stage} block {block}: context {cm.grid.shape[0]}x{cm.grid.shape[1]}, "
        f"raw range [{cm.raw_min:+.4f}, {cm.raw_max:+.4f}] -> {path.name}"
    )

print()
print("maps are min-max normalized to 8-bit; view any PGM reader, or:")
print("  effmod ctxmap micro <image.ppm> --stage 2 --block 0 --out ctx.pgm")

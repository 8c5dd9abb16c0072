"""Desk-scale training: the micro preset on synthetic oriented bars.

AdamW, cosine decay, float64, bit-deterministic per seed. A least-squares
pixel baseline is printed first so the model's margin over it is visible.

Run: python3 demos/05_desk_training.py [epochs]
"""

import sys

from effmod import trainer as T

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 6

ds = T.gen_dataset(0, n=256)
print(f"dataset: {ds.n} images, {ds.classes} classes, 32x32")
print(f"linear least-squares baseline eval acc: {T.linear_baseline(ds):.3f}")
print()
print(f"== training micro for {epochs} epochs ==")
model, hist = T.train_micro(seed=0, epochs=epochs, n=256, log=print)
print()
print(f"best eval acc {hist.best_eval_acc:.3f}, final {hist.final_eval_acc:.3f}")
print()
print("== same seed, rerun: histories are bit-identical ==")
_, again = T.train_micro(seed=0, epochs=epochs, n=256)
print(f"csv bytes equal: {hist.to_csv() == again.to_csv()}")
print()
print("== mul vs sum fusion ablation (2 epochs, shared init) ==")
pair = T.ablate_fusion(seed=0, epochs=2, n=128)
print(T.paired_csv(pair))

"""Desk-scale training on a synthetic shape task.

The dataset is 4-way oriented-bar classification at 32x32: each image is a
full-length bar through a jittered center point at angle k*45deg, plus white
noise. It is deliberately easy (a least-squares pixel classifier clears 70%
on the noiseless variant) so the micro model can certify the training loop,
not fight the task.

Recipe: AdamW (0.9, 0.999) with decoupled weight decay, cosine learning-rate
decay to zero over all steps, fixed batch order per seed, float64 parameters.
Bit-for-bit reproducible per seed within a process. A non-finite loss aborts
with step/lr diagnostics rather than training through NaNs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as M
from .autodiff import Var, no_grad
from .errors import ConfigError, NumericalError

IMG_SIZE = 32


@dataclass
class SyntheticDataset:
    seed: int
    images: np.ndarray  # [n, 3, 32, 32] float32
    labels: np.ndarray  # [n] int64

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def classes(self) -> int:
        return int(self.labels.max()) + 1


def gen_dataset(
    seed: int,
    n: int = 512,
    classes: int = 4,
    noise: float = 0.05,
    jitter: float = 2.0,
    thickness: float = 2.5,
) -> SyntheticDataset:
    """Balanced oriented-bar images; class k is a bar at angle k*180/classes deg."""
    if n < classes or n % classes != 0:
        raise ConfigError(f"n={n} must be a positive multiple of classes={classes}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:IMG_SIZE, 0:IMG_SIZE].astype(np.float64)
    cx = cy = (IMG_SIZE - 1) / 2.0
    labels = np.repeat(np.arange(classes), n // classes)
    labels = labels[rng.permutation(n)]
    images = np.empty((n, 3, IMG_SIZE, IMG_SIZE), dtype=np.float32)
    for i, k in enumerate(labels):
        theta = np.pi * k / classes
        offset = rng.uniform(-jitter, jitter)
        # signed distance to the line through (cx,cy)+offset*normal at angle theta
        dist = np.abs(-np.sin(theta) * (xx - cx) + np.cos(theta) * (yy - cy) - offset)
        bar = np.clip(thickness - dist, 0.0, 1.0)
        img = np.broadcast_to(bar, (3, IMG_SIZE, IMG_SIZE)).copy()
        if noise > 0:
            img += noise * rng.standard_normal((3, IMG_SIZE, IMG_SIZE))
        images[i] = img.astype(np.float32)
    return SyntheticDataset(seed=seed, images=images, labels=labels.astype(np.int64))


def split_dataset(ds: SyntheticDataset, eval_frac: float = 0.2, seed: int = 0):
    """Deterministic train/eval split of one dataset."""
    if not 0.0 < eval_frac < 1.0:
        raise ConfigError(f"eval_frac must be in (0, 1), got {eval_frac}")
    idx = np.random.default_rng((seed, ds.seed)).permutation(ds.n)
    n_eval = max(1, int(round(ds.n * eval_frac)))
    ev, tr = idx[:n_eval], idx[n_eval:]
    return (ds.images[tr], ds.labels[tr]), (ds.images[ev], ds.labels[ev])


# ---------------------------------------------------------------- history


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    eval_acc: float


@dataclass
class TrainHistory:
    hyperparams: dict
    epochs: list = field(default_factory=list)

    @property
    def final_eval_acc(self) -> float:
        return self.epochs[-1].eval_acc if self.epochs else 0.0

    @property
    def best_eval_acc(self) -> float:
        return max((e.eval_acc for e in self.epochs), default=0.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.hyperparams):
            buf.write(f"# {k}: {self.hyperparams[k]}\n")
        buf.write("epoch,train_loss,train_acc,eval_acc\n")
        for e in self.epochs:
            buf.write(f"{e.epoch},{e.train_loss:.6f},{e.train_acc:.6f},{e.eval_acc:.6f}\n")
        return buf.getvalue()


# ----------------------------------------------------------------- AdamW


class AdamW:
    """Decoupled-weight-decay Adam over the model's named parameters."""

    def __init__(self, params, lr=3e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05):
        self.params = list(params)  # [(name, Var)]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros_like(v.data) for _, v in self.params]
        self.v = [np.zeros_like(v.data) for _, v in self.params]

    def step(self, lr_t: float):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            p.data = p.data - lr_t * (mhat / (np.sqrt(vhat) + self.eps) + self.wd * p.data)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return base_lr
    frac = min(step / total_steps, 1.0)
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * frac))


# ----------------------------------------------------------------- train


def _accuracy(model, images, labels, batch_size=64) -> float:
    correct = 0
    for i in range(0, len(labels), batch_size):
        xb = images[i : i + batch_size].astype(np.float64)
        with no_grad():
            logits = M.model_forward(model, xb).data
        correct += int((logits.argmax(axis=1) == labels[i : i + batch_size]).sum())
    return correct / len(labels)


def train(
    model: M.Model,
    dataset: SyntheticDataset,
    epochs: int = 30,
    lr: float = 3e-3,
    weight_decay: float = 0.05,
    seed: int = 0,
    batch_size: int = 32,
    eval_frac: float = 0.2,
    log=None,
) -> TrainHistory:
    """Train in place; returns the per-epoch history.

    The dataset is split train/eval deterministically from (seed, dataset
    seed). Raises NumericalError with step and lr context if the loss goes
    non-finite.
    """
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    (tr_x, tr_y), (ev_x, ev_y) = split_dataset(dataset, eval_frac=eval_frac, seed=seed)
    opt = AdamW(model.named_parameters(), lr=lr, weight_decay=weight_decay)
    n_train = len(tr_y)
    steps_per_epoch = (n_train + batch_size - 1) // batch_size
    total_steps = epochs * steps_per_epoch
    order_rng = np.random.default_rng((seed, 1))
    history = TrainHistory(
        hyperparams={
            "epochs": epochs, "lr": lr, "weight_decay": weight_decay, "seed": seed,
            "batch_size": batch_size, "n_train": n_train, "n_eval": len(ev_y),
            "optimizer": "adamw(0.9,0.999)", "schedule": "cosine",
            "combine": model.combine,
        },
    )
    step = 0
    for epoch in range(epochs):
        order = order_rng.permutation(n_train)
        loss_sum = 0.0
        correct = 0
        for bi in range(steps_per_epoch):
            sel = order[bi * batch_size : (bi + 1) * batch_size]
            xb = tr_x[sel].astype(np.float64)
            yb = tr_y[sel]
            logits = M.model_forward(model, xb, training=True, seed=seed, step=step)
            loss = ad.cross_entropy(logits, yb)
            loss_val = float(loss.data)
            lr_t = cosine_lr(lr, step, total_steps)
            if not np.isfinite(loss_val):
                raise NumericalError(
                    f"loss became non-finite at step {step} (epoch {epoch}, lr {lr_t:.3e})"
                )
            opt.zero_grad()
            ad.backward(loss)
            opt.step(lr_t)
            loss_sum += loss_val * len(sel)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
            step += 1
        stats = EpochStats(
            epoch=epoch,
            train_loss=loss_sum / n_train,
            train_acc=correct / n_train,
            eval_acc=_accuracy(model, ev_x, ev_y),
        )
        history.epochs.append(stats)
        if log is not None:
            log(
                f"epoch {epoch:3d}  loss {stats.train_loss:.4f}  "
                f"train acc {stats.train_acc:.3f}  eval acc {stats.eval_acc:.3f}"
            )
    return history


def train_micro(
    seed: int = 0,
    epochs: int = 30,
    lr: float = 3e-3,
    weight_decay: float = 0.05,
    n: int = 512,
    noise: float = 0.05,
    combine: str = "mul",
    log=None,
):
    """Build the micro preset and train it on a fresh bars dataset; returns (model, history)."""
    spec = M.build_preset("micro")
    model = M.build_model(spec, seed=seed, dtype=np.float64, combine=combine)
    ds = gen_dataset(seed, n=n, classes=spec.head, noise=noise)
    history = train(
        model, ds, epochs=epochs, lr=lr, weight_decay=weight_decay, seed=seed, log=log
    )
    return model, history


def ablate_fusion(
    seed: int = 0,
    epochs: int = 30,
    lr: float = 3e-3,
    weight_decay: float = 0.05,
    n: int = 512,
    noise: float = 0.05,
    log=None,
) -> dict:
    """Train the same micro init with multiplicative vs additive fusion.

    Both runs share the seed, so they start from bit-identical parameters and
    see identical batches; the only difference is the fuse op. Returns
    {"mul": TrainHistory, "sum": TrainHistory}.
    """
    out = {}
    for combine in ("mul", "sum"):
        if log is not None:
            log(f"--- fusion variant: {combine} ---")
        _, hist = train_micro(
            seed=seed, epochs=epochs, lr=lr, weight_decay=weight_decay,
            n=n, noise=noise, combine=combine, log=log,
        )
        out[combine] = hist
    return out


def paired_csv(histories: dict) -> str:
    """Side-by-side CSV of the mul/sum ablation histories."""
    mul, add = histories["mul"], histories["sum"]
    if len(mul.epochs) != len(add.epochs):
        raise ConfigError("paired histories must have the same epoch count")
    buf = io.StringIO()
    buf.write("epoch,mul_loss,mul_train_acc,mul_eval_acc,sum_loss,sum_train_acc,sum_eval_acc\n")
    for a, b in zip(mul.epochs, add.epochs):
        buf.write(
            f"{a.epoch},{a.train_loss:.6f},{a.train_acc:.6f},{a.eval_acc:.6f},"
            f"{b.train_loss:.6f},{b.train_acc:.6f},{b.eval_acc:.6f}\n"
        )
    return buf.getvalue()


def linear_baseline(ds: SyntheticDataset, eval_frac: float = 0.2, seed: int = 0) -> float:
    """Least-squares pixel classifier accuracy; certifies the task is learnable."""
    (tr_x, tr_y), (ev_x, ev_y) = split_dataset(ds, eval_frac=eval_frac, seed=seed)
    X = tr_x.reshape(len(tr_y), -1).astype(np.float64)
    X = np.hstack([X, np.ones((len(X), 1))])
    Y = np.eye(ds.classes)[tr_y]
    W, *_ = np.linalg.lstsq(X, Y, rcond=None)
    Xe = ev_x.reshape(len(ev_y), -1).astype(np.float64)
    Xe = np.hstack([Xe, np.ones((len(Xe), 1))])
    pred = (Xe @ W).argmax(axis=1)
    return float((pred == ev_y).mean())

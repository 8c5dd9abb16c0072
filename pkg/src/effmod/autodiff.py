"""Reverse-mode autodiff over the NCHW kernels.

A Var wraps an ndarray and remembers how it was produced; backward() walks the
tape in reverse topological order and accumulates cotangents, so fan-out adds
gradients as it must. The op set is exactly what the blocks need, nothing more.

Gradient certification is two-sided: every analytic rule here is checked
against central finite differences (grad_check), and the test suite runs that
check over every block kind in float64.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import PreconditionError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the context (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Var:
    """Tape node: value, accumulated gradient, and the vjp closure that fills parents."""

    __slots__ = ("data", "grad", "op", "parents", "_vjp")

    def __init__(self, data, op: str = "leaf", parents=(), vjp=None):
        self.data = np.asarray(data)
        self.grad = None
        self.op = op
        self.parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _node(data, op, parents, vjp):
    if not _grad_enabled:
        return Var(data)
    return Var(data, op=op, parents=parents, vjp=vjp)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted cotangent back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(out: Var, seed: np.ndarray | None = None) -> None:
    """Accumulate d(out)/d(leaf) into .grad over the whole tape.

    seed defaults to ones (the usual choice for a scalar loss). Grads add onto
    whatever is already in .grad, so zero them between steps.
    """
    if seed is None:
        seed = np.ones_like(out.data)
    else:
        seed = np.asarray(seed)
        if seed.shape != out.data.shape:
            raise PreconditionError(
                f"seed gradient shape {seed.shape} != output shape {out.data.shape}"
            )

    # Iterative topo sort; tapes for deep models overflow the recursion limit.
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(out): seed}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if pg is None:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


def zero_grads(vars_: "list[Var] | dict") -> None:
    it = vars_.values() if isinstance(vars_, dict) else vars_
    for v in it:
        v.grad = None


# ---------------------------------------------------------------- basic ops


def add(a: Var, b: Var) -> Var:
    out = a.data + b.data
    return _node(
        out,
        "add",
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a: Var, b: Var) -> Var:
    out = a.data - b.data
    return _node(
        out,
        "sub",
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a: Var, b: Var) -> Var:
    out = a.data * b.data
    return _node(
        out,
        "mul",
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def scale(a: Var, s: float) -> Var:
    """Multiply by a python float constant (no gradient for s)."""
    return _node(a.data * s, "scale", (a,), lambda g: (g * s,))


def reshape(a: Var, shape: tuple) -> Var:
    orig = a.data.shape
    return _node(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(orig),))


def transpose(a: Var, axes: tuple) -> Var:
    inv = tuple(np.argsort(axes))
    return _node(
        np.ascontiguousarray(a.data.transpose(axes)),
        "transpose",
        (a,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )


def narrow(a: Var, axis: int, start: int, length: int) -> Var:
    """Contiguous slice along one axis; vjp zero-pads the complement."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _node(np.ascontiguousarray(a.data[idx]), "narrow", (a,), vjp)


def sum_all(a: Var) -> Var:
    shape = a.data.shape
    return _node(
        np.asarray(a.data.sum()), "sum_all", (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def mean_all(a: Var) -> Var:
    n = a.data.size
    shape = a.data.shape
    return _node(
        np.asarray(a.data.mean()),
        "mean_all",
        (a,),
        lambda g: (np.broadcast_to(g / n, shape).copy(),),
    )


# ----------------------------------------------------------- neural-net ops


def conv2d(x: Var, w: Var, b: Var | None, spec: K.ConvSpec) -> Var:
    out = K.conv2d(x.data, w.data, None if b is None else b.data, spec)
    if b is None:
        def vjp(g):
            dx, dw, _ = K.conv2d_vjp(x.data, w.data, spec, g, need_bias=False)
            return (dx, dw)

        return _node(out, "conv2d", (x, w), vjp)

    def vjp_b(g):
        dx, dw, db = K.conv2d_vjp(x.data, w.data, spec, g, need_bias=True)
        return (dx, dw, db)

    return _node(out, "conv2d", (x, w, b), vjp_b)


def pointwise(x: Var, w: Var, b: Var | None = None) -> Var:
    out = K.pointwise(x.data, w.data, None if b is None else b.data)
    if b is None:
        def vjp(g):
            dx, dw, _ = K.pointwise_vjp(x.data, w.data, g)
            return (dx, dw)

        return _node(out, "pointwise", (x, w), vjp)

    def vjp_b(g):
        return K.pointwise_vjp(x.data, w.data, g)

    return _node(out, "pointwise", (x, w, b), vjp_b)


def linear(x: Var, w: Var, b: Var | None = None) -> Var:
    """Last-axis linear map for token/vector layouts; w is [out, in]."""
    if x.data.shape[-1] != w.data.shape[1]:
        raise PreconditionError(
            f"linear: input feature dim {x.data.shape[-1]} != weight in-dim {w.data.shape[1]}"
        )
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def vjp(g):
        dx = g @ w.data
        dw = np.tensordot(g, x.data, axes=(range(g.ndim - 1), range(g.ndim - 1)))
        if b is None:
            return (dx, dw)
        db = g.sum(axis=tuple(range(g.ndim - 1)))
        return (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, "linear", parents, vjp)


def gelu(x: Var) -> Var:
    out = K.gelu(x.data)
    return _node(out, "gelu", (x,), lambda g: (g * K.gelu_grad(x.data),))


def sigmoid(x: Var) -> Var:
    s = K.sigmoid(x.data)
    return _node(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


def layer_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-6, axis: int = 1) -> Var:
    out = K.layer_norm(x.data, gamma.data, beta.data, eps=eps, axis=axis)
    axis = axis % x.data.ndim  # the reductions below exclude by index
    c = x.data.shape[axis]
    shape = [1] * x.data.ndim
    shape[axis] = c
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        red = tuple(i for i in range(x.data.ndim) if i != axis)
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        gx = g * gamma.data.reshape(shape)
        # standard layernorm backward in terms of xhat
        m = gx.mean(axis=axis, keepdims=True)
        mx = (gx * xhat).mean(axis=axis, keepdims=True)
        dx = inv * (gx - m - xhat * mx)
        return (dx, dgamma, dbeta)

    return _node(out, "layer_norm", (x, gamma, beta), vjp)


def softmax(x: Var, axis: int = -1) -> Var:
    s = K.softmax(x.data, axis=axis)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _node(s, "softmax", (x,), vjp)


def matmul(a: Var, b: Var) -> Var:
    out = K.batched_matmul(a.data, b.data)

    def vjp(g):
        da = np.matmul(g, np.swapaxes(b.data, -1, -2))
        db = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (da, db)

    return _node(out, "matmul", (a, b), vjp)


def fuse_modulate(ctx: Var, v: Var, mode: str = "repeat", combine: str = "mul") -> Var:
    out = K.fuse_modulate(ctx.data, v.data, mode=mode, combine=combine)

    def vjp(g):
        return K.fuse_modulate_vjp(ctx.data, v.data, mode, combine, g)

    return _node(out, "fuse_modulate", (ctx, v), vjp)


def global_avg_pool(x: Var) -> Var:
    out = K.global_avg_pool(x.data)
    n, c, h, w = x.data.shape

    def vjp(g):
        return (np.broadcast_to(g / (h * w), x.data.shape).copy(),)

    return _node(out, "global_avg_pool", (x,), vjp)


def cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    """Mean softmax cross-entropy from raw logits [n, k] and int labels [n]."""
    z = logits.data
    if z.ndim != 2:
        raise PreconditionError(f"logits: expected [n, classes], got {z.shape}")
    n = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = np.asarray((lse - z[np.arange(n), labels]).mean())

    def vjp(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _node(loss, "cross_entropy", (logits,), vjp)


# ------------------------------------------------------ finite differences


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise; O(2*size) evals."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


@dataclass
class GradCheckRow:
    name: str
    max_rel_err: float
    size: int
    ok: bool


@dataclass
class GradCheckReport:
    """Per-leaf comparison of tape gradients against central differences."""

    rows: list[GradCheckRow] = field(default_factory=list)
    tol: float = 1e-5
    eps: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.rows), default=0.0)

    @property
    def worst(self) -> str:
        if not self.rows:
            return ""
        return max(self.rows, key=lambda r: r.max_rel_err).name

    def to_text(self) -> str:
        width = max([len(r.name) for r in self.rows] + [9])
        lines = [f"{'parameter':<{width}}  {'elems':>6}  {'max rel err':>12}  status"]
        for r in self.rows:
            status = "ok" if r.ok else "FAIL"
            lines.append(f"{r.name:<{width}}  {r.size:>6}  {r.max_rel_err:>12.3e}  {status}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.0e})")
        return "\n".join(lines)


def _rel_err(a: np.ndarray, n: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())


def grad_check(f, arrays: dict, tol: float = 1e-5, eps: float = 1e-5) -> GradCheckReport:
    """Certify tape gradients of f against central differences, leaf by leaf.

    f maps a dict of Vars to a Var (summed internally if non-scalar). arrays
    holds the float64 leaf values; every leaf is perturbed.
    """
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    leaves = {k: Var(v.copy()) for k, v in arrays.items()}
    out = f(leaves)
    y = out if out.data.ndim == 0 else sum_all(out)
    backward(y)

    report = GradCheckReport(tol=tol, eps=eps)
    for name in arrays:
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[name])

        def scalar_eval(arr, _name=name):
            vs = {k: Var(v) for k, v in arrays.items()}
            vs[_name] = Var(arr)
            with no_grad():
                o = f(vs)
            return float(o.data.sum())

        numeric = finite_diff_grad(scalar_eval, arrays[name], eps=eps)
        err = _rel_err(analytic, numeric)
        report.rows.append(
            GradCheckRow(name=name, max_rel_err=err, size=arrays[name].size, ok=err < tol)
        )
    return report

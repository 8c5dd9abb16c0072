"""Block zoo built on the autodiff ops.

The central block multiplies a cheap large-kernel context branch into an
expanded value projection (context then modulation); the others are the
designs it descends from or is compared against: VAN-style gated convolution,
focal-style multi-level gated context, the inverted bottleneck (MBConv),
squeeze-and-excitation, and a vanilla pre-norm attention block.

Parameters live in small dataclasses holding Var leaves, so one forward pass
threads the tape through both the block and its wrapper. named_params /
bind_params give a stable flat view used by gradcheck and serialization.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError, PreconditionError
from .kernels import ConvSpec

BLOCK_KINDS = (
    "efficient_mod",
    "van",
    "focal",
    "mbconv",
    "se",
    "attention",
    "patch_embed",
    "residual",
)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32):
    """Normal(0, std) with redraws outside +-2 std (the usual conv/linear init)."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


def _param(rng, shape, std, dtype) -> Var:
    return Var(trunc_normal(rng, shape, std=std, dtype=dtype))


def _zeros(shape, dtype) -> Var:
    return Var(np.zeros(shape, dtype=dtype))


# ------------------------------------------------- parameter introspection


def named_params(obj, prefix: str = "") -> dict:
    """Flatten a params dataclass into {path: Var}; tuples recurse by index."""
    out: dict[str, Var] = {}
    for f in dataclasses.fields(obj):
        _collect(getattr(obj, f.name), f"{prefix}{f.name}", out)
    return out


def _collect(v, name, out):
    if isinstance(v, Var):
        out[name] = v
    elif isinstance(v, tuple):
        for i, item in enumerate(v):
            _collect(item, f"{name}.{i}", out)


def bind_params(obj, mapping: dict, prefix: str = ""):
    """Rebuild a params dataclass with Vars taken from mapping by path."""
    kwargs = {}
    for f in dataclasses.fields(obj):
        kwargs[f.name] = _bind(getattr(obj, f.name), f"{prefix}{f.name}", mapping)
    return type(obj)(**kwargs)


def _bind(v, name, mapping):
    if isinstance(v, Var):
        return mapping[name]
    if isinstance(v, tuple):
        return tuple(_bind(item, f"{name}.{i}", mapping) for i, item in enumerate(v))
    return v


# --------------------------------------------------------- efficient mod


@dataclass
class EfficientModParams:
    """Context-and-modulate block: p( ctx(x) fused with v(x) ).

    ctx = g(gelu(DW_k(f(x)))) stays at c channels; v expands to expansion*c;
    p squeezes back to c_out. The only nonlinearity sits after the depthwise
    conv; f itself is linear.
    """

    f_w: Var
    f_b: Var | None
    dw_w: Var
    dw_b: Var | None
    g_w: Var
    g_b: Var | None
    v_w: Var
    v_b: Var | None
    p_w: Var
    p_b: Var | None
    kernel: int = 7
    expansion: int = 6

    @property
    def channels(self) -> int:
        return self.f_w.data.shape[0]

    @property
    def out_channels(self) -> int:
        return self.p_w.data.shape[0]


def init_efficient_mod(
    rng,
    c: int,
    c_out: int | None = None,
    expansion: int = 6,
    kernel: int = 7,
    bias: bool = True,
    std: float = 0.02,
    dtype=np.float32,
) -> EfficientModParams:
    if expansion < 1:
        raise ConfigError(f"expansion must be >= 1, got {expansion}")
    if kernel % 2 == 0 or kernel < 1:
        raise ConfigError(f"depthwise kernel must be odd and positive, got {kernel}")
    c_out = c if c_out is None else c_out
    rc = expansion * c
    mk = lambda shape: _param(rng, shape, std, dtype)
    b = (lambda n: _zeros((n,), dtype)) if bias else (lambda n: None)
    return EfficientModParams(
        f_w=mk((c, c)), f_b=b(c),
        dw_w=mk((c, 1, kernel, kernel)), dw_b=b(c),
        g_w=mk((c, c)), g_b=b(c),
        v_w=mk((rc, c)), v_b=b(rc),
        p_w=mk((c_out, rc)), p_b=b(c_out),
        kernel=kernel, expansion=expansion,
    )


def efficient_mod_ctx(x: Var, p: EfficientModParams) -> Var:
    """Context branch only: g(gelu(DW_k(f(x)))), channel-preserving."""
    c = p.channels
    h = ad.pointwise(x, p.f_w, p.f_b)
    h = ad.conv2d(h, p.dw_w, p.dw_b, ConvSpec(p.kernel, groups=c))
    h = ad.gelu(h)
    return ad.pointwise(h, p.g_w, p.g_b)


def efficient_mod(x: Var, p: EfficientModParams, mode: str = "repeat", combine: str = "mul") -> Var:
    ctx = efficient_mod_ctx(x, p)
    v = ad.pointwise(x, p.v_w, p.v_b)
    fused = ad.fuse_modulate(ctx, v, mode=mode, combine=combine)
    return ad.pointwise(fused, p.p_w, p.p_b)


# ------------------------------------------------------------------- VAN


@dataclass
class VANParams:
    """Gated large-kernel attention: p( ctx(f(x)) * f(x) ).

    The embedding f (with activation) is computed once and shared by both the
    context branch and the gate. ctx = g(DW_7,dil3(DW_5(x))): effective
    receptive radius 2 + 9 = 11.
    """

    f_w: Var
    f_b: Var | None
    dw5_w: Var
    dw5_b: Var | None
    dw7_w: Var
    dw7_b: Var | None
    g_w: Var
    g_b: Var | None
    p_w: Var
    p_b: Var | None

    @property
    def channels(self) -> int:
        return self.f_w.data.shape[0]


def init_van(rng, c: int, bias: bool = True, std: float = 0.02, dtype=np.float32) -> VANParams:
    mk = lambda shape: _param(rng, shape, std, dtype)
    b = (lambda n: _zeros((n,), dtype)) if bias else (lambda n: None)
    return VANParams(
        f_w=mk((c, c)), f_b=b(c),
        dw5_w=mk((c, 1, 5, 5)), dw5_b=b(c),
        dw7_w=mk((c, 1, 7, 7)), dw7_b=b(c),
        g_w=mk((c, c)), g_b=b(c),
        p_w=mk((c, c)), p_b=b(c),
    )


def van_ctx(h: Var, p: VANParams) -> Var:
    """Context over an already-embedded feature: g(DW_7,dil3(DW_5(h)))."""
    c = p.channels
    u = ad.conv2d(h, p.dw5_w, p.dw5_b, ConvSpec(5, groups=c))
    u = ad.conv2d(u, p.dw7_w, p.dw7_b, ConvSpec(7, dilation=3, groups=c))
    return ad.pointwise(u, p.g_w, p.g_b)


def van_block(x: Var, p: VANParams) -> Var:
    h = ad.gelu(ad.pointwise(x, p.f_w, p.f_b))
    return ad.pointwise(ad.mul(van_ctx(h, p), h), p.p_w, p.p_b)


# ----------------------------------------------------------------- focal


@dataclass
class FocalParams:
    """Multi-level gated context: g( sum_l gelu(DW_kl(f(x))) * z_l(f(x)) ).

    Each level l runs its own depthwise conv over the shared embedding and is
    gated by a scalar-per-position map z_l (c channels -> 1, broadcast back).
    Kernels must be strictly increasing so levels see growing context.
    """

    f_w: Var
    f_b: Var | None
    levels: tuple  # ((dw_w, dw_b), ...) per level
    gates: tuple  # ((z_w [1,c], z_b [1]), ...) per level
    g_w: Var
    g_b: Var | None
    kernels: tuple = (3, 5)

    @property
    def channels(self) -> int:
        return self.f_w.data.shape[0]


def init_focal(
    rng,
    c: int,
    kernels: tuple = (3, 5),
    bias: bool = True,
    std: float = 0.02,
    dtype=np.float32,
) -> FocalParams:
    if len(kernels) < 1:
        raise ConfigError("focal needs at least one level")
    if any(k % 2 == 0 or k < 1 for k in kernels):
        raise ConfigError(f"focal kernels must be odd and positive, got {kernels}")
    if any(b >= a for a, b in zip(kernels[1:], kernels)):
        raise ConfigError(f"focal kernels must be strictly increasing, got {kernels}")
    mk = lambda shape: _param(rng, shape, std, dtype)
    b = (lambda n: _zeros((n,), dtype)) if bias else (lambda n: None)
    levels = tuple((mk((c, 1, k, k)), b(c)) for k in kernels)
    gates = tuple((mk((1, c)), b(1)) for _ in kernels)
    return FocalParams(
        f_w=mk((c, c)), f_b=b(c), levels=levels, gates=gates,
        g_w=mk((c, c)), g_b=b(c), kernels=tuple(kernels),
    )


def focal_ctx(x: Var, p: FocalParams) -> Var:
    c = p.channels
    h = ad.pointwise(x, p.f_w, p.f_b)
    acc = None
    for (dw_w, dw_b), (z_w, z_b), k in zip(p.levels, p.gates, p.kernels):
        u = ad.gelu(ad.conv2d(h, dw_w, dw_b, ConvSpec(k, groups=c)))
        gate = ad.pointwise(h, z_w, z_b)  # [n,1,h,w], broadcast over channels
        term = ad.mul(u, gate)
        acc = term if acc is None else ad.add(acc, term)
    return ad.pointwise(acc, p.g_w, p.g_b)


# ---------------------------------------------------------------- mbconv


@dataclass
class MBConvParams:
    """Inverted bottleneck: squeeze(gelu(DW_k(expand(x)))), channel-preserving.

    expand is c -> expansion*c, the depthwise conv runs at the expanded width,
    squeeze maps back to c. Params: 2*r*c^2 + k^2*r*c (no bias).
    """

    expand_w: Var
    expand_b: Var | None
    dw_w: Var
    dw_b: Var | None
    squeeze_w: Var
    squeeze_b: Var | None
    kernel: int = 3
    expansion: int = 6

    @property
    def channels(self) -> int:
        return self.expand_w.data.shape[1]


def init_mbconv(
    rng,
    c: int,
    expansion: int = 6,
    kernel: int = 3,
    bias: bool = True,
    std: float = 0.02,
    dtype=np.float32,
) -> MBConvParams:
    if expansion < 1:
        raise ConfigError(f"expansion must be >= 1, got {expansion}")
    if kernel % 2 == 0 or kernel < 1:
        raise ConfigError(f"depthwise kernel must be odd and positive, got {kernel}")
    rc = expansion * c
    mk = lambda shape: _param(rng, shape, std, dtype)
    b = (lambda n: _zeros((n,), dtype)) if bias else (lambda n: None)
    return MBConvParams(
        expand_w=mk((rc, c)), expand_b=b(rc),
        dw_w=mk((rc, 1, kernel, kernel)), dw_b=b(rc),
        squeeze_w=mk((c, rc)), squeeze_b=b(c),
        kernel=kernel, expansion=expansion,
    )


def mbconv_block(x: Var, p: MBConvParams) -> Var:
    rc = p.expand_w.data.shape[0]
    h = ad.pointwise(x, p.expand_w, p.expand_b)
    h = ad.conv2d(h, p.dw_w, p.dw_b, ConvSpec(p.kernel, groups=rc))
    h = ad.gelu(h)
    return ad.pointwise(h, p.squeeze_w, p.squeeze_b)


# -------------------------------------------------------------------- SE


@dataclass
class SEParams:
    """Squeeze-and-excitation gate: x * sigmoid(W2 gelu(W1 GAP(x)))."""

    w1: Var
    b1: Var | None
    w2: Var
    b2: Var | None

    @property
    def channels(self) -> int:
        return self.w1.data.shape[1]


def init_se(
    rng, c: int, reduction: int = 4, bias: bool = True, std: float = 0.02, dtype=np.float32
) -> SEParams:
    if reduction < 1 or c % reduction != 0:
        raise ConfigError(f"reduction {reduction} must divide channel count {c}")
    cr = c // reduction
    mk = lambda shape: _param(rng, shape, std, dtype)
    b = (lambda n: _zeros((n,), dtype)) if bias else (lambda n: None)
    return SEParams(w1=mk((cr, c)), b1=b(cr), w2=mk((c, cr)), b2=b(c))


def se_block(x: Var, p: SEParams) -> Var:
    g = ad.global_avg_pool(x)
    g = ad.gelu(ad.pointwise(g, p.w1, p.b1))
    g = ad.sigmoid(ad.pointwise(g, p.w2, p.b2))
    return ad.mul(x, g)  # [n,c,h,w] * [n,c,1,1]


# ------------------------------------------------------------- attention


@dataclass
class AttentionParams:
    """Pre-norm transformer block on token layout [n, t, c].

    x + proj(MHSA(LN(x))) followed by x + MLP(LN(x)); scores scaled by
    1/sqrt(c/heads). No positional term anywhere, so the block is
    permutation-equivariant over tokens.
    """

    ln1_g: Var
    ln1_b: Var
    qkv_w: Var
    qkv_b: Var | None
    proj_w: Var
    proj_b: Var | None
    ln2_g: Var
    ln2_b: Var
    mlp1_w: Var
    mlp1_b: Var | None
    mlp2_w: Var
    mlp2_b: Var | None
    heads: int = 8

    @property
    def channels(self) -> int:
        return self.qkv_w.data.shape[1]


def init_attention(
    rng,
    c: int,
    heads: int = 8,
    mlp_ratio: float = 4.0,
    bias: bool = True,
    std: float = 0.02,
    dtype=np.float32,
) -> AttentionParams:
    if heads < 1 or c % heads != 0:
        raise ConfigError(f"channel count {c} must be divisible by heads={heads}")
    hidden = int(round(c * mlp_ratio))
    if hidden < 1:
        raise ConfigError(f"mlp_ratio {mlp_ratio} gives empty hidden layer at c={c}")
    mk = lambda shape: _param(rng, shape, std, dtype)
    b = (lambda n: _zeros((n,), dtype)) if bias else (lambda n: None)
    ones = lambda n: Var(np.ones((n,), dtype=dtype))
    return AttentionParams(
        ln1_g=ones(c), ln1_b=_zeros((c,), dtype),
        qkv_w=mk((3 * c, c)), qkv_b=b(3 * c),
        proj_w=mk((c, c)), proj_b=b(c),
        ln2_g=ones(c), ln2_b=_zeros((c,), dtype),
        mlp1_w=mk((hidden, c)), mlp1_b=b(hidden),
        mlp2_w=mk((c, hidden)), mlp2_b=b(c),
        heads=heads,
    )


def attention_block(x: Var, p: AttentionParams) -> Var:
    if x.data.ndim != 3:
        raise PreconditionError(f"attention input must be [n, t, c], got {x.data.shape}")
    n, t, c = x.data.shape
    if c != p.channels:
        raise PreconditionError(f"attention input channels {c} != params channels {p.channels}")
    H = p.heads
    d = c // H

    h = ad.layer_norm(x, p.ln1_g, p.ln1_b, axis=2)
    qkv = ad.linear(h, p.qkv_w, p.qkv_b)  # [n,t,3c]
    q = ad.narrow(qkv, 2, 0, c)
    k = ad.narrow(qkv, 2, c, c)
    v = ad.narrow(qkv, 2, 2 * c, c)
    # [n,t,c] -> [n,H,t,d]
    to_heads = lambda z: ad.transpose(ad.reshape(z, (n, t, H, d)), (0, 2, 1, 3))
    q, k, v = to_heads(q), to_heads(k), to_heads(v)
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    att = ad.softmax(scores, axis=-1)
    y = ad.matmul(att, v)  # [n,H,t,d]
    y = ad.reshape(ad.transpose(y, (0, 2, 1, 3)), (n, t, c))
    x = ad.add(x, ad.linear(y, p.proj_w, p.proj_b))

    h2 = ad.layer_norm(x, p.ln2_g, p.ln2_b, axis=2)
    m = ad.linear(ad.gelu(ad.linear(h2, p.mlp1_w, p.mlp1_b)), p.mlp2_w, p.mlp2_b)
    return ad.add(x, m)


# ----------------------------------------------------------- patch embed


def patch_embed(x: Var, w: Var, b: Var | None, kernel: int, stride: int, padding: int = 0) -> Var:
    """Strided conv used for stems, stage downsampling and patchify layers."""
    return ad.conv2d(x, w, b, ConvSpec(kernel, stride=stride, padding=padding))


# -------------------------------------------------------- residual wrap


@dataclass
class ResidualWrap:
    """Pre-norm residual with per-channel layer scale and stochastic depth.

    eval: x + layer_scale * inner(LN(x)). train: the whole branch is dropped
    per sample with prob drop_path_prob, survivors scaled by 1/(1-p).
    """

    norm_gamma: Var
    norm_beta: Var
    layer_scale: Var
    drop_path_prob: float = 0.0


def init_residual_wrap(
    c: int, layer_scale_init: float = 1e-4, drop_path_prob: float = 0.0, dtype=np.float32
) -> ResidualWrap:
    if not 0.0 <= drop_path_prob < 1.0:
        raise ConfigError(f"drop_path_prob must be in [0, 1), got {drop_path_prob}")
    return ResidualWrap(
        norm_gamma=Var(np.ones((c,), dtype=dtype)),
        norm_beta=Var(np.zeros((c,), dtype=dtype)),
        layer_scale=Var(np.full((c,), layer_scale_init, dtype=dtype)),
        drop_path_prob=drop_path_prob,
    )


def residual_apply(
    x: Var,
    inner,
    wrap: ResidualWrap,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Var:
    h = ad.layer_norm(x, wrap.norm_gamma, wrap.norm_beta, axis=1)
    branch = inner(h)
    if branch.data.shape != x.data.shape:
        raise PreconditionError(
            f"residual branch shape {branch.data.shape} != input shape {x.data.shape}"
        )
    c = branch.data.shape[1]
    scaled = ad.mul(branch, ad.reshape(wrap.layer_scale, (1, c, 1, 1)))
    if training and wrap.drop_path_prob > 0.0:
        if rng is None:
            raise PreconditionError("stochastic depth in training mode needs an rng")
        p = wrap.drop_path_prob
        keep = (rng.random(x.data.shape[0]) >= p).astype(x.data.dtype) / (1.0 - p)
        scaled = ad.mul(scaled, Var(keep.reshape(-1, 1, 1, 1)))
    return ad.add(x, scaled)


# ------------------------------------------------------------ gradcheck


GC_STD = 0.5  # gradcheck inits at O(1) scale so FD noise stays far below tol


def _gc_efficient_mod(case: int, rng):
    c, c_out, r, k, n, h, w = [
        (4, 4, 2, 3, 1, 6, 6),
        (3, 3, 3, 5, 2, 5, 5),
        (5, 4, 1, 3, 1, 4, 7),
    ][case]
    p = init_efficient_mod(rng, c, c_out=c_out, expansion=r, kernel=k, std=GC_STD, dtype=np.float64)
    arrays = {"x": rng.normal(0, 1, (n, c, h, w))}
    arrays.update({name: v.data for name, v in named_params(p).items()})
    return arrays, lambda lv: efficient_mod(lv["x"], bind_params(p, lv))


def _gc_van(case: int, rng):
    c, n, h, w = [(3, 1, 6, 6), (4, 2, 5, 5), (2, 1, 8, 4)][case]
    p = init_van(rng, c, std=GC_STD, dtype=np.float64)
    arrays = {"x": rng.normal(0, 1, (n, c, h, w))}
    arrays.update({name: v.data for name, v in named_params(p).items()})
    return arrays, lambda lv: van_block(lv["x"], bind_params(p, lv))


def _gc_focal(case: int, rng):
    # two levels everywhere; channel/spatial shapes vary
    c, n, h, w = [(4, 1, 6, 6), (3, 2, 5, 5), (2, 1, 7, 4)][case]
    p = init_focal(rng, c, kernels=(3, 5), std=GC_STD, dtype=np.float64)
    arrays = {"x": rng.normal(0, 1, (n, c, h, w))}
    arrays.update({name: v.data for name, v in named_params(p).items()})
    return arrays, lambda lv: focal_ctx(lv["x"], bind_params(p, lv))


def _gc_mbconv(case: int, rng):
    c, r, k, n, h, w = [(4, 2, 3, 1, 6, 6), (3, 4, 3, 2, 5, 5), (2, 6, 5, 1, 7, 4)][case]
    p = init_mbconv(rng, c, expansion=r, kernel=k, std=GC_STD, dtype=np.float64)
    arrays = {"x": rng.normal(0, 1, (n, c, h, w))}
    arrays.update({name: v.data for name, v in named_params(p).items()})
    return arrays, lambda lv: mbconv_block(lv["x"], bind_params(p, lv))


def _gc_se(case: int, rng):
    c, red, n, h, w = [(4, 2, 1, 5, 5), (8, 4, 2, 4, 4), (6, 3, 1, 3, 7)][case]
    p = init_se(rng, c, reduction=red, std=GC_STD, dtype=np.float64)
    arrays = {"x": rng.normal(0, 1, (n, c, h, w))}
    arrays.update({name: v.data for name, v in named_params(p).items()})
    return arrays, lambda lv: se_block(lv["x"], bind_params(p, lv))


def _gc_attention(case: int, rng):
    c, heads, t, mlp, n = [(8, 1, 5, 2.0, 1), (8, 2, 6, 2.0, 2), (12, 4, 3, 1.0, 1)][case]
    # bias=False: the key-projection bias is a flat direction of softmax
    # attention (scores shift uniformly per row), so its true gradient is
    # identically zero and central differences see only round-off there.
    # The bias rule itself is certified at op level in the test suite.
    p = init_attention(rng, c, heads=heads, mlp_ratio=mlp, bias=False, std=GC_STD, dtype=np.float64)
    arrays = {"x": rng.normal(0, 1, (n, t, c))}
    arrays.update({name: v.data for name, v in named_params(p).items()})
    return arrays, lambda lv: attention_block(lv["x"], bind_params(p, lv))


def _gc_patch_embed(case: int, rng):
    c_in, c_out, k, s, pad, res = [
        (3, 6, 4, 4, 0, 8),
        (3, 5, 7, 4, 3, 11),
        (1, 4, 2, 2, 0, 6),
    ][case]
    arrays = {
        "x": rng.normal(0, 1, (1, c_in, res, res)),
        "w": rng.normal(0, 0.1, (c_out, c_in, k, k)),
        "b": rng.normal(0, 0.1, (c_out,)),
    }
    return arrays, lambda lv: patch_embed(lv["x"], lv["w"], lv["b"], k, s, padding=pad)


def _gc_residual(case: int, rng):
    # eval-mode wrap around a small modulation block
    c, r, k, n, h, w = [(3, 2, 3, 1, 5, 5), (4, 1, 3, 2, 4, 4), (2, 3, 5, 1, 6, 3)][case]
    inner = init_efficient_mod(rng, c, expansion=r, kernel=k, std=GC_STD, dtype=np.float64)
    wrap = init_residual_wrap(c, layer_scale_init=0.5, dtype=np.float64)
    arrays = {"x": rng.normal(0, 1, (n, c, h, w))}
    arrays.update({f"inner.{k2}": v.data for k2, v in named_params(inner).items()})
    arrays.update({f"wrap.{k2}": v.data for k2, v in named_params(wrap).items()})

    def f(lv):
        q = bind_params(inner, lv, prefix="inner.")
        wq = bind_params(wrap, lv, prefix="wrap.")
        return residual_apply(lv["x"], lambda h_: efficient_mod(h_, q), wq, training=False)

    return arrays, f


_GC_BUILDERS = {
    "efficient_mod": _gc_efficient_mod,
    "van": _gc_van,
    "focal": _gc_focal,
    "mbconv": _gc_mbconv,
    "se": _gc_se,
    "attention": _gc_attention,
    "patch_embed": _gc_patch_embed,
    "residual": _gc_residual,
}

GC_CASES = 3  # shape variants per block kind


def block_grad_check(
    kind: str, case: int = 0, tol: float = 1e-5, seed: int = 0
) -> ad.GradCheckReport:
    """Finite-difference certification of one block kind at one shape case."""
    if kind not in _GC_BUILDERS:
        raise ConfigError(f"unknown block kind {kind!r}; choose from {BLOCK_KINDS}")
    if not 0 <= case < GC_CASES:
        raise ConfigError(f"case must be in 0..{GC_CASES - 1}, got {case}")
    rng = np.random.default_rng((seed, BLOCK_KINDS.index(kind), case))
    arrays, f = _GC_BUILDERS[kind](case, rng)
    return ad.grad_check(f, arrays, tol=tol)

"""Model assembly: 4-stage hierarchical backbones and isotropic stacks.

Hierarchy: stem conv (k7 s4 pad3) -> 4 stages at 1/4, 1/8, 1/16, 1/32 of the
input, joined by k3 s2 pad1 downsampling convs -> GAP -> LayerNorm -> linear
head. Within a stage every modulation block precedes every attention block,
and attention only appears in stages 3 and 4 where the token count is small.

Isotropic: patchify conv (k14 s14) -> depth identical blocks at one width ->
same head. Used for the parameter-matched modulation-vs-MBConv pairs.

ModelSpec round-trips through JSON with strict unknown-key rejection; the
`attn_mlp_ratio` key is optional (default 4.0) and exists because the MLP
width is the one free knob used to calibrate preset budgets.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import blocks as B
from .autodiff import Var
from .errors import ConfigError, NumericalError, PreconditionError
from .kernels import ConvSpec

STEM_PAD = 3  # stem is k7 s4; same-style padding
DOWN_KERNEL, DOWN_STRIDE, DOWN_PAD = 3, 2, 1


@dataclass(frozen=True)
class StemSpec:
    kernel: int = 7
    stride: int = 4


@dataclass(frozen=True)
class StageSpec:
    dim: int
    mod_blocks: int
    attn_blocks: int = 0
    expansion_pattern: tuple = (1, 6)
    dw_kernel: int = 7


@dataclass(frozen=True)
class ModelSpec:
    stem: StemSpec
    stages: tuple  # exactly 4 StageSpec
    head: int
    drop_path_rate: float = 0.0
    layer_scale_init: float = 1e-4
    attn_mlp_ratio: float = 4.0
    heads: int = 8  # fixed default; not serialized

    def validate(self) -> "ModelSpec":
        if len(self.stages) != 4:
            raise ConfigError(f"expected exactly 4 stages, got {len(self.stages)}")
        for i, st in enumerate(self.stages):
            if st.dim < 1:
                raise ConfigError(f"stage {i}: dim must be positive, got {st.dim}")
            if st.mod_blocks < 0 or st.attn_blocks < 0:
                raise ConfigError(f"stage {i}: block counts must be >= 0")
            if st.attn_blocks > 0 and i < 2:
                raise ConfigError(
                    f"stage {i}: attention blocks only allowed in stages 3 and 4"
                )
            if st.attn_blocks > 0 and st.dim % self.heads != 0:
                raise ConfigError(
                    f"stage {i}: dim {st.dim} not divisible by heads={self.heads}"
                )
            if not st.expansion_pattern or any(
                (not isinstance(r, int)) or r < 1 for r in st.expansion_pattern
            ):
                raise ConfigError(
                    f"stage {i}: expansion_pattern must be positive ints, got {st.expansion_pattern}"
                )
            if st.dw_kernel < 1 or st.dw_kernel % 2 == 0:
                raise ConfigError(f"stage {i}: dw_kernel must be odd, got {st.dw_kernel}")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ConfigError(f"drop_path_rate must be in [0, 1), got {self.drop_path_rate}")
        if self.head < 1:
            raise ConfigError(f"head class count must be positive, got {self.head}")
        if self.attn_mlp_ratio <= 0:
            raise ConfigError(f"attn_mlp_ratio must be positive, got {self.attn_mlp_ratio}")
        return self


@dataclass(frozen=True)
class IsotropicSpec:
    block: str  # "efficient_mod" | "mbconv"
    dim: int
    depth: int
    expansion: int
    dw_kernel: int = 7
    patch: int = 14
    head: int = 1000
    drop_path_rate: float = 0.0
    layer_scale_init: float = 1e-4

    def validate(self) -> "IsotropicSpec":
        if self.block not in ("efficient_mod", "mbconv"):
            raise ConfigError(f"isotropic block must be efficient_mod or mbconv, got {self.block}")
        if min(self.dim, self.depth, self.expansion, self.patch, self.head) < 1:
            raise ConfigError("isotropic dims/depth/expansion/patch/head must be positive")
        return self


# --------------------------------------------------------------- presets

# Attention MLP ratios are calibration values: the published block layout pins
# everything else, and these land the analyzer totals inside the budget
# tolerances (see README). They are reported by `analyze` output.
PRESETS: dict = {}


def _preset(name, dims, mods, attns, pattern, head, drop, mlp):
    PRESETS[name] = ModelSpec(
        stem=StemSpec(7, 4),
        stages=tuple(
            StageSpec(dim=d, mod_blocks=m, attn_blocks=a, expansion_pattern=pattern)
            for d, m, a in zip(dims, mods, attns)
        ),
        head=head,
        drop_path_rate=drop,
        attn_mlp_ratio=mlp,
    )


_preset("xxs", (32, 64, 128, 256), (2, 2, 6, 2), (0, 0, 1, 2), (1, 6), 1000, 0.0, 4.0)
_preset("xs", (32, 64, 144, 288), (3, 3, 4, 2), (0, 0, 3, 3), (1, 4), 1000, 0.0, 4.5)
_preset("s", (32, 64, 144, 312), (4, 4, 8, 8), (0, 0, 4, 4), (1, 6), 1000, 0.02, 1.375)
_preset("s_conv", (40, 80, 160, 344), (4, 4, 12, 8), (0, 0, 0, 0), (1, 6), 1000, 0.02, 4.0)
_preset("micro", (8, 16, 24, 32), (1, 1, 1, 1), (0, 0, 0, 0), (4,), 4, 0.0, 4.0)

ISO_SPECS: dict = {
    "iso-effmod-256-13": IsotropicSpec("efficient_mod", 256, 13, 6, dw_kernel=7),
    "iso-mbconv-256-13": IsotropicSpec("mbconv", 256, 13, 7, dw_kernel=3),
    "iso-effmod-196-11": IsotropicSpec("efficient_mod", 196, 11, 6, dw_kernel=7),
    "iso-mbconv-196-11": IsotropicSpec("mbconv", 196, 11, 7, dw_kernel=3),
}

ISO_PAIRS: dict = {
    "iso-256-13": ("iso-effmod-256-13", "iso-mbconv-256-13"),
    "iso-196-11": ("iso-effmod-196-11", "iso-mbconv-196-11"),
}


def build_preset(name: str) -> ModelSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]


# ------------------------------------------------------------------ JSON

_TOP_KEYS = {"stem", "stages", "head", "drop_path_rate", "layer_scale_init", "attn_mlp_ratio"}
_STEM_KEYS = {"kernel", "stride"}
_STAGE_KEYS = {"dim", "mod_blocks", "attn_blocks", "expansion_pattern", "dw_kernel"}


def spec_to_json(spec: ModelSpec) -> str:
    doc = {
        "stem": {"kernel": spec.stem.kernel, "stride": spec.stem.stride},
        "stages": [
            {
                "dim": st.dim,
                "mod_blocks": st.mod_blocks,
                "attn_blocks": st.attn_blocks,
                "expansion_pattern": list(st.expansion_pattern),
                "dw_kernel": st.dw_kernel,
            }
            for st in spec.stages
        ],
        "head": spec.head,
        "drop_path_rate": spec.drop_path_rate,
        "layer_scale_init": spec.layer_scale_init,
        "attn_mlp_ratio": spec.attn_mlp_ratio,
    }
    return json.dumps(doc, indent=2)


def _reject_unknown(doc: dict, allowed: set, where: str):
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def spec_from_json(text: str) -> ModelSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed model spec JSON at line {e.lineno} column {e.colno}: {e.msg}")
    if not isinstance(doc, dict):
        raise ConfigError("model spec JSON must be an object")
    _reject_unknown(doc, _TOP_KEYS, "model spec")
    for key in ("stem", "stages", "head"):
        if key not in doc:
            raise ConfigError(f"model spec missing required key {key!r}")
    _reject_unknown(doc["stem"], _STEM_KEYS, "stem")
    stages = doc["stages"]
    if not isinstance(stages, list) or len(stages) != 4:
        raise ConfigError("model spec 'stages' must be an array of exactly 4 stages")
    built = []
    for i, st in enumerate(stages):
        _reject_unknown(st, _STAGE_KEYS, f"stage {i}")
        if "dim" not in st or "mod_blocks" not in st:
            raise ConfigError(f"stage {i} missing required dim/mod_blocks")
        built.append(
            StageSpec(
                dim=int(st["dim"]),
                mod_blocks=int(st["mod_blocks"]),
                attn_blocks=int(st.get("attn_blocks", 0)),
                expansion_pattern=tuple(int(r) for r in st.get("expansion_pattern", [1, 6])),
                dw_kernel=int(st.get("dw_kernel", 7)),
            )
        )
    spec = ModelSpec(
        stem=StemSpec(int(doc["stem"].get("kernel", 7)), int(doc["stem"].get("stride", 4))),
        stages=tuple(built),
        head=int(doc["head"]),
        drop_path_rate=float(doc.get("drop_path_rate", 0.0)),
        layer_scale_init=float(doc.get("layer_scale_init", 1e-4)),
        attn_mlp_ratio=float(doc.get("attn_mlp_ratio", 4.0)),
    )
    return spec.validate()


# ---------------------------------------------------------------- model


@dataclass
class ConvLayer:
    w: Var
    b: Var | None
    spec: ConvSpec


@dataclass
class BlockEntry:
    kind: str  # "mod" | "attn" | "mbconv"
    params: object
    wrap: B.ResidualWrap | None = None


@dataclass
class Model:
    """A built network: parameter Vars plus the structure to run/analyze it."""

    arch: str  # "hierarchical" | "isotropic"
    spec: object
    stem: ConvLayer
    stages: list  # list[list[BlockEntry]]
    downs: list  # list[ConvLayer], one between consecutive stages
    head_norm_g: Var
    head_norm_b: Var
    head_w: Var
    head_b: Var | None
    combine: str = "mul"  # modulation fuse op; "sum" is the ablation variant

    def named_parameters(self):
        """Stable (name, Var) walk; order defines the serialization layout."""
        yield "stem.w", self.stem.w
        if self.stem.b is not None:
            yield "stem.b", self.stem.b
        for si, stage in enumerate(self.stages):
            for bi, entry in enumerate(stage):
                prefix = f"stage{si}.block{bi}."
                if entry.wrap is not None:
                    for name, v in B.named_params(entry.wrap).items():
                        yield f"{prefix}wrap.{name}", v
                for name, v in B.named_params(entry.params).items():
                    yield prefix + name, v
            if si < len(self.downs):
                yield f"down{si}.w", self.downs[si].w
                if self.downs[si].b is not None:
                    yield f"down{si}.b", self.downs[si].b
        yield "head.norm_g", self.head_norm_g
        yield "head.norm_b", self.head_norm_b
        yield "head.w", self.head_w
        if self.head_b is not None:
            yield "head.b", self.head_b

    def param_count(self) -> int:
        return sum(v.data.size for _, v in self.named_parameters())


def _conv_layer(rng, c_in, c_out, kernel, stride, padding, bias, std, dtype) -> ConvLayer:
    w = Var(B.trunc_normal(rng, (c_out, c_in, kernel, kernel), std=std, dtype=dtype))
    b = Var(np.zeros((c_out,), dtype=dtype)) if bias else None
    return ConvLayer(w=w, b=b, spec=ConvSpec(kernel, stride=stride, padding=padding))


def build_model(
    spec: ModelSpec, seed: int = 0, dtype=np.float32, bias: bool = True, combine: str = "mul"
) -> Model:
    """Materialize a hierarchical model; same seed gives bit-identical params."""
    spec.validate()
    if combine not in ("mul", "sum"):
        raise ConfigError(f"combine must be 'mul' or 'sum', got {combine!r}")
    rng = np.random.default_rng(seed)
    std = 0.02
    stem = _conv_layer(
        rng, 3, spec.stages[0].dim, spec.stem.kernel, spec.stem.stride, STEM_PAD, bias, std, dtype
    )
    stages: list[list[BlockEntry]] = []
    downs: list[ConvLayer] = []
    for si, st in enumerate(spec.stages):
        entries: list[BlockEntry] = []
        for bi in range(st.mod_blocks):
            r = st.expansion_pattern[bi % len(st.expansion_pattern)]
            params = B.init_efficient_mod(
                rng, st.dim, expansion=r, kernel=st.dw_kernel, bias=bias, std=std, dtype=dtype
            )
            wrap = B.init_residual_wrap(
                st.dim, spec.layer_scale_init, spec.drop_path_rate, dtype=dtype
            )
            entries.append(BlockEntry("mod", params, wrap))
        for _ in range(st.attn_blocks):
            params = B.init_attention(
                rng, st.dim, heads=spec.heads, mlp_ratio=spec.attn_mlp_ratio,
                bias=bias, std=std, dtype=dtype,
            )
            entries.append(BlockEntry("attn", params, None))
        stages.append(entries)
        if si < 3:
            downs.append(
                _conv_layer(
                    rng, st.dim, spec.stages[si + 1].dim,
                    DOWN_KERNEL, DOWN_STRIDE, DOWN_PAD, bias, std, dtype,
                )
            )
    c_last = spec.stages[-1].dim
    return Model(
        arch="hierarchical",
        spec=spec,
        stem=stem,
        stages=stages,
        downs=downs,
        head_norm_g=Var(np.ones((c_last,), dtype=dtype)),
        head_norm_b=Var(np.zeros((c_last,), dtype=dtype)),
        head_w=Var(B.trunc_normal(rng, (spec.head, c_last), std=std, dtype=dtype)),
        head_b=Var(np.zeros((spec.head,), dtype=dtype)) if bias else None,
        combine=combine,
    )


def build_isotropic(
    spec: IsotropicSpec, seed: int = 0, dtype=np.float32, bias: bool = True, combine: str = "mul"
) -> Model:
    """Single-width stack behind a patchify conv; blocks are all one kind."""
    spec.validate()
    rng = np.random.default_rng(seed)
    std = 0.02
    stem = _conv_layer(rng, 3, spec.dim, spec.patch, spec.patch, 0, bias, std, dtype)
    entries = []
    for _ in range(spec.depth):
        if spec.block == "efficient_mod":
            params = B.init_efficient_mod(
                rng, spec.dim, expansion=spec.expansion, kernel=spec.dw_kernel,
                bias=bias, std=std, dtype=dtype,
            )
            kind = "mod"
        else:
            params = B.init_mbconv(
                rng, spec.dim, expansion=spec.expansion, kernel=spec.dw_kernel,
                bias=bias, std=std, dtype=dtype,
            )
            kind = "mbconv"
        wrap = B.init_residual_wrap(spec.dim, spec.layer_scale_init, spec.drop_path_rate, dtype)
        entries.append(BlockEntry(kind, params, wrap))
    return Model(
        arch="isotropic",
        spec=spec,
        stem=stem,
        stages=[entries],
        downs=[],
        head_norm_g=Var(np.ones((spec.dim,), dtype=dtype)),
        head_norm_b=Var(np.zeros((spec.dim,), dtype=dtype)),
        head_w=Var(B.trunc_normal(rng, (spec.head, spec.dim), std=std, dtype=dtype)),
        head_b=Var(np.zeros((spec.head,), dtype=dtype)) if bias else None,
        combine=combine,
    )


def build_iso_pair(pair: str, seed: int = 0, dtype=np.float32, bias: bool = True):
    if pair not in ISO_PAIRS:
        raise ConfigError(f"unknown isotropic pair {pair!r}; choose from {sorted(ISO_PAIRS)}")
    a, b = ISO_PAIRS[pair]
    return (
        build_isotropic(ISO_SPECS[a], seed=seed, dtype=dtype, bias=bias),
        build_isotropic(ISO_SPECS[b], seed=seed, dtype=dtype, bias=bias),
    )


# -------------------------------------------------------------- forward


def _check_input(model: Model, x: np.ndarray):
    if x.ndim != 4 or x.shape[1] != 3:
        raise PreconditionError(f"model input must be [n, 3, h, w], got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    if model.arch == "hierarchical":
        if h % 32 or w % 32:
            raise PreconditionError(
                f"hierarchical input spatial dims must be divisible by 32, got {h}x{w}"
            )
    else:
        p = model.spec.patch
        if h < p or w < p:
            raise PreconditionError(f"input {h}x{w} smaller than patch size {p}")


def model_forward(
    model: Model,
    x,
    training: bool = False,
    seed: int = 0,
    step: int = 0,
    ctx_tap: tuple | None = None,
):
    """Run the network; returns logits Var, or (logits, ctx array) with ctx_tap.

    ctx_tap = (stage_idx, block_idx) captures the context-branch output of one
    modulation block (computed on that block's post-norm input).
    Stochastic-depth draws are keyed by (seed, wrapped-block index, step), so a
    fixed key reproduces the same drop pattern regardless of batch order.
    """
    data = x.data if isinstance(x, Var) else np.asarray(x)
    _check_input(model, data)
    h = x if isinstance(x, Var) else Var(data)
    tap_value = None

    h = ad.conv2d(h, model.stem.w, model.stem.b, model.stem.spec)
    layer_idx = 0
    for si, stage in enumerate(model.stages):
        tokens = None  # lazily built [n,t,c] view for the attention tail
        for bi, entry in enumerate(stage):
            if entry.kind in ("mod", "mbconv"):
                if tokens is not None:
                    raise ConfigError(
                        f"stage {si}: modulation blocks must precede attention blocks"
                    )
                rng = (
                    np.random.default_rng((seed, layer_idx, step))
                    if training and entry.wrap is not None and entry.wrap.drop_path_prob > 0
                    else None
                )
                if entry.kind == "mod":
                    inner = lambda z, p=entry.params: B.efficient_mod(z, p, combine=model.combine)
                    if ctx_tap == (si, bi):
                        with ad.no_grad():
                            normed = ad.layer_norm(
                                h, entry.wrap.norm_gamma, entry.wrap.norm_beta, axis=1
                            )
                            tap_value = B.efficient_mod_ctx(normed, entry.params).data
                else:
                    inner = lambda z, p=entry.params: B.mbconv_block(z, p)
                h = B.residual_apply(h, inner, entry.wrap, training=training, rng=rng)
                layer_idx += 1
            else:  # attention on token layout
                if tokens is None:
                    n, c, hh, ww = h.data.shape
                    tokens = ad.transpose(ad.reshape(h, (n, c, hh * ww)), (0, 2, 1))
                    spatial = (n, c, hh, ww)
                tokens = B.attention_block(tokens, entry.params)
                layer_idx += 1
        if tokens is not None:
            n, c, hh, ww = spatial
            h = ad.reshape(ad.transpose(tokens, (0, 2, 1)), (n, c, hh, ww))
        if si < len(model.downs):
            d = model.downs[si]
            h = ad.conv2d(h, d.w, d.b, d.spec)

    h = ad.global_avg_pool(h)
    n, c = h.data.shape[0], h.data.shape[1]
    h = ad.reshape(h, (n, c))
    h = ad.layer_norm(h, model.head_norm_g, model.head_norm_b, axis=1)
    logits = ad.linear(h, model.head_w, model.head_b)
    if ctx_tap is not None:
        if tap_value is None:
            raise ConfigError(f"ctx_tap {ctx_tap} does not address a modulation block")
        return logits, tap_value
    return logits


def stage_resolutions(model: Model, input_res) -> list:
    """Spatial size after the stem and after each downsample, by arithmetic."""
    h, w = (input_res, input_res) if isinstance(input_res, int) else input_res
    h, w = model.stem.spec.out_size(h), model.stem.spec.out_size(w)
    out = [(h, w)]
    for d in model.downs:
        h, w = d.spec.out_size(h), d.spec.out_size(w)
        out.append((h, w))
    return out


# -------------------------------------------------- parameter serialization

_MAGIC = b"EFMODPRM"
_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_params(model: Model, path: str) -> int:
    """Write all parameters to the flat binary format; returns bytes written.

    Layout: magic "EFMODPRM", u32 version, u32 array count, then per array:
    u16 name length + utf-8 name, u8 dtype code (0=f32, 1=f64), u8 ndim,
    u32 dims, raw little-endian data. Integers are little-endian throughout.
    """
    entries = list(model.named_parameters())
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<II", _VERSION, len(entries))
    for name, v in entries:
        enc = name.encode("utf-8")
        arr = v.data
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise ConfigError(f"cannot serialize dtype {arr.dtype} for {name}")
        blob += struct.pack("<H", len(enc)) + enc
        blob += struct.pack("<BB", code, arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += np.ascontiguousarray(arr, dtype=_CODE_DTYPES[code]).tobytes()
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)


def load_params(model: Model, path: str) -> None:
    """Read parameters saved by save_params into the model, strict on layout."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != _MAGIC:
        raise ConfigError(f"{path}: not a parameter file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != _VERSION:
        raise ConfigError(f"{path}: unsupported version {version}")
    off = 16
    loaded = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise ConfigError(f"{path}: unknown dtype code {code} for {name}")
        nbytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
        arr = np.frombuffer(blob, dtype=dtype, count=max(int(np.prod(shape)), 1), offset=off)
        off += nbytes
        loaded[name] = arr.reshape(shape).astype(dtype.newbyteorder("="))
    for name, v in model.named_parameters():
        if name not in loaded:
            raise ConfigError(f"{path}: missing parameter {name}")
        if loaded[name].shape != v.data.shape:
            raise ConfigError(
                f"{path}: shape mismatch for {name}: file {loaded[name].shape}, model {v.data.shape}"
            )
        v.data = loaded[name].astype(v.data.dtype)

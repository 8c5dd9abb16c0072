"""Latency measurement with a fixed protocol.

Protocol: batch 1, a warmup run whose samples are discarded, then per-iteration
wall times from a monotonic clock. Reported stats are computed from the stored
sample vector, so they are independent of arrival order. A coefficient of
variation above 20% flags the result as unstable. Benchmarked callables must
be bit-deterministic: every iteration's output is hashed and compared against
the first, and a mismatch aborts the run.

Thread budget: defaults to 4 (EFFMOD_THREADS overrides). When threadpoolctl is
importable the budget is enforced for real by limiting the BLAS pools around
the timed region; otherwise it is recorded in the result only.
"""

from __future__ import annotations

import hashlib
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import analyzer
from .autodiff import no_grad
from .blocks import efficient_mod, init_efficient_mod
from .errors import ConfigError, NumericalError
from .model import ISO_PAIRS, build_iso_pair, model_forward

DEFAULT_THREADS = 4
DEFAULT_WARMUP = 50
DEFAULT_ITERS = 4000

try:
    import threadpoolctl

    _HAVE_TPC = True
except ImportError:  # recorded-only fallback
    threadpoolctl = None
    _HAVE_TPC = False


def thread_budget(threads: int | None = None) -> int:
    if threads is not None:
        if threads < 1:
            raise ConfigError(f"thread budget must be positive, got {threads}")
        return threads
    env = os.environ.get("EFFMOD_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"EFFMOD_THREADS must be an int, got {env!r}")
        if n < 1:
            raise ConfigError(f"EFFMOD_THREADS must be positive, got {n}")
        return n
    return DEFAULT_THREADS


@contextmanager
def _limit_threads(n: int):
    if _HAVE_TPC:
        with threadpoolctl.threadpool_limits(limits=n):
            yield
    else:
        yield


@dataclass
class BenchResult:
    label: str
    mean_ms: float
    std_ms: float
    p50_ms: float
    p90_ms: float
    warmup: int
    iters: int
    threads: int
    shape: tuple | None = None
    output_hash: str = ""
    samples_ms: list = field(default_factory=list, repr=False)

    @property
    def cv(self) -> float:
        return self.std_ms / self.mean_ms if self.mean_ms > 0 else 0.0

    @property
    def unstable(self) -> bool:
        return self.cv > 0.20

    def summary(self) -> str:
        flag = "  UNSTABLE(cv>20%)" if self.unstable else ""
        return (
            f"{self.label}: mean {self.mean_ms:.4f} ms, std {self.std_ms:.4f}, "
            f"p50 {self.p50_ms:.4f}, p90 {self.p90_ms:.4f} "
            f"({self.iters} iters, {self.warmup} warmup, {self.threads} threads){flag}"
        )


def _hash_output(out) -> str:
    if isinstance(out, np.ndarray):
        h = hashlib.blake2b(digest_size=16)
        h.update(str(out.dtype).encode())
        h.update(str(out.shape).encode())
        h.update(np.ascontiguousarray(out).tobytes())
        return h.hexdigest()
    return ""


def stats_from_samples(samples_ms, label="", warmup=0, threads=0, shape=None, output_hash=""):
    """Order-independent summary of a sample vector (exposed for testing)."""
    arr = np.asarray(samples_ms, dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("need at least one timed iteration")
    return BenchResult(
        label=label,
        mean_ms=float(arr.mean()),
        std_ms=float(arr.std()),
        p50_ms=float(np.percentile(arr, 50)),
        p90_ms=float(np.percentile(arr, 90)),
        warmup=warmup,
        iters=int(arr.size),
        threads=threads,
        shape=shape,
        output_hash=output_hash,
        samples_ms=[float(s) for s in arr],
    )


def bench(
    fn,
    label: str = "",
    warmup: int = DEFAULT_WARMUP,
    iters: int = DEFAULT_ITERS,
    threads: int | None = None,
    shape: tuple | None = None,
) -> BenchResult:
    """Time fn() per iteration; hashes ndarray outputs to catch nondeterminism."""
    if warmup < 0 or iters < 1:
        raise ConfigError(f"need warmup >= 0 and iters >= 1, got {warmup}/{iters}")
    n_threads = thread_budget(threads)
    samples = np.empty(iters, dtype=np.float64)
    with _limit_threads(n_threads):
        out = None
        for _ in range(warmup):
            out = fn()
        if warmup == 0:
            out = fn()  # hash reference comes from an untimed run
        ref_hash = _hash_output(out)
        for i in range(iters):
            t0 = time.perf_counter_ns()
            out = fn()
            t1 = time.perf_counter_ns()
            samples[i] = (t1 - t0) / 1e6
            if ref_hash:
                h = _hash_output(out)
                if h != ref_hash:
                    raise NumericalError(
                        f"{label or 'bench'}: nondeterministic output at iteration {i} "
                        f"(hash {h[:12]} != {ref_hash[:12]})"
                    )
    return stats_from_samples(
        samples, label=label, warmup=warmup, threads=n_threads, shape=shape, output_hash=ref_hash
    )


# ----------------------------------------------------- fusion experiment


@dataclass
class FusionBenchResult:
    repeat: BenchResult
    reshape: BenchResult

    @property
    def repeat_over_reshape(self) -> float:
        return self.repeat.mean_ms / self.reshape.mean_ms

    def summary(self) -> str:
        return "\n".join(
            [
                self.repeat.summary(),
                self.reshape.summary(),
                f"repeat/reshape mean-time ratio: {self.repeat_over_reshape:.3f}",
            ]
        )


def bench_fusion_modes(
    c: int = 144,
    expansion: int = 6,
    res: int = 14,
    warmup: int = DEFAULT_WARMUP,
    iters: int = DEFAULT_ITERS,
    threads: int | None = None,
    seed: int = 0,
) -> FusionBenchResult:
    """Time the materializing vs view-based fusion route on one block.

    Hard-fails unless the two routes produce bit-identical outputs first; the
    experiment is meaningless if they diverge.
    """
    rng = np.random.default_rng(seed)
    params = init_efficient_mod(rng, c, expansion=expansion, kernel=7, dtype=np.float32)
    x = rng.standard_normal((1, c, res, res), dtype=np.float32)

    def run(mode):
        def f():
            with no_grad():
                from .autodiff import Var

                return efficient_mod(Var(x), params, mode=mode).data

        return f

    out_repeat = run("repeat")()
    out_reshape = run("reshape")()
    if not np.array_equal(out_repeat, out_reshape):
        raise NumericalError("fusion modes disagree bitwise; refusing to benchmark")
    shape = (1, c, res, res)
    return FusionBenchResult(
        repeat=bench(run("repeat"), "fusion-repeat", warmup, iters, threads, shape),
        reshape=bench(run("reshape"), "fusion-reshape", warmup, iters, threads, shape),
    )


# ------------------------------------------------------ iso pair experiment

PAIR_WARMUP = 5
PAIR_ITERS = 30  # one iteration is a full 224^2 forward; keep the default sane


@dataclass
class PairBenchResult:
    pair: str
    results: dict  # block name -> BenchResult
    params: dict  # block name -> with-bias param count
    param_gap: float  # relative difference of the two totals

    def summary(self) -> str:
        lines = [
            f"pair {self.pair}: params "
            + ", ".join(f"{k} {v:,}" for k, v in self.params.items())
            + f" (gap {self.param_gap * 100:.2f}%)"
        ]
        lines += [r.summary() for r in self.results.values()]
        names = list(self.results)
        if len(names) == 2:
            ratio = self.results[names[0]].mean_ms / self.results[names[1]].mean_ms
            lines.append(f"{names[0]}/{names[1]} mean-time ratio: {ratio:.3f}")
        return "\n".join(lines)


def bench_pair_mbconv(
    pair: str = "iso-256-13",
    input_res: int = 224,
    warmup: int = PAIR_WARMUP,
    iters: int = PAIR_ITERS,
    threads: int | None = None,
    seed: int = 0,
) -> PairBenchResult:
    """Benchmark a parameter-matched modulation vs MBConv isotropic pair.

    Preconditions: the two members must sit within 2% of each other in
    parameters, and both must produce finite logits on a probe input, before
    any timing starts.
    """
    if pair not in ISO_PAIRS:
        raise ConfigError(f"unknown pair {pair!r}; choose from {sorted(ISO_PAIRS)}")
    em, mb = build_iso_pair(pair, seed=seed, dtype=np.float32)
    p_em = analyzer.count_params(em).total_params_with_bias
    p_mb = analyzer.count_params(mb).total_params_with_bias
    gap = abs(p_em - p_mb) / max(p_em, p_mb)
    if gap > 0.02:
        raise ConfigError(
            f"pair {pair}: parameter totals differ by {gap * 100:.2f}% (> 2%): "
            f"{p_em:,} vs {p_mb:,}"
        )
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 3, input_res, input_res), dtype=np.float32)
    results = {}
    for name, m in (("efficient_mod", em), ("mbconv", mb)):
        with no_grad():
            probe = model_forward(m, x).data
        if not np.isfinite(probe).all():
            raise NumericalError(f"pair {pair}: {name} probe produced non-finite logits")

        def f(m=m):
            with no_grad():
                return model_forward(m, x).data

        results[name] = bench(f, f"{pair}-{name}", warmup, iters, threads, x.shape)
    return PairBenchResult(
        pair=pair,
        results=results,
        params={"efficient_mod": p_em, "mbconv": p_mb},
        param_gap=gap,
    )


def bench_csv(results) -> str:
    """CSV rows for a list of BenchResult."""
    lines = ["label,mean_ms,std_ms,p50_ms,p90_ms,cv,unstable,warmup,iters,threads,shape"]
    for r in results:
        shape = "x".join(str(s) for s in r.shape) if r.shape else ""
        lines.append(
            f"{r.label},{r.mean_ms:.6f},{r.std_ms:.6f},{r.p50_ms:.6f},{r.p90_ms:.6f},"
            f"{r.cv:.4f},{int(r.unstable)},{r.warmup},{r.iters},{r.threads},{shape}"
        )
    return "\n".join(lines) + "\n"

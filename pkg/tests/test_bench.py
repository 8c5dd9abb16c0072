"""Timing harness mechanics, kept fast: tiny iteration counts throughout."""

import time

import numpy as np
import pytest

from effmod import bench as bn
from effmod.errors import ConfigError, NumericalError


def test_sleep_callable_measured_in_range():
    res = bn.bench(lambda: time.sleep(0.002), label="sleep", warmup=1, iters=5, threads=1)
    assert 1.8 <= res.mean_ms <= 4.0
    assert res.iters == 5
    assert res.warmup == 1


def test_single_iteration_result():
    res = bn.bench(lambda: None, warmup=10, iters=1, threads=1)
    assert res.iters == 1
    assert len(res.samples_ms) == 1
    assert res.std_ms == 0.0


def test_threads_recorded():
    res = bn.bench(lambda: None, warmup=0, iters=2, threads=3)
    assert res.threads == 3


def test_bench_rejects_bad_counts():
    with pytest.raises(ConfigError):
        bn.bench(lambda: None, warmup=-1, iters=5)
    with pytest.raises(ConfigError):
        bn.bench(lambda: None, warmup=0, iters=0)


def test_stats_order_independent():
    samples = [3.0, 1.0, 2.0, 5.0, 4.0]
    a = bn.stats_from_samples(samples)
    b = bn.stats_from_samples(sorted(samples))
    assert a.mean_ms == b.mean_ms
    assert a.p50_ms == b.p50_ms == 3.0
    assert a.p90_ms == b.p90_ms


def test_stats_empty_rejected():
    with pytest.raises(ConfigError):
        bn.stats_from_samples([])


def test_cv_and_instability_flag():
    steady = bn.stats_from_samples([1.0, 1.0, 1.0])
    assert steady.cv == 0.0 and not steady.unstable
    jumpy = bn.stats_from_samples([1.0, 10.0, 1.0, 10.0])
    assert jumpy.cv > 0.20 and jumpy.unstable
    assert "UNSTABLE" in jumpy.summary()


def test_nondeterministic_output_aborts():
    state = {"n": 0}

    def drifting():
        state["n"] += 1
        return np.full((3,), float(state["n"]))

    with pytest.raises(NumericalError, match="nondeterministic"):
        bn.bench(drifting, label="drift", warmup=0, iters=5, threads=1)


def test_deterministic_array_output_hashes_once():
    out = np.arange(6, dtype=np.float64)
    res = bn.bench(lambda: out, warmup=0, iters=3, threads=1)
    assert res.output_hash != ""


def test_non_array_output_skips_hashing():
    res = bn.bench(lambda: 42, warmup=0, iters=2, threads=1)
    assert res.output_hash == ""


# -------------------------------------------------------- thread budget


def test_thread_budget_explicit_wins(monkeypatch):
    monkeypatch.setenv("EFFMOD_THREADS", "9")
    assert bn.thread_budget(2) == 2


def test_thread_budget_env(monkeypatch):
    monkeypatch.delenv("EFFMOD_THREADS", raising=False)
    assert bn.thread_budget() == bn.DEFAULT_THREADS
    monkeypatch.setenv("EFFMOD_THREADS", "7")
    assert bn.thread_budget() == 7


def test_thread_budget_env_validation(monkeypatch):
    monkeypatch.setenv("EFFMOD_THREADS", "lots")
    with pytest.raises(ConfigError):
        bn.thread_budget()
    monkeypatch.setenv("EFFMOD_THREADS", "0")
    with pytest.raises(ConfigError):
        bn.thread_budget()
    with pytest.raises(ConfigError):
        bn.thread_budget(-2)


# ------------------------------------------------------------------ CSV


def test_bench_csv_layout():
    a = bn.stats_from_samples([1.0, 2.0], label="a", warmup=1, threads=2, shape=(1, 2))
    b = bn.stats_from_samples([3.0], label="b", warmup=0, threads=1)
    text = bn.bench_csv([a, b])
    lines = text.strip().split("\n")
    assert lines[0] == "label,mean_ms,std_ms,p50_ms,p90_ms,cv,unstable,warmup,iters,threads,shape"
    assert lines[1].startswith("a,1.5")
    assert len(lines) == 3


# -------------------------------------------------------------- fusion


def test_fusion_bench_small_block():
    res = bn.bench_fusion_modes(c=8, expansion=2, res=4, warmup=1, iters=3, threads=1)
    assert res.repeat.iters == 3 and res.reshape.iters == 3
    ratio = res.repeat_over_reshape
    assert np.isfinite(ratio) and ratio > 0
    assert res.repeat.output_hash == res.reshape.output_hash  # bit-equal routes
    assert "ratio" in res.summary()

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stgdat import kernels

ROOT = Path(__file__).resolve().parents[1]


def _run(code, **env):
    return subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                          env={**os.environ, **env}, check=True).stdout.strip()


def test_env_switch_forces_numpy_fallback():
    assert _run("from stgdat import kernels; print(kernels.BACKEND)", STGDAT_PURE_PYTHON="1") == "python"


@pytest.mark.skipif("cython" not in kernels.backends(), reason="extension not built")
def test_compiled_backend_is_default():
    assert _run("from stgdat import kernels; print(kernels.BACKEND)", STGDAT_PURE_PYTHON="0") == "cython"


@pytest.mark.skipif("cython" not in kernels.backends(), reason="extension not built")
def test_rollout_parity_large_batch():
    rng = np.random.default_rng(0)
    s0 = np.column_stack([rng.normal(0, 30, (500, 2)), rng.uniform(-np.pi, np.pi, 500), rng.uniform(0, 20, 500),
                          rng.uniform(-0.5, 0.5, 500)])
    u = rng.normal(0, 2, (500, 15, 2))
    b = kernels.backends()
    a = kernels.bicycle_rollout(s0, u, 0.4, 1.5, impl=b["python"])
    c = kernels.bicycle_rollout(s0, u, 0.4, 1.5, impl=b["cython"])
    np.testing.assert_allclose(a, c, rtol=0, atol=1e-10)


def test_benchmark_script_runs(tmp_path):
    out = tmp_path / "bench.json"
    subprocess.run([sys.executable, str(ROOT / "benchmarks" / "bench_kernels.py"), "--repeat", "1", "--json",
                    str(out)], check=True, capture_output=True)
    assert out.exists() and out.stat().st_size > 0

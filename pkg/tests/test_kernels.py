import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from summit import kernels

BACKENDS = [kernels.python_backend] + ([kernels.compiled_backend] if kernels.compiled_backend else [])
IDS = ["python"] + (["cython"] if kernels.compiled_backend else [])


def _rows(seed, m, n_num=2, n_cat=1, k=4, missing=0.4):
    rng = np.random.default_rng(seed)
    win = np.sort(rng.integers(0, k, size=m)).astype(np.int64)
    vals = rng.normal(size=(m, n_num + n_cat))
    vals[:, n_num:] = rng.integers(0, 3, size=(m, n_cat))
    vals[rng.random(vals.shape) < missing] = np.nan
    kinds = np.array([0] * n_num + [1] * n_cat, dtype=np.int8)
    return win, vals, kinds


def _brute_summary(win, vals, kinds, k):
    m, n = vals.shape
    out = np.full((k, n + 1), np.nan)
    for w in range(k):
        rows = np.flatnonzero(win == w)
        out[w, n] = len(rows)
        for j in range(n):
            obs = [(r, vals[r, j]) for r in rows if not np.isnan(vals[r, j])]
            if not obs:
                continue
            if kinds[j] == 0:
                out[w, j] = np.mean([v for _, v in obs])
            elif kinds[j] == 1:
                cats = [v for _, v in obs]
                best = max(cats.count(c) for c in cats)
                out[w, j] = next(c for c in cats if cats.count(c) == best)  # earliest among ties
            else:
                out[w, j] = obs[-1][1]
    return out


@pytest.mark.parametrize("be", BACKENDS, ids=IDS)
@pytest.mark.parametrize("kind", [1, 2])
def test_summarize_rows_matches_brute_force(be, kind):
    for seed in range(30):
        win, vals, kinds = _rows(seed, m=int(np.random.default_rng(seed).integers(0, 25)))
        kinds[-1] = kind
        out, mask = be.summarize_rows(win, vals, kinds, 4, 3)
        ref = _brute_summary(win, vals, kinds, 4)
        np.testing.assert_allclose(out, ref, rtol=1e-13, equal_nan=True)
        np.testing.assert_array_equal(mask, ~np.isnan(ref))
        assert out[:, -1].sum() == len(win)


@pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled extension not built")
@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 40), st.sampled_from([0, 1, 2]))
def test_backends_agree_on_summaries(seed, m, kind):
    win, vals, kinds = _rows(seed, m)
    kinds[-1] = kind
    po, pm = kernels.python_backend.summarize_rows(win, vals, kinds, 4, 3)
    co, cm = kernels.compiled_backend.summarize_rows(win, vals, kinds, 4, 3)
    np.testing.assert_array_equal(pm, cm)
    np.testing.assert_array_equal(po, co)


def _brute_pairs(t, e, r):
    conc = tied = comp = 0
    for i in range(len(t)):
        if not e[i]:
            continue
        for j in range(len(t)):
            if t[i] < t[j]:
                comp += 1
                conc += r[i] > r[j]
                tied += r[i] == r[j]
    return conc, tied, comp


@pytest.mark.parametrize("be", BACKENDS, ids=IDS)
def test_concordance_counts_match_pair_enumeration(be):
    for seed in range(40):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 60))
        t = np.sort(rng.integers(0, 10, size=n).astype(float))
        e = rng.integers(0, 2, size=n).astype(np.int64)
        r = rng.integers(0, 5, size=n).astype(np.int64)
        assert be.concordance_counts(t, e, r, 5) == _brute_pairs(t, e, r)


def test_backend_flag_is_consistent():
    assert kernels.BACKEND in ("python", "cython")
    if kernels.compiled_backend is not None:
        assert kernels.BACKEND == "cython"


def test_env_switch_forces_python_backend():
    env = {**os.environ, "SUMMIT_KERNELS": "python"}
    out = subprocess.run([sys.executable, "-c", "from summit import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"

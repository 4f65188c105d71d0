"""Numba-compiled inner loops with a pure-numpy fallback.

The Haar analysis/synthesis blocks and the separable resampler are the hot
CPU kernels of the toolkit.  Each has two interchangeable implementations:
an explicit-loop version compiled with ``numba.njit`` and a vectorized numpy
version.  Selection happens once at import time via ``OCTSYNTH_NUMBA``:

    OCTSYNTH_NUMBA=0   force the numpy path
    OCTSYNTH_NUMBA=1   require numba (ImportError if missing)
    unset              numba when importable, numpy otherwise

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("OCTSYNTH_NUMBA", "").strip()

if _FLAG == "0":
    NUMBA_ENABLED = False
else:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:
        if _FLAG == "1":
            raise
        NUMBA_ENABLED = False


# ---------------------------------------------------------------------------
# Haar 2x2 block analysis / synthesis.
#
# Block [a b; c d] maps to  ll=(a+b+c+d)/2, lh=(a+b-c-d)/2,
# hl=(a-b+c-d)/2, hh=(a-b-c+d)/2  (orthonormal, energy preserving).
# ---------------------------------------------------------------------------


def _haar_fwd_np(x: np.ndarray) -> np.ndarray:
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    out = np.empty((4, *a.shape), dtype=x.dtype)
    out[0] = (a + b + c + d) * 0.5
    out[1] = (a + b - c - d) * 0.5
    out[2] = (a - b + c - d) * 0.5
    out[3] = (a - b - c + d) * 0.5
    return out


def _haar_inv_np(coeffs: np.ndarray) -> np.ndarray:
    ll, lh, hl, hh = coeffs
    n, h2, w2 = ll.shape
    x = np.empty((n, h2 * 2, w2 * 2), dtype=ll.dtype)
    x[:, 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    x[:, 0::2, 1::2] = (ll + lh - hl - hh) * 0.5
    x[:, 1::2, 0::2] = (ll - lh + hl - hh) * 0.5
    x[:, 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return x


def _resample_axis_np(x: np.ndarray, idx: np.ndarray, wts: np.ndarray) -> np.ndarray:
    # x: (n, length), idx/wts: (out_length, taps)
    return np.einsum("not,ot->no", x[:, idx], wts)


if NUMBA_ENABLED:

    @njit(cache=True)
    def _haar_fwd_nb(x):  # pragma: no cover - exercised via dispatch
        n, h, w = x.shape
        out = np.empty((4, n, h // 2, w // 2), dtype=x.dtype)
        for k in range(n):
            for i in range(h // 2):
                for j in range(w // 2):
                    a = x[k, 2 * i, 2 * j]
                    b = x[k, 2 * i, 2 * j + 1]
                    c = x[k, 2 * i + 1, 2 * j]
                    d = x[k, 2 * i + 1, 2 * j + 1]
                    out[0, k, i, j] = (a + b + c + d) * 0.5
                    out[1, k, i, j] = (a + b - c - d) * 0.5
                    out[2, k, i, j] = (a - b + c - d) * 0.5
                    out[3, k, i, j] = (a - b - c + d) * 0.5
        return out

    @njit(cache=True)
    def _haar_inv_nb(coeffs):  # pragma: no cover
        n, h2, w2 = coeffs[0].shape
        x = np.empty((n, h2 * 2, w2 * 2), dtype=coeffs.dtype)
        for k in range(n):
            for i in range(h2):
                for j in range(w2):
                    ll = coeffs[0, k, i, j]
                    lh = coeffs[1, k, i, j]
                    hl = coeffs[2, k, i, j]
                    hh = coeffs[3, k, i, j]
                    x[k, 2 * i, 2 * j] = (ll + lh + hl + hh) * 0.5
                    x[k, 2 * i, 2 * j + 1] = (ll + lh - hl - hh) * 0.5
                    x[k, 2 * i + 1, 2 * j] = (ll - lh + hl - hh) * 0.5
                    x[k, 2 * i + 1, 2 * j + 1] = (ll - lh - hl + hh) * 0.5
        return x

    @njit(cache=True)
    def _resample_axis_nb(x, idx, wts):  # pragma: no cover
        n, _ = x.shape
        out_len, taps = idx.shape
        out = np.empty((n, out_len), dtype=x.dtype)
        for k in range(n):
            for o in range(out_len):
                acc = 0.0
                for t in range(taps):
                    acc += x[k, idx[o, t]] * wts[o, t]
                out[k, o] = acc
        return out

    haar_forward_blocks = _haar_fwd_nb
    haar_inverse_blocks = _haar_inv_nb
    resample_axis = _resample_axis_nb
else:
    haar_forward_blocks = _haar_fwd_np
    haar_inverse_blocks = _haar_inv_np
    resample_axis = _resample_axis_np

# Always-importable references for the benchmark.
numpy_impls = {
    "haar_forward": _haar_fwd_np,
    "haar_inverse": _haar_inv_np,
    "resample_axis": _resample_axis_np,
}

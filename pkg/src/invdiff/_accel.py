"""Hot numeric kernels with two interchangeable implementations.

Each kernel exists twice: a numba ``@njit`` version and a pure-NumPy/SciPy
version. The active implementation is chosen once at import time from the
``INVDIFF_BACKEND`` environment variable:

* ``auto`` (default) - numba when importable, NumPy otherwise
* ``numba``          - require numba, fail loudly if missing
* ``numpy``          - force the fallback path

``INVDIFF_THREADS`` caps the number of threads numba may use. Both
implementation families stay importable so they can be benchmarked against
each other (see ``benchmarks/bench_backends.py``).
"""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage

_BACKEND_ENV = os.environ.get("INVDIFF_BACKEND", "auto").strip().lower()
if _BACKEND_ENV not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"INVDIFF_BACKEND must be one of auto|numba|numpy, got {_BACKEND_ENV!r}"
    )

_HAVE_NUMBA = False
if _BACKEND_ENV != "numpy":
    try:
        import numba
        from numba import njit, prange

        # portable threading layer; avoids probing optional TBB/OpenMP builds
        numba.config.THREADING_LAYER = "workqueue"
        _HAVE_NUMBA = True
    except ImportError:
        if _BACKEND_ENV == "numba":
            raise RuntimeError(
                "INVDIFF_BACKEND=numba but numba is not importable"
            )

_threads = os.environ.get("INVDIFF_THREADS", "").strip()
if _threads:
    _n = max(1, int(_threads))
    if _HAVE_NUMBA:
        numba.set_num_threads(min(_n, numba.config.NUMBA_NUM_THREADS))


def thread_cap() -> int | None:
    """Thread limit requested via INVDIFF_THREADS, or None."""
    return max(1, int(_threads)) if _threads else None


def backend_name() -> str:
    """Name of the implementation family selected at import time."""
    return "numba" if _HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# direct 2D convolution, zero padded, output cropped to the input shape


def conv2_same_numpy(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Spatial-domain 2D convolution ('same' crop of the zero-padded result)."""
    return ndimage.convolve(image, kernel, mode="constant", cval=0.0)


if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _conv2_same_jit(image, kernel):  # pragma: no cover - exercised via wrapper
        m, n = image.shape
        kh, kw = kernel.shape
        rh = kh // 2
        rw = kw // 2
        out = np.zeros((m, n))
        for i in prange(m):
            for u in range(kh):
                src_i = i - (u - rh)
                if src_i < 0 or src_i >= m:
                    continue
                for v in range(kw):
                    kuv = kernel[u, v]
                    if kuv == 0.0:
                        continue
                    lo = max(0, v - rw)
                    hi = min(n, n + v - rw)
                    for j in range(lo, hi):
                        out[i, j] += kuv * image[src_i, j - (v - rw)]
        return out

    def conv2_same_numba(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        return _conv2_same_jit(
            np.ascontiguousarray(image, dtype=np.float64),
            np.ascontiguousarray(kernel, dtype=np.float64),
        )

else:
    conv2_same_numba = None

conv2_same = conv2_same_numba if _HAVE_NUMBA else conv2_same_numpy


# ---------------------------------------------------------------------------
# explicit finite-difference sweep for the 1D depth diffusion model
#
# State: free concentration c[0..nz-1] over depth (far node held at zero) and
# surface-bound amount b. Boundary at node 0 uses a ghost node eliminated via
# the flux balance -D dc/dz = kd*b - ka*c0.


def pde_sweep_numpy(c0, n_steps, dt, dz, diffusion, kappa_a, kappa_d):
    c = c0.copy()
    nz = c.shape[0]
    alpha = diffusion * dt / (dz * dz)
    bound = np.empty(n_steps + 1)
    mass = np.empty(n_steps + 1)
    b = 0.0
    interior_w = np.ones(nz)
    interior_w[0] = 0.5
    interior_w[-1] = 0.5
    bound[0] = b
    mass[0] = b + dz * float(interior_w @ c)
    cn = np.empty_like(c)
    for s in range(1, n_steps + 1):
        surf = kappa_d * b - kappa_a * c[0]
        cn[0] = c[0] + alpha * (2.0 * c[1] - 2.0 * c[0]) + (2.0 * dt / dz) * surf
        cn[1:-1] = c[1:-1] + alpha * (c[2:] - 2.0 * c[1:-1] + c[:-2])
        cn[-1] = 0.0
        b = b + dt * (kappa_a * c[0] - kappa_d * b)
        c, cn = cn, c
        bound[s] = b
        mass[s] = b + dz * float(interior_w @ c)
    return bound, mass, c


if _HAVE_NUMBA:

    @njit(cache=True)
    def _pde_sweep_jit(c0, n_steps, dt, dz, diffusion, kappa_a, kappa_d):  # pragma: no cover
        c = c0.copy()
        nz = c.shape[0]
        alpha = diffusion * dt / (dz * dz)
        bound = np.empty(n_steps + 1)
        mass = np.empty(n_steps + 1)
        b = 0.0
        acc = 0.5 * c[0] + 0.5 * c[nz - 1]
        for i in range(1, nz - 1):
            acc += c[i]
        bound[0] = b
        mass[0] = b + dz * acc
        cn = np.empty_like(c)
        for s in range(1, n_steps + 1):
            surf = kappa_d * b - kappa_a * c[0]
            cn[0] = c[0] + alpha * (2.0 * c[1] - 2.0 * c[0]) + (2.0 * dt / dz) * surf
            for i in range(1, nz - 1):
                cn[i] = c[i] + alpha * (c[i + 1] - 2.0 * c[i] + c[i - 1])
            cn[nz - 1] = 0.0
            b = b + dt * (kappa_a * c[0] - kappa_d * b)
            tmp = c
            c = cn
            cn = tmp
            acc = 0.5 * c[0] + 0.5 * c[nz - 1]
            for i in range(1, nz - 1):
                acc += c[i]
            bound[s] = b
            mass[s] = b + dz * acc
        return bound, mass, c

    def pde_sweep_numba(c0, n_steps, dt, dz, diffusion, kappa_a, kappa_d):
        return _pde_sweep_jit(
            np.ascontiguousarray(c0, dtype=np.float64),
            int(n_steps), float(dt), float(dz),
            float(diffusion), float(kappa_a), float(kappa_d),
        )

else:
    pde_sweep_numba = None

pde_sweep = pde_sweep_numba if _HAVE_NUMBA else pde_sweep_numpy


# ---------------------------------------------------------------------------
# non-negative group soft threshold applied row-wise
#
# Each row is one pixel's scale vector. Entries are first clipped to >= 0;
# the sub-vector selected by `support` is then scaled by
# max(0, 1 - thr / ||clipped sub-vector||).


def prox_rows_numpy(rows: np.ndarray, thr: float, support: np.ndarray) -> np.ndarray:
    out = np.maximum(rows, 0.0)
    if thr == 0.0:
        return out
    sub = out[:, support]
    norms = np.sqrt(np.einsum("ij,ij->i", sub, sub))
    scale = np.zeros_like(norms)
    np.divide(norms - thr, norms, out=scale, where=norms > thr)
    out[:, support] = sub * scale[:, None]
    return out


if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _prox_rows_jit(rows, thr, support_idx):  # pragma: no cover
        p, k = rows.shape
        out = np.empty_like(rows)
        ns = support_idx.shape[0]
        for i in prange(p):
            for j in range(k):
                v = rows[i, j]
                out[i, j] = v if v > 0.0 else 0.0
            if thr > 0.0:
                nrm2 = 0.0
                for s in range(ns):
                    u = out[i, support_idx[s]]
                    nrm2 += u * u
                nrm = np.sqrt(nrm2)
                scale = 0.0 if nrm <= thr else (nrm - thr) / nrm
                for s in range(ns):
                    out[i, support_idx[s]] *= scale
        return out

    def prox_rows_numba(rows: np.ndarray, thr: float, support: np.ndarray) -> np.ndarray:
        idx = np.flatnonzero(support).astype(np.int64)
        return _prox_rows_jit(
            np.ascontiguousarray(rows, dtype=np.float64), float(thr), idx
        )

else:
    prox_rows_numba = None

prox_rows = prox_rows_numba if _HAVE_NUMBA else prox_rows_numpy

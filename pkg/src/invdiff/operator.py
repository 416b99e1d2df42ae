"""Discrete scale-mixture imaging operator.

A bound-particle image is modeled as a sum over scale bins: each slice of a
scale-resolved source tensor is convolved with a pixel-integrated Gaussian
kernel for its bin and the results are added. This module builds those
kernels (exact pixel integration, Gauss-Legendre averaging across each bin)
and applies the forward map and its adjoint, with a transform-domain path for
wide kernels and a direct spatial path for narrow ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len, rfft2, irfft2

from . import _accel
from .mathcore import omega

_DIRECT_RADIUS_LIMIT = 16  # spatial convolution below, FFT above


def _fft_workers():
    return _accel.thread_cap()


@dataclass(frozen=True)
class SigmaGrid:
    """Scale-bin boundaries (pixel units) plus the signal support set.

    ``boundaries`` has K+1 strictly increasing entries starting at 0; bin k
    (1-based) covers scales between boundaries[k-1] and boundaries[k].
    ``support_set`` lists the bins whose content counts as signal; bins
    outside it absorb background and are not penalized as groups.
    """

    boundaries: np.ndarray
    support_set: tuple[int, ...]

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("boundaries needs at least two entries (K >= 1)")
        if not np.isfinite(b).all():
            raise ValueError("boundaries must be finite")
        if b[0] != 0.0:
            raise ValueError(f"first boundary must be 0, got {b[0]}")
        if not (np.diff(b) > 0).all():
            raise ValueError("boundaries must be strictly increasing")
        k = b.size - 1
        sup = tuple(sorted(set(int(s) for s in self.support_set)))
        if not sup:
            raise ValueError("support_set must not be empty")
        if sup[0] < 1 or sup[-1] > k:
            raise ValueError(f"support_set entries must lie in 1..{k}, got {sup}")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "support_set", sup)

    @property
    def n_bins(self) -> int:
        return self.boundaries.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    @property
    def sigma_max(self) -> float:
        return float(self.boundaries[-1])

    @property
    def support_mask(self) -> np.ndarray:
        m = np.zeros(self.n_bins, dtype=bool)
        m[[s - 1 for s in self.support_set]] = True
        return m


@dataclass(frozen=True)
class PsdrTensor:
    """Scale-resolved source tensor: data[m, n, k] >= 0 on an M x N image."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise ValueError(f"data must be M x N x K, got shape {d.shape}")
        if not np.isfinite(d).all():
            raise ValueError("data must be finite")
        if (d < 0).any():
            raise ValueError("data must be non-negative")
        object.__setattr__(self, "data", d)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class Observation:
    """Measured image with per-pixel confidence weights and a support mask.

    ``weights`` scale the data misfit per pixel (0 = ignore that pixel);
    ``mask`` restricts where reconstructed sources may live (binary).
    """

    data: np.ndarray
    weights: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.mask, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"data must be 2D, got shape {d.shape}")
        if w.shape != d.shape or m.shape != d.shape:
            raise ValueError("weights and mask must match the data shape")
        if not (np.isfinite(d).all() and np.isfinite(w).all()):
            raise ValueError("data and weights must be finite")
        if (w < 0).any():
            raise ValueError("weights must be non-negative")
        if not (w > 0).any():
            raise ValueError("at least one weight must be positive")
        if not np.isin(m, (0.0, 1.0)).all():
            raise ValueError("mask must be binary (0/1)")
        for name, arr in (("data", d), ("weights", w), ("mask", m)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def plain(cls, data: np.ndarray) -> "Observation":
        """Observation with unit weights and a full mask."""
        d = np.asarray(data, dtype=np.float64)
        return cls(d, np.ones_like(d), np.ones_like(d))


def kernel_radius(sigma_hi: float, psf_sigma: float) -> int:
    """Truncation radius for a bin whose top scale is ``sigma_hi``.

    Six standard deviations plus margin keep the discarded tail mass of each
    kernel below 1e-7 of its nominal mass.
    """
    return int(np.ceil(6.0 * (sigma_hi + psf_sigma))) + 2


@dataclass(frozen=True)
class KernelBank:
    """Per-bin convolution kernels, fixed after construction."""

    grid: SigmaGrid
    psf_sigma: float
    quad_order: int
    kernels: tuple[np.ndarray, ...]
    radii: tuple[int, ...]
    _plans: dict = field(default_factory=dict, repr=False, compare=False)

    def plan(self, shape: tuple[int, int]) -> dict:
        """Cached spectral data for images of the given shape."""
        key = (int(shape[0]), int(shape[1]))
        hit = self._plans.get(key)
        if hit is not None:
            return hit
        m, n = key
        rmax = max(self.radii)
        # the padded panel must hold the whole kernel and keep the circular
        # wrap of its negative lobe clear of the first m (n) samples
        pm = next_fast_len(max(m + rmax, 2 * rmax + 1))
        pn = next_fast_len(max(n + rmax, 2 * rmax + 1))
        ghat = np.empty(
            (len(self.kernels), pm, pn // 2 + 1), dtype=np.complex128
        )
        for k, (g, r) in enumerate(zip(self.kernels, self.radii)):
            buf = np.zeros((pm, pn))
            buf[: 2 * r + 1, : 2 * r + 1] = g
            buf = np.roll(buf, (-r, -r), axis=(0, 1))
            ghat[k] = rfft2(buf, workers=_fft_workers())
        plan = {"pad": (pm, pn), "ghat": ghat}
        self._plans[key] = plan
        return plan


def build_kernel_bank(
    grid: SigmaGrid, psf_sigma: float = 0.0, quad_order: int = 16
) -> KernelBank:
    """Integrate the pixel-response outer product across each scale bin.

    Kernel k is (1/sqrt(width_k)) * integral over the bin of the separable
    pixel response at scale sigma + psf_sigma, evaluated by Gauss-Legendre
    quadrature. Each kernel is exactly symmetric under axis swap and flips,
    and its total mass is sqrt(width_k) up to tail truncation.
    """
    if not (np.isfinite(psf_sigma) and psf_sigma >= 0):
        raise ValueError(f"psf_sigma must be finite and >= 0, got {psf_sigma}")
    if quad_order < 1:
        raise ValueError(f"quad_order must be >= 1, got {quad_order}")
    nodes, wts = np.polynomial.legendre.leggauss(int(quad_order))
    kernels = []
    radii = []
    b = grid.boundaries
    for k in range(grid.n_bins):
        lo, hi = b[k], b[k + 1]
        r = kernel_radius(hi, psf_sigma)
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        acc = np.zeros((2 * r + 1, 2 * r + 1))
        offsets = np.arange(-r, r + 1)
        for x, w in zip(nodes, wts):
            row = omega(float(mid + half * x) + psf_sigma, offsets)
            acc += (w * half) * np.outer(row, row)
        g = acc / np.sqrt(hi - lo)
        np.maximum(g, 0.0, out=g)
        g.setflags(write=False)
        kernels.append(g)
        radii.append(r)
    return KernelBank(
        grid=grid,
        psf_sigma=float(psf_sigma),
        quad_order=int(quad_order),
        kernels=tuple(kernels),
        radii=tuple(radii),
    )


def _tensor_data(a) -> np.ndarray:
    return a.data if isinstance(a, PsdrTensor) else np.asarray(a, dtype=np.float64)


def _split_bins(bank: KernelBank, method: str):
    if method not in ("auto", "fft", "direct"):
        raise ValueError(f"method must be auto|fft|direct, got {method!r}")
    if method == "fft":
        return [], list(range(len(bank.kernels)))
    if method == "direct":
        return list(range(len(bank.kernels))), []
    direct = [k for k, r in enumerate(bank.radii) if r <= _DIRECT_RADIUS_LIMIT]
    via_fft = [k for k, r in enumerate(bank.radii) if r > _DIRECT_RADIUS_LIMIT]
    return direct, via_fft


def forward(a, bank: KernelBank, method: str = "auto") -> np.ndarray:
    """Apply the imaging operator: sum over bins of kernel_k (*) a[:, :, k]."""
    data = _tensor_data(a)
    if data.ndim != 3 or data.shape[2] != bank.grid.n_bins:
        raise ValueError(
            f"tensor shape {data.shape} does not match the {bank.grid.n_bins}-bin bank"
        )
    m, n, _ = data.shape
    out = np.zeros((m, n))
    direct, via_fft = _split_bins(bank, method)
    for k in direct:
        out += _accel.conv2_same(data[:, :, k], bank.kernels[k])
    if via_fft:
        plan = bank.plan((m, n))
        pm, pn = plan["pad"]
        acc = np.zeros((pm, pn // 2 + 1), dtype=np.complex128)
        for k in via_fft:
            acc += rfft2(data[:, :, k], s=(pm, pn), workers=_fft_workers()) * plan["ghat"][k]
        out += irfft2(acc, s=(pm, pn), workers=_fft_workers())[:m, :n]
    return out


def adjoint(d: np.ndarray, obs: Observation, bank: KernelBank, method: str = "auto") -> np.ndarray:
    """Apply the adjoint map: per bin, mask * (kernel_k (*) (weights^2 * d)).

    Kernels are symmetric, so convolution doubles as correlation.
    """
    img = np.asarray(d, dtype=np.float64)
    if img.shape != obs.data.shape:
        raise ValueError(f"image shape {img.shape} != observation {obs.data.shape}")
    m, n = img.shape
    k_bins = bank.grid.n_bins
    out = np.empty((m, n, k_bins))
    t = obs.weights * obs.weights * img
    direct, via_fft = _split_bins(bank, method)
    for k in direct:
        out[:, :, k] = _accel.conv2_same(t, bank.kernels[k])
    if via_fft:
        plan = bank.plan((m, n))
        pm, pn = plan["pad"]
        that = rfft2(t, s=(pm, pn), workers=_fft_workers())
        for k in via_fft:
            out[:, :, k] = irfft2(
                that * plan["ghat"][k], s=(pm, pn), workers=_fft_workers()
            )[:m, :n]
    out *= obs.mask[:, :, None]
    return out


def weighted_residual_norm_sq(a, obs: Observation, bank: KernelBank) -> float:
    """Squared weighted misfit sum(weights^2 * (forward(a) - data)^2)."""
    res = forward(a, bank) - obs.data
    return float(np.sum((obs.weights * res) ** 2))


def op_norm_estimate(obs: Observation, bank: KernelBank, iters: int = 60) -> float:
    """Largest singular value of the weighted, masked operator.

    Power iteration on the normal map a -> adjoint(forward(a)). The returned
    sequence of estimates is non-decreasing in the iteration count, and the
    estimate approaches the true norm from below.
    """
    if iters < 20:
        raise ValueError(f"iters must be >= 20, got {iters}")
    m, n = obs.data.shape
    k = bank.grid.n_bins
    x = np.broadcast_to(obs.mask[:, :, None], (m, n, k)).copy()
    nx = np.linalg.norm(x)
    if nx == 0.0:
        return 0.0
    x /= nx
    lam = 0.0
    for _ in range(iters):
        y = adjoint(forward(x, bank), obs, bank)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        lam = ny
        x = y / ny
    return float(np.sqrt(lam))

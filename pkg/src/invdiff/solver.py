"""Group-sparse non-negative reconstruction.

Minimizes  sum(weights^2 * (forward(a) - data)^2)
         + lambda * sum over pixels of ||a[pixel, support]||_2
subject to a >= 0, by an accelerated proximal-gradient iteration with an
optional monotone restart. The group penalty couples the supported scale
bins at each pixel, so whole pixels switch off; bins outside the support
set are constrained to be non-negative but are not penalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .operator import (
    KernelBank,
    Observation,
    PsdrTensor,
    adjoint,
    forward,
    op_norm_estimate,
)

_STALL_STREAK = 5  # consecutive small relative changes before stopping


class SolverDivergenceError(RuntimeError):
    """Raised when the objective becomes non-finite; carries the trace."""

    def __init__(self, message: str, trace: "SolveTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    """Reconstruction settings.

    lam: group-penalty strength, >= 0
    max_iters: iteration cap, >= 1
    rel_tol: relative objective change considered a stall, > 0
    step_safety: fraction of the largest provably safe step, in (0, 1]
    restart: redo an iteration without momentum whenever it would
        increase the objective (keeps the recorded costs non-increasing)
    power_iters: power-iteration count for the operator norm, >= 20
    xi_mode: which per-bin penalty weighting to use; only "support"
        (the 0/1 indicator of the grid's support set) is available
    """

    lam: float
    max_iters: int = 500
    rel_tol: float = 1e-6
    step_safety: float = 0.95
    restart: bool = True
    power_iters: int = 60
    xi_mode: str = "support"

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lam must be finite and >= 0, got {self.lam}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (np.isfinite(self.rel_tol) and self.rel_tol > 0):
            raise ValueError(f"rel_tol must be finite and > 0, got {self.rel_tol}")
        if not (0 < self.step_safety <= 1):
            raise ValueError(f"step_safety must be in (0, 1], got {self.step_safety}")
        if self.power_iters < 20:
            raise ValueError(f"power_iters must be >= 20, got {self.power_iters}")
        if self.xi_mode != "support":
            raise ValueError(
                "only the support-indicator bin weighting is available; "
                f"got xi_mode={self.xi_mode!r}"
            )


@dataclass
class SolveTrace:
    """Per-iteration record of the reconstruction run."""

    costs: np.ndarray
    data_terms: np.ndarray
    reg_terms: np.ndarray
    steps: np.ndarray
    restarts: np.ndarray
    converged: bool
    iterations: int
    step: float
    op_norm: float

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("iter,cost,data,reg,step,restart\n")
            for i in range(self.iterations):
                fh.write(
                    f"{i + 1},{float(self.costs[i])!r},{float(self.data_terms[i])!r},"
                    f"{float(self.reg_terms[i])!r},{float(self.steps[i])!r},"
                    f"{int(self.restarts[i])}\n"
                )


def group_norm_sum(a, support_mask: np.ndarray) -> float:
    """Sum over pixels of the Euclidean norm across supported bins."""
    data = a.data if isinstance(a, PsdrTensor) else np.asarray(a, dtype=np.float64)
    sub = data[:, :, np.asarray(support_mask, dtype=bool)]
    return float(np.sqrt(np.einsum("mnk,mnk->mn", sub, sub)).sum())


def cost(a, obs: Observation, bank: KernelBank, cfg: SolverConfig):
    """Objective value as (total, data_term, reg_term).

    reg_term is the raw group-norm sum (not multiplied by lam); total is
    data + lam * reg, or +inf if the tensor violates non-negativity.
    """
    data = a.data if isinstance(a, PsdrTensor) else np.asarray(a, dtype=np.float64)
    res = forward(data, bank) - obs.data
    data_term = float(np.sum((obs.weights * res) ** 2))
    reg_term = group_norm_sum(data, bank.grid.support_mask)
    total = data_term + cfg.lam * reg_term
    if (data < 0).any():
        total = np.inf
    return total, data_term, reg_term


def grad_data(a, obs: Observation, bank: KernelBank) -> np.ndarray:
    """Gradient of the weighted data misfit: 2 * adjoint(forward(a) - data)."""
    data = a.data if isinstance(a, PsdrTensor) else np.asarray(a, dtype=np.float64)
    return 2.0 * adjoint(forward(data, bank) - obs.data, obs, bank)


def prox_group_nonneg(v: np.ndarray, threshold: float, support_mask: np.ndarray) -> np.ndarray:
    """Proximal map of the non-negative group penalty.

    Exact minimizer of  0.5 * ||x - v||^2 + threshold * ||x[support]||_2
    over x >= 0, applied independently at each pixel: negative entries are
    clipped to zero, then the supported sub-vector is shrunk toward zero by
    the threshold (vanishing entirely when its norm is below it).
    Unsupported bins are only clipped.
    """
    if not (np.isfinite(threshold) and threshold >= 0):
        raise ValueError(f"threshold must be finite and >= 0, got {threshold}")
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected an M x N x K tensor, got shape {arr.shape}")
    mask = np.ascontiguousarray(support_mask, dtype=np.bool_)
    if mask.shape != (arr.shape[2],):
        raise ValueError("support_mask length must equal the bin count")
    rows = arr.reshape(-1, arr.shape[2])
    out = _accel.prox_rows(rows, float(threshold), mask)
    return out.reshape(arr.shape)


def _check_solvable(obs: Observation, bank: KernelBank, cfg: SolverConfig) -> None:
    zero_weight = not (obs.weights > 0).all()
    partial_support = not bank.grid.support_mask.all()
    if cfg.lam == 0.0 and zero_weight and partial_support:
        raise ValueError(
            "no minimizer is guaranteed when lam == 0, some weights are zero, "
            "and some bins carry no penalty; raise lam, weight every pixel, "
            "or include every bin in the support set"
        )


def fista_solve(
    obs: Observation,
    bank: KernelBank,
    cfg: SolverConfig,
    init: np.ndarray | None = None,
    op_norm: float | None = None,
):
    """Run the accelerated proximal-gradient reconstruction.

    Returns (PsdrTensor, SolveTrace). The step is step_safety / (2 * L**2)
    with L the (given or power-iterated) operator norm. Stops early at an
    exact fixed point or after five consecutive iterations whose relative
    objective change is below rel_tol. With restart enabled the recorded
    objective never increases. A non-finite objective raises
    SolverDivergenceError with the partial trace attached.
    """
    _check_solvable(obs, bank, cfg)
    m, n = obs.data.shape
    kbins = bank.grid.n_bins
    support = bank.grid.support_mask
    if init is None:
        x = np.zeros((m, n, kbins))
    else:
        x = np.array(init, dtype=np.float64)
        if x.shape != (m, n, kbins):
            raise ValueError(f"init shape {x.shape} != {(m, n, kbins)}")
        if not np.isfinite(x).all() or (x < 0).any():
            raise ValueError("init must be finite and non-negative")
    if op_norm is None:
        op_norm = op_norm_estimate(obs, bank, cfg.power_iters)
    if not (np.isfinite(op_norm) and op_norm >= 0):
        raise ValueError(f"op_norm must be finite and >= 0, got {op_norm}")
    l_data = 2.0 * op_norm * op_norm
    step = cfg.step_safety / l_data if l_data > 0 else 1.0

    def eval_cost(tensor, fwd):
        res = fwd - obs.data
        dterm = float(np.sum((obs.weights * res) ** 2))
        rterm = group_norm_sum(tensor, support)
        return dterm + cfg.lam * rterm, dterm, rterm

    fwd_x = forward(x, bank)
    total_x, _, _ = eval_cost(x, fwd_x)
    y, fwd_y = x, fwd_x
    t_mom = 1.0
    costs, dterms, rterms, restarts = [], [], [], []
    converged = False
    iterations = 0
    streak = 0

    def make_trace():
        k = len(costs)
        return SolveTrace(
            costs=np.asarray(costs),
            data_terms=np.asarray(dterms),
            reg_terms=np.asarray(rterms),
            steps=np.full(k, step),
            restarts=np.asarray(restarts, dtype=bool),
            converged=converged,
            iterations=k,
            step=step,
            op_norm=float(op_norm),
        )

    for _ in range(cfg.max_iters):
        iterations += 1
        grad = 2.0 * adjoint(fwd_y - obs.data, obs, bank)
        z = prox_group_nonneg(y - step * grad, cfg.lam * step, support)
        fwd_z = forward(z, bank)
        total_z, dterm_z, rterm_z = eval_cost(z, fwd_z)
        restarted = False
        if cfg.restart and total_z > total_x:
            t_mom = 1.0
            grad = 2.0 * adjoint(fwd_x - obs.data, obs, bank)
            z = prox_group_nonneg(x - step * grad, cfg.lam * step, support)
            fwd_z = forward(z, bank)
            total_z, dterm_z, rterm_z = eval_cost(z, fwd_z)
            restarted = True
        costs.append(total_z)
        dterms.append(dterm_z)
        rterms.append(rterm_z)
        restarts.append(restarted)
        if not np.isfinite(total_z):
            raise SolverDivergenceError(
                f"objective became non-finite at iteration {iterations}", make_trace()
            )
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        beta = (t_mom - 1.0) / t_next
        delta = float(np.abs(z - x).max())
        y = z + beta * (z - x)
        fwd_y = fwd_z + beta * (fwd_z - fwd_x)
        rel = abs(total_z - total_x) / max(abs(total_x), np.finfo(float).tiny)
        x, fwd_x, total_x = z, fwd_z, total_z
        t_mom = t_next
        if delta == 0.0:
            converged = True
            break
        streak = streak + 1 if rel < cfg.rel_tol else 0
        if streak >= _STALL_STREAK:
            converged = True
            break

    trace = make_trace()
    trace.converged = converged
    return PsdrTensor(x), trace

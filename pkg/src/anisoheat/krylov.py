"""Krylov solvers: outer flexible GMRES, inner right-preconditioned GMRES
with the combined absolute/relative stopping rule, and preconditioned CG.

No restarting by default; iteration counts reported by SolveStats are what
the studies compare, so they must not be polluted by restart stalls.
Orthogonalization is modified Gram-Schmidt with one reorthogonalization
pass when the projected fraction exceeds a loss threshold.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

REORTH_LOSS = 1e-8


@dataclass
class SolveStats:
    """Iteration record of one linear solve."""

    iterations: int = 0
    rel_residual: float = np.inf
    abs_residual: float = np.inf
    converged: bool = False
    wall_time: float = 0.0
    residuals: List[float] = field(default_factory=list)
    inner_log: List[Tuple[str, int]] = field(default_factory=list)

    @property
    def total_inner(self) -> int:
        return sum(n for _, n in self.inner_log)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "residual"])
            for i, r in enumerate(self.residuals):
                wr.writerow([i, repr(float(r))])


def inner_tolerance(b_norm: float, base: float = 1e-3) -> float:
    """Relative tolerance min(base, base/||b||): at least three digits in
    both the relative and the absolute residual."""
    if b_norm == 0.0:
        return base
    return min(base, base / b_norm)


def _mgs_orthogonalize(w, V, k):
    """Modified Gram-Schmidt of w against V[:, :k+1], with one
    reorthogonalization pass if w lost most of its norm."""
    h = np.zeros(k + 2)
    norm0 = np.linalg.norm(w)
    for i in range(k + 1):
        hi = V[:, i] @ w
        h[i] = hi
        w -= hi * V[:, i]
    if norm0 > 0 and np.linalg.norm(w) < REORTH_LOSS * norm0:
        for i in range(k + 1):
            hi = V[:, i] @ w
            h[i] += hi
            w -= hi * V[:, i]
    h[k + 1] = np.linalg.norm(w)
    return h


def _gmres_core(op, precond, b, x0, tol_rel, max_it, flexible, restart):
    n = len(b)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, 0.0, True, 0.0, [0.0])
    t0 = time.perf_counter()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    residuals = []
    target = tol_rel * b_norm
    it_total = 0
    converged = False

    while True:
        r = b - op(x)
        beta = np.linalg.norm(r)
        if not residuals:
            residuals.append(beta)
        if beta <= target or it_total >= max_it:
            converged = beta <= target
            break
        m = min(restart, max_it - it_total)
        V = np.zeros((n, m + 1))
        Z = np.zeros((n, m)) if (flexible or precond is not None) else None
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[:, 0] = r / beta
        k_used = 0
        for k in range(m):
            z = precond(V[:, k]) if precond is not None else V[:, k]
            if Z is not None:
                Z[:, k] = z
            w = op(z)
            h = _mgs_orthogonalize(w, V, k)
            H[: k + 2, k] = h
            if h[k + 1] > 0:
                V[:, k + 1] = w / h[k + 1]
            # apply stored Givens rotations, then a new one
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            it_total += 1
            k_used = k + 1
            residuals.append(abs(g[k + 1]))
            if abs(g[k + 1]) <= target or h[k + 1] == 0.0:
                break
        if k_used > 0:
            y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used])
            if Z is not None:
                x = x + Z[:, :k_used] @ y
            else:
                x = x + V[:, :k_used] @ y
        if abs(g[k_used]) <= target:
            converged = True
            break
        if it_total >= max_it:
            break
        if k_used == 0:
            break

    r = b - op(x)
    abs_res = float(np.linalg.norm(r))
    stats = SolveStats(it_total, abs_res / b_norm, abs_res, abs_res <= target + 1e-300,
                       time.perf_counter() - t0, residuals)
    stats.converged = converged or stats.rel_residual <= tol_rel
    return x, stats


def fgmres(op: Callable, precond: Optional[Callable], b: np.ndarray,
           tol_rel: float = 1e-8, max_it: int = 500, x0=None,
           restart: Optional[int] = None) -> Tuple[np.ndarray, SolveStats]:
    """Flexible GMRES: the preconditioner may change between iterations
    (inner Krylov solves are fine). Right preconditioning, true-residual
    stopping at tol_rel * ||b||."""
    return _gmres_core(op, precond, b, x0, tol_rel,
                       max_it, True, max_it if restart is None else restart)


def gmres_right(op: Callable, precond: Optional[Callable], b: np.ndarray,
                tol_rel: Optional[float] = None, max_it: int = 400, x0=None,
                restart: Optional[int] = None) -> Tuple[np.ndarray, SolveStats]:
    """Right-preconditioned GMRES. With tol_rel=None the combined stopping
    rule min(1e-3, 1e-3/||b||) is applied."""
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(len(b)), SolveStats(0, 0.0, 0.0, True, 0.0, [0.0])
    if tol_rel is None:
        tol_rel = inner_tolerance(b_norm)
    return _gmres_core(op, precond, b, x0, tol_rel,
                       max_it, False, max_it if restart is None else restart)


def cg(op: Callable, precond: Optional[Callable], b: np.ndarray,
       tol_rel: Optional[float] = None, max_it: int = 2000,
       x0=None) -> Tuple[np.ndarray, SolveStats]:
    """Preconditioned conjugate gradients (op and precond SPD)."""
    t0 = time.perf_counter()
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(len(b)), SolveStats(0, 0.0, 0.0, True, 0.0, [0.0])
    if tol_rel is None:
        tol_rel = inner_tolerance(b_norm)
    target = tol_rel * b_norm
    x = np.zeros(len(b)) if x0 is None else np.array(x0, dtype=float)
    r = b - op(x)
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = r @ z
    residuals = [float(np.linalg.norm(r))]
    it = 0
    while residuals[-1] > target and it < max_it:
        Ap = op(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise np.linalg.LinAlgError(
                "CG breakdown: operator not positive definite on this subspace")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = precond(r) if precond is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        residuals.append(float(np.linalg.norm(r)))
    abs_res = residuals[-1]
    return x, SolveStats(it, abs_res / b_norm, abs_res, abs_res <= target,
                         time.perf_counter() - t0, residuals)

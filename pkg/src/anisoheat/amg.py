"""Algebraic multigrid on block matrices: AIR for upwind transport and
classical Ruge-Stuben AMG for SPD comparison solves.

Both variants share the hierarchy skeleton. Coarsening decisions are made
per block row (one block row per mesh cell) on a scalar graph carrying the
Frobenius norm of each block, with the classical hard-minimum strength test
w_ij >= theta * max_{k != i} w_ik. The AIR variant pairs one-point
interpolation with a distance-one local ideal restriction and undamped
F-F-C block-Jacobi post relaxation (no pre relaxation); the classical
variant uses direct interpolation on the unamalgamated scalar matrix with
R = P^T and symmetric block Gauss-Seidel pre/post sweeps.

Setup is single-threaded and seeded, so hierarchies are bit-reproducible.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .sparse import BlockCsrMatrix, apply_block_diag


@dataclass
class SocParams:
    """Strength-of-connection tolerances (coarsening and restriction)."""

    theta_c: float = 0.01
    theta_r: float = 0.25

    def __post_init__(self):
        for th in (self.theta_c, self.theta_r):
            if not (0.0 < th <= 1.0):
                raise ValueError("strength tolerances must lie in (0, 1]")


def strength(condensed: sp.csr_matrix, theta: float) -> sp.csr_matrix:
    """Strong-connection graph on the condensed block weights.

    Keeps entry (i, j), j != i, iff w_ij >= theta * max_{k != i} w_ik; the
    kept values are the weights themselves (used to rank C neighbors).
    """
    C = condensed.tocsr().copy()
    n = C.shape[0]
    rows = np.repeat(np.arange(n), np.diff(C.indptr))
    offdiag = C.indices != rows
    w = np.where(offdiag, C.data, 0.0)
    rowmax = np.zeros(n)
    np.maximum.at(rowmax, rows, w)
    keep = offdiag & (w >= theta * rowmax[rows]) & (rowmax[rows] > 0)
    C.data = np.where(keep, C.data, 0.0)
    C.eliminate_zeros()
    return C


def rs_coarsen(strong: sp.csr_matrix, second_pass: bool = True,
               seed: int = 0) -> np.ndarray:
    """Ruge-Stuben C/F splitting; returns a boolean array (True = C point).

    First pass: greedy by descending measure |S^T| with a seeded random
    tiebreak; selecting a C point turns its unassigned transpose-neighbors
    into F points and bumps the measure of their strong neighbors. Second
    pass promotes points so that every strongly connected F-F pair shares
    a strong C point (the classical interpolation condition).
    """
    n = strong.shape[0]
    S = strong.tocsr()
    ST = strong.T.tocsr()
    rng = np.random.default_rng(seed)
    tie = rng.random(n)

    measure = np.diff(ST.indptr).astype(float)
    UNASSIGNED, FPOINT, CPOINT = 0, 1, 2
    state = np.full(n, UNASSIGNED, dtype=np.int8)

    heap = [(-measure[i], tie[i], i) for i in range(n)]
    heapq.heapify(heap)

    def push(i):
        heapq.heappush(heap, (-measure[i], tie[i], i))

    while heap:
        negm, _, i = heapq.heappop(heap)
        if state[i] != UNASSIGNED or -negm != measure[i]:
            continue  # stale entry
        state[i] = CPOINT
        for j in ST.indices[ST.indptr[i]:ST.indptr[i + 1]]:
            if state[j] == UNASSIGNED:
                state[j] = FPOINT
                for k in S.indices[S.indptr[j]:S.indptr[j + 1]]:
                    if state[k] == UNASSIGNED:
                        measure[k] += 1.0
                        push(k)

    if second_pass:
        splitting = state == CPOINT
        srow = [set(S.indices[S.indptr[i]:S.indptr[i + 1]]) for i in range(n)]
        for i in range(n):
            if splitting[i]:
                continue
            ci = {j for j in srow[i] if splitting[j]}
            tentative = None
            for j in sorted(srow[i]):
                if splitting[j] or j == i:
                    continue
                if srow[j] & ci:
                    continue
                if tentative is None:
                    tentative = j
                    ci.add(j)
                else:
                    splitting[i] = True
                    tentative = None
                    break
            if tentative is not None:
                splitting[tentative] = True
        return splitting
    return state == CPOINT


def one_point_interp(splitting: np.ndarray, strong: sp.csr_matrix,
                     block_size: int) -> BlockCsrMatrix:
    """Block interpolation with a single identity block per row: C points
    map to themselves, F points to their strongest C neighbor (ties break
    to the lowest index)."""
    n = len(splitting)
    coarse_id = np.cumsum(splitting) - 1
    S = strong.tocsr()
    cols = np.empty(n, dtype=np.int64)
    for i in range(n):
        if splitting[i]:
            cols[i] = coarse_id[i]
            continue
        lo, hi = S.indptr[i], S.indptr[i + 1]
        nbrs = S.indices[lo:hi]
        wts = S.data[lo:hi]
        mask = splitting[nbrs]
        if not mask.any():
            raise ValueError(f"F point {i} has no strong C neighbor")
        nbrs, wts = nbrs[mask], wts[mask]
        best = nbrs[wts >= wts.max() - 0.0]
        cols[i] = coarse_id[best.min()] if len(best) > 1 else coarse_id[best[0]]
        # lowest index among exact ties
        tied = nbrs[wts == wts.max()]
        cols[i] = coarse_id[tied.min()]
    eye = np.broadcast_to(np.eye(block_size), (n, block_size, block_size)).copy()
    return BlockCsrMatrix.from_coo(np.arange(n), cols, eye, n, int(splitting.sum()))


def lair_restriction(A: BlockCsrMatrix, splitting: np.ndarray,
                     strong_r: sp.csr_matrix):
    """Distance-one local approximate ideal restriction.

    For each C point c with strong F neighborhood N_c, the block row of R is
    [I at c, -W on N_c] with W solving sum_j W_cj A_jk = A_ck for k in N_c.
    Numerically singular local systems are retried with a small Frobenius
    regularization and finally fall back to the one-point row; the fallback
    count is returned alongside R.
    """
    n = A.n_block_rows
    b = A.block_size
    S = strong_r.tocsr()
    cpts = np.where(splitting)[0]
    coarse_of = np.cumsum(splitting) - 1

    # block lookup helper
    def block_at(i, j):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        pos = np.searchsorted(A.indices[lo:hi], j)
        if pos < hi - lo and A.indices[lo + pos] == j:
            return A.blocks[lo + pos]
        return None

    rows, cols, blocks = [], [], []
    fallbacks = 0
    eye = np.eye(b)
    for c in cpts:
        rc = coarse_of[c]
        rows.append(rc)
        cols.append(c)
        blocks.append(eye)
        nbrs = S.indices[S.indptr[c]:S.indptr[c + 1]]
        nc = np.array(sorted(j for j in nbrs if not splitting[j]), dtype=np.int64)
        m = len(nc)
        if m == 0:
            continue
        Asub = np.zeros((m * b, m * b))
        Arow = np.zeros((b, m * b))
        for jj, j in enumerate(nc):
            blk = block_at(c, j)
            if blk is not None:
                Arow[:, jj * b:(jj + 1) * b] = blk
            for kk, k in enumerate(nc):
                blk = block_at(j, k)
                if blk is not None:
                    Asub[jj * b:(jj + 1) * b, kk * b:(kk + 1) * b] = blk
        W = _solve_local(Asub, Arow)
        if W is None:
            fallbacks += 1
            continue
        for jj, j in enumerate(nc):
            rows.append(rc)
            cols.append(j)
            blocks.append(-W[:, jj * b:(jj + 1) * b])
    R = BlockCsrMatrix.from_coo(np.array(rows), np.array(cols),
                                np.array(blocks), len(cpts), n)
    return R, fallbacks


def _solve_local(Asub, Arow):
    # W Asub = Arow  =>  Asub^T W^T = Arow^T
    try:
        W = np.linalg.solve(Asub.T, Arow.T).T
        if np.all(np.isfinite(W)):
            return W
    except np.linalg.LinAlgError:
        pass
    reg = 1e-12 * np.linalg.norm(Asub, "fro") + 1e-300
    try:
        W = np.linalg.solve(Asub.T + reg * np.eye(len(Asub)), Arow.T).T
        if np.all(np.isfinite(W)):
            return W
    except np.linalg.LinAlgError:
        pass
    return None


def direct_interp(A: BlockCsrMatrix, splitting: np.ndarray,
                  strong: sp.csr_matrix) -> BlockCsrMatrix:
    """Classical direct interpolation on the unamalgamated scalar matrix,
    with the block splitting replicated per dof (C cells interpolate all of
    their dofs; F dofs draw weights from the dofs of strong C cells)."""
    b = A.block_size
    n = A.n_block_rows
    Acsr = A.to_csr()
    N = Acsr.shape[0]
    dof_split = np.repeat(splitting, b)
    coarse_cell = np.cumsum(splitting) - 1

    # dof-level strong C mask: entry (i, j) usable iff cell(j) is a strong
    # C neighbor of cell(i)
    S = strong.tocsr()
    strong_pairs = set()
    for i in range(n):
        for j in S.indices[S.indptr[i]:S.indptr[i + 1]]:
            if splitting[j]:
                strong_pairs.add((i, j))

    indptr = Acsr.indptr
    indices = Acsr.indices
    data = Acsr.data
    prow, pcol, pval = [], [], []
    ncoarse = int(splitting.sum())
    for i in range(N):
        ci = i // b
        if dof_split[i]:
            prow.append(i)
            pcol.append(coarse_cell[ci] * b + i % b)
            pval.append(1.0)
            continue
        lo, hi = indptr[i], indptr[i + 1]
        cols = indices[lo:hi]
        vals = data[lo:hi]
        diag = 0.0
        sum_neg = sum_pos = 0.0
        csum_neg = csum_pos = 0.0
        use = np.zeros(hi - lo, dtype=bool)
        for t, (j, v) in enumerate(zip(cols, vals)):
            if j == i:
                diag = v
                continue
            if v < 0:
                sum_neg += v
            else:
                sum_pos += v
            if (ci, j // b) in strong_pairs:
                use[t] = True
                if v < 0:
                    csum_neg += v
                else:
                    csum_pos += v
        if diag == 0.0:
            raise ValueError(f"zero diagonal at dof {i} in direct interpolation")
        alpha = sum_neg / csum_neg if csum_neg != 0.0 else 0.0
        if csum_pos == 0.0:
            beta = 0.0
            diag += sum_pos  # lump positive off-diagonals
        else:
            beta = sum_pos / csum_pos
        for t, (j, v) in enumerate(zip(cols, vals)):
            if not use[t] or j == i:
                continue
            wgt = -(alpha if v < 0 else beta) * v / diag
            if wgt != 0.0:
                prow.append(i)
                pcol.append(coarse_cell[j // b] * b + j % b)
                pval.append(wgt)
    P = sp.csr_matrix((pval, (prow, pcol)), shape=(N, ncoarse * b))
    return BlockCsrMatrix.from_bsr(P.tobsr(blocksize=(b, b)))


# ---------------------------------------------------------------------------
# relaxation
# ---------------------------------------------------------------------------

def ffc_block_jacobi(A: BlockCsrMatrix, dinv: np.ndarray,
                     fmask_dof: np.ndarray, cmask_dof: np.ndarray,
                     x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Three undamped block-Jacobi sweeps over F, F, then C dofs; the
    residual is frozen within each sweep."""
    for mask in (fmask_dof, fmask_dof, cmask_dof):
        if not mask.any():
            continue
        r = rhs - A.matvec(x)
        upd = apply_block_diag(dinv, r)
        x = x + np.where(mask, upd, 0.0)
    return x


@dataclass
class AmgLevel:
    A: BlockCsrMatrix
    splitting: Optional[np.ndarray] = None
    P: Optional[BlockCsrMatrix] = None
    R: Optional[BlockCsrMatrix] = None
    dinv: Optional[np.ndarray] = None
    fmask_dof: Optional[np.ndarray] = None
    cmask_dof: Optional[np.ndarray] = None
    gs_lower = None
    gs_upper = None
    lair_fallbacks: int = 0


@dataclass
class AmgHierarchy:
    variant: str
    levels: List[AmgLevel]
    coarse_lu: tuple
    params: SocParams
    seed: int

    @property
    def n_levels(self) -> int:
        return len(self.levels) + 1

    def operator_complexity(self) -> float:
        nnz = [lvl.A.blocks.size for lvl in self.levels]
        nnz.append(self.levels[-1].A.blocks.size if not self.levels else 0)
        total = sum(lvl.A.blocks.size for lvl in self.levels) + self._coarse_nnz
        return total / self.levels[0].A.blocks.size if self.levels else 1.0

    def summary_rows(self):
        rows = []
        for k, lvl in enumerate(self.levels):
            rows.append((k, lvl.A.n_block_rows, lvl.A.block_size,
                         len(lvl.A.blocks), lvl.lair_fallbacks))
        rows.append((len(self.levels), self._coarse_rows, self._coarse_block,
                     self._coarse_nnz // (self._coarse_block ** 2), 0))
        return rows

    def write_summary(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["level", "block_rows", "block_size", "nnz_blocks",
                         "lair_fallbacks"])
            for row in self.summary_rows():
                wr.writerow(row)


def _block_tril_triu(A: BlockCsrMatrix):
    """Scalar CSR matrices of (strict lower blocks + diagonal blocks) and
    (strict upper blocks + diagonal blocks)."""
    rows = np.repeat(np.arange(A.n_block_rows), np.diff(A.indptr))
    lower_mask = A.indices <= rows
    upper_mask = A.indices >= rows

    def pick(mask):
        idx = np.where(mask)[0]
        sub = BlockCsrMatrix.from_coo(rows[idx], A.indices[idx], A.blocks[idx],
                                      A.n_block_rows, A.n_block_cols)
        return sub.to_csr().tocsc()

    return pick(lower_mask), pick(upper_mask)


def build_hierarchy(A: BlockCsrMatrix, variant: str = "air",
                    params: Optional[SocParams] = None,
                    max_coarse: int = 64, max_levels: int = 25,
                    seed: int = 0) -> AmgHierarchy:
    """Set up an AIR or classical hierarchy down to a dense coarsest solve."""
    if variant not in ("air", "classical"):
        raise ValueError("variant must be 'air' or 'classical'")
    params = params or SocParams()
    levels: List[AmgLevel] = []
    current = A
    while current.n_block_rows > max_coarse and len(levels) < max_levels:
        cond = current.condense()
        Sc = strength(cond, params.theta_c)
        splitting = rs_coarsen(Sc, second_pass=True, seed=seed)
        nc = int(splitting.sum())
        if nc == 0 or nc == current.n_block_rows:
            break  # cannot coarsen further
        lvl = AmgLevel(A=current, splitting=splitting)
        b = current.block_size
        lvl.P = one_point_interp(splitting, Sc, b)
        if variant == "air":
            Sr = strength(cond, params.theta_r)
            lvl.R, lvl.lair_fallbacks = lair_restriction(current, splitting, Sr)
            lvl.dinv = current.block_diag_inverse()
            lvl.fmask_dof = np.repeat(~splitting, b)
            lvl.cmask_dof = np.repeat(splitting, b)
        else:
            lvl.P = direct_interp(current, splitting, Sc)
            lvl.R = lvl.P.transpose()
            low, up = _block_tril_triu(current)
            lvl.gs_lower = spla.splu(low, permc_spec="NATURAL")
            lvl.gs_upper = spla.splu(up, permc_spec="NATURAL")
        levels.append(lvl)
        current = (lvl.R @ lvl.A) @ lvl.P
    dense = current.toarray()
    coarse_lu = scipy.linalg.lu_factor(dense)
    hier = AmgHierarchy(variant, levels, coarse_lu, params, seed)
    hier._coarse_rows = current.n_block_rows
    hier._coarse_block = current.block_size
    hier._coarse_nnz = dense.size
    hier._coarse_A = current
    return hier


def _vcycle(hier: AmgHierarchy, k: int, rhs: np.ndarray,
            x: np.ndarray) -> np.ndarray:
    if k == len(hier.levels):
        return scipy.linalg.lu_solve(hier.coarse_lu, rhs)
    lvl = hier.levels[k]
    A = lvl.A
    if hier.variant == "classical":
        # symmetric block Gauss-Seidel pre-smoothing
        x = x + lvl.gs_lower.solve(rhs - A.matvec(x))
        x = x + lvl.gs_upper.solve(rhs - A.matvec(x))
    r = rhs - A.matvec(x)
    ec = _vcycle(hier, k + 1, lvl.R.matvec(r),
                 np.zeros(lvl.R.shape[0]))
    x = x + lvl.P.matvec(ec)
    if hier.variant == "air":
        x = ffc_block_jacobi(A, lvl.dinv, lvl.fmask_dof, lvl.cmask_dof, x, rhs)
    else:
        x = x + lvl.gs_lower.solve(rhs - A.matvec(x))
        x = x + lvl.gs_upper.solve(rhs - A.matvec(x))
    return x


def vcycle(hier: AmgHierarchy, rhs: np.ndarray,
           x0: Optional[np.ndarray] = None) -> np.ndarray:
    """One V cycle: V(0,1) with FFC post relaxation for AIR, V(1,1) with
    symmetric block Gauss-Seidel for the classical variant."""
    x = np.zeros(len(rhs)) if x0 is None else np.asarray(x0, dtype=float)
    return _vcycle(hier, 0, np.asarray(rhs, dtype=float), x)


def preconditioner(hier: AmgHierarchy):
    """Single-cycle preconditioner callable for Krylov acceleration."""
    def apply(r):
        return vcycle(hier, r)
    return apply

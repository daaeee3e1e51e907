"""Block CSR matrices with dense cell-sized blocks.

One block row per mesh cell, so AMG coarsening decisions act on whole
elements. Storage and the heavy kernels (matvec, transpose, matmat) are
delegated to scipy's BSR format; this module pins down the exact contract
the rest of the package relies on (sorted unique column indices, exact
transpose round trip, per-block dense factorizations, Frobenius
condensation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.io


class SingularBlockError(Exception):
    """A diagonal block (reported by block row index) is not invertible."""

    def __init__(self, block_row: int):
        self.block_row = block_row
        super().__init__(f"singular diagonal block at block row {block_row}")


@dataclass
class BlockCsrMatrix:
    """Sparse matrix of dense b x b blocks in CSR layout over block rows.

    Attributes
    ----------
    indptr : (n_block_rows + 1,) int array
    indices : (n_blocks,) int array, sorted and unique within each row
    blocks : (n_blocks, b, b) float array
    n_block_cols : int
    """

    indptr: np.ndarray
    indices: np.ndarray
    blocks: np.ndarray
    n_block_cols: int

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.blocks = np.ascontiguousarray(self.blocks, dtype=np.float64)
        if self.blocks.ndim != 3 or self.blocks.shape[1] != self.blocks.shape[2]:
            raise ValueError("blocks must have shape (nnz, b, b)")
        if self.indptr[-1] != len(self.indices) or len(self.indices) != len(self.blocks):
            raise ValueError("inconsistent block CSR structure")

    @property
    def block_size(self) -> int:
        return self.blocks.shape[1]

    @property
    def n_block_rows(self) -> int:
        return len(self.indptr) - 1

    @property
    def shape(self) -> tuple:
        b = self.block_size
        return (self.n_block_rows * b, self.n_block_cols * b)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_coo(cls, rows, cols, blocks, n_block_rows, n_block_cols):
        """Build from block-COO triplets, summing duplicate (row, col) blocks.

        Deterministic: duplicates are accumulated with np.add.at in input
        order, and the result is sorted by (row, col).
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        blocks = np.asarray(blocks, dtype=np.float64)
        if len(rows) == 0:
            b = blocks.shape[1] if blocks.ndim == 3 else 1
            return cls(np.zeros(n_block_rows + 1, dtype=np.int64),
                       np.zeros(0, dtype=np.int64),
                       np.zeros((0, b, b)), n_block_cols)
        keys = rows * n_block_cols + cols
        uniq, inv = np.unique(keys, return_inverse=True)
        acc = np.zeros((len(uniq),) + blocks.shape[1:])
        np.add.at(acc, inv, blocks)
        urows = uniq // n_block_cols
        ucols = uniq % n_block_cols
        indptr = np.zeros(n_block_rows + 1, dtype=np.int64)
        np.add.at(indptr, urows + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(indptr, ucols, acc, n_block_cols)

    @classmethod
    def from_bsr(cls, A: sp.bsr_matrix) -> "BlockCsrMatrix":
        A = A.tobsr()
        A.sort_indices()
        A.sum_duplicates()
        b = A.blocksize[0]
        if A.blocksize[0] != A.blocksize[1]:
            raise ValueError("square blocks required")
        return cls(A.indptr.astype(np.int64), A.indices.astype(np.int64),
                   A.data.astype(np.float64), A.shape[1] // b)

    @classmethod
    def block_identity(cls, n_block_rows: int, block_size: int) -> "BlockCsrMatrix":
        eye = np.broadcast_to(np.eye(block_size), (n_block_rows, block_size, block_size))
        return cls(np.arange(n_block_rows + 1), np.arange(n_block_rows),
                   eye.copy(), n_block_rows)

    # -- views ------------------------------------------------------------

    def to_bsr(self) -> sp.bsr_matrix:
        b = self.block_size
        return sp.bsr_matrix((self.blocks, self.indices, self.indptr),
                             shape=self.shape, blocksize=(b, b))

    def to_csr(self) -> sp.csr_matrix:
        return self.to_bsr().tocsr()

    def toarray(self) -> np.ndarray:
        return self.to_bsr().toarray()

    # -- kernels ----------------------------------------------------------

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_bsr() @ np.asarray(x, dtype=np.float64)

    def __matmul__(self, other):
        if isinstance(other, BlockCsrMatrix):
            prod = (self.to_csr() @ other.to_csr()).tobsr(
                blocksize=(self.block_size, other.block_size))
            return BlockCsrMatrix.from_bsr(prod)
        return self.matvec(other)

    def transpose(self) -> "BlockCsrMatrix":
        return BlockCsrMatrix.from_bsr(self.to_bsr().transpose().tobsr())

    def scaled(self, alpha: float) -> "BlockCsrMatrix":
        return BlockCsrMatrix(self.indptr, self.indices, alpha * self.blocks,
                              self.n_block_cols)

    def add(self, other: "BlockCsrMatrix") -> "BlockCsrMatrix":
        if self.shape != other.shape or self.block_size != other.block_size:
            raise ValueError("shape mismatch")
        out = (self.to_bsr() + other.to_bsr()).tobsr(
            blocksize=(self.block_size, self.block_size))
        return BlockCsrMatrix.from_bsr(out)

    def diagonal_blocks(self) -> np.ndarray:
        """Dense (n, b, b) array of diagonal blocks; absent blocks are zero."""
        n, b = self.n_block_rows, self.block_size
        out = np.zeros((n, b, b))
        for i in range(n):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            hit = np.searchsorted(self.indices[lo:hi], i)
            if hit < hi - lo and self.indices[lo + hit] == i:
                out[i] = self.blocks[lo + hit]
        return out

    def block_diag_inverse(self) -> np.ndarray:
        """Invert every diagonal block by dense LU.

        Returns (n, b, b). Raises SingularBlockError naming the offending
        block row.
        """
        diags = self.diagonal_blocks()
        try:
            return np.linalg.inv(diags)
        except np.linalg.LinAlgError:
            for i, d in enumerate(diags):
                try:
                    np.linalg.inv(d)
                except np.linalg.LinAlgError:
                    raise SingularBlockError(i) from None
            raise

    def condense(self) -> sp.csr_matrix:
        """Scalar CSR over block rows carrying per-block Frobenius norms.

        The sparsity pattern is identical to the block matrix (explicit
        zero-norm blocks are kept).
        """
        w = np.sqrt(np.einsum("kij,kij->k", self.blocks, self.blocks))
        return sp.csr_matrix((w, self.indices.copy(), self.indptr.copy()),
                             shape=(self.n_block_rows, self.n_block_cols))

    def frobenius(self) -> float:
        return float(np.sqrt(np.einsum("kij,kij->", self.blocks, self.blocks)))


def matvec(A: BlockCsrMatrix, x: np.ndarray) -> np.ndarray:
    return A.matvec(x)


def transpose(A: BlockCsrMatrix) -> BlockCsrMatrix:
    return A.transpose()


def block_diag_inverse(A: BlockCsrMatrix) -> np.ndarray:
    return A.block_diag_inverse()


def condense(A: BlockCsrMatrix) -> sp.csr_matrix:
    return A.condense()


def apply_block_diag(diags: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y_i = D_i x_i for stacked (n, b, b) blocks and a flat vector."""
    n, b, _ = diags.shape
    return np.einsum("nij,nj->ni", diags, x.reshape(n, b)).ravel()


def write_matrix_market(A: BlockCsrMatrix, path: str) -> None:
    """Write scalar-entry Matrix Market plus a .blocks.json sidecar header."""
    scipy.io.mmwrite(path, A.to_csr().tocoo())
    with open(str(path) + ".blocks.json", "w") as fh:
        json.dump({"block_size": A.block_size,
                   "n_block_rows": A.n_block_rows,
                   "n_block_cols": A.n_block_cols}, fh)


def read_matrix_market(path: str) -> BlockCsrMatrix:
    with open(str(path) + ".blocks.json") as fh:
        meta = json.load(fh)
    A = scipy.io.mmread(path).tocsr()
    b = meta["block_size"]
    return BlockCsrMatrix.from_bsr(A.tobsr(blocksize=(b, b)))

"""Tensor-product scalar DG spaces on triangles and prisms.

The element is nodal Lagrange on an equispaced lattice: dP_k on triangles,
and dP_k (triangle) x dP_k (interval) on prisms (18 dofs per cell at k=2).
Bases are built from monomial Vandermonde inversion, so any order the
lattice supports works; cells are affine so reference basis tables are
shared by all cells.

Quadrature is exact to degree 2k+2 by construction (Gauss-Jacobi/Duffy on
the triangle, Gauss-Legendre on the interval, tensor products elsewhere).
The magnetic field is evaluated pointwise at quadrature nodes; integrals
involving the unit field b are therefore quadrature approximations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import ceil
from typing import Callable, Optional

import numpy as np
from scipy.special import roots_jacobi

from .mesh import BaseMesh2d, PrismMesh


class SingularFieldError(Exception):
    """|B| vanished at a quadrature point (upwinding undefined there)."""


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_rule(degree: int):
    """Collapsed-coordinate rule on the reference triangle, exact to degree.

    Duffy map x=u, y=v(1-u) with the (1-u) Jacobian absorbed into a
    Gauss-Jacobi rule, so polynomial exactness is genuine (not asymptotic).
    """
    n = max(1, ceil((degree + 1) / 2))
    tu, wu = roots_jacobi(n, 1.0, 0.0)          # weight (1-t) on [-1,1]
    u = 0.5 * (tu + 1.0)
    wu = wu / 4.0                               # maps weight (1-u) on [0,1]
    v, wv = gauss01(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    w = np.outer(wu, wv).ravel()
    return pts, w


def interval_rule(degree: int):
    n = max(1, ceil((degree + 1) / 2))
    return gauss01(n)


def prism_rule(degree: int):
    pt, wt = triangle_rule(degree)
    pz, wz = interval_rule(degree)
    nt, nz = len(wt), len(wz)
    pts = np.zeros((nt * nz, 3))
    pts[:, :2] = np.repeat(pt, nz, axis=0)
    pts[:, 2] = np.tile(pz, nt)
    return pts, np.outer(wt, wz).ravel()


# ---------------------------------------------------------------------------
# nodal Lagrange bases from monomial Vandermonde
# ---------------------------------------------------------------------------

class _MonomialBasis:
    def __init__(self, exponents: np.ndarray, nodes: np.ndarray):
        self.exponents = exponents
        self.nodes = nodes
        V = self._monomials(nodes)
        self.coeffs = np.linalg.inv(V)   # column m = coefficients of phi_m

    def _monomials(self, pts):
        pts = np.atleast_2d(pts)
        out = np.ones((len(pts), len(self.exponents)))
        for d in range(pts.shape[1]):
            out *= pts[:, d, None] ** self.exponents[None, :, d]
        return out

    def _monomial_grads(self, pts):
        pts = np.atleast_2d(pts)
        m, dim = pts.shape
        nmono = len(self.exponents)
        out = np.zeros((m, nmono, dim))
        for d in range(dim):
            e = self.exponents[:, d]
            fac = np.where(e > 0, e, 0.0)
            pw = np.where(e > 0, e - 1, 0)
            term = fac[None, :] * pts[:, d, None] ** pw[None, :]
            for dd in range(dim):
                if dd != d:
                    term = term * pts[:, dd, None] ** self.exponents[None, :, dd]
            out[:, :, d] = term
        return out

    def eval(self, pts):
        """values (m, nb) and reference gradients (m, nb, dim)."""
        return (self._monomials(pts) @ self.coeffs,
                np.einsum("med,en->mnd", self._monomial_grads(pts), self.coeffs))


def triangle_element(k: int) -> _MonomialBasis:
    exps, nodes = [], []
    for j in range(k + 1):
        for i in range(k + 1 - j):
            exps.append((i, j))
            nodes.append((i / k, j / k) if k > 0 else (1 / 3, 1 / 3))
    return _MonomialBasis(np.array(exps), np.array(nodes, dtype=float))


def interval_element(k: int) -> _MonomialBasis:
    exps = np.arange(k + 1)[:, None]
    nodes = (np.arange(k + 1, dtype=float) / max(k, 1))[:, None]
    return _MonomialBasis(exps, nodes)


def prism_element(k: int) -> _MonomialBasis:
    tri = triangle_element(k)
    zed = interval_element(k)
    exps, nodes = [], []
    for (ex, ey), nt in zip(tri.exponents, tri.nodes):
        for ez, nz in zip(zed.exponents, zed.nodes):
            exps.append((ex, ey, ez[0]))
            nodes.append((nt[0], nt[1], nz[0]))
    return _MonomialBasis(np.array(exps), np.array(nodes, dtype=float))


_TRI_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_TRI_LOCAL_EDGES = [(0, 1), (1, 2), (2, 0)]


# ---------------------------------------------------------------------------
# the DG space
# ---------------------------------------------------------------------------

@dataclass
class TraceTables:
    """Basis traces for one facet family at shared facet quadrature points."""

    weights: np.ndarray          # (nq,)
    values: np.ndarray           # (n_tables, nq, nb)
    grads: np.ndarray            # (n_tables, nq, nb, dim)
    ref_points: np.ndarray       # (n_tables, nq, dim)


class DgSpace:
    """Fully discontinuous nodal space over a BaseMesh2d or PrismMesh.

    Global dof g = cell * dofs_per_cell + local; no dof is shared between
    cells. Basis tables at volume and facet quadrature points are
    precomputed once and immutable.
    """

    def __init__(self, mesh, order: int = 2, quad_degree: Optional[int] = None):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.mesh = mesh
        self.order = order
        self.quad_degree = quad_degree if quad_degree is not None else 2 * order + 2
        self.dim = mesh.dim

        if self.dim == 2:
            self.element = triangle_element(order)
            self.qpoints, self.qweights = triangle_rule(self.quad_degree)
        else:
            self.element = prism_element(order)
            self.qpoints, self.qweights = prism_rule(self.quad_degree)

        self.dofs_per_cell = len(self.element.nodes)
        self.n_cells = mesh.n_cells
        self.n_dofs = self.n_cells * self.dofs_per_cell

        self.basis_values, self.basis_grads = self.element.eval(self.qpoints)

        origins, J = mesh.cell_maps()
        self.cell_origins = origins
        self.cell_jacobians = J
        self.cell_jinv = np.linalg.inv(J)
        self.cell_detj = np.linalg.det(J)
        if np.any(self.cell_detj <= 0):
            raise ValueError("cells must be positively oriented")

        self.interior_batches, self.boundary_batches = mesh.facet_batches()
        self._trace_tables = {}
        for fam in {b.family for b in self.interior_batches + self.boundary_batches}:
            self._trace_tables[fam] = self._build_trace_tables(fam)

        # reference mass and its inverse (shared by all cells up to detJ)
        w = self.qweights
        self.ref_mass = np.einsum("q,qi,qj->ij", w, self.basis_values, self.basis_values)
        self._proj = np.linalg.solve(self.ref_mass, self.basis_values.T * w)

    # -- geometry helpers ---------------------------------------------------

    def cell_points(self, ref_pts: np.ndarray, cells=None) -> np.ndarray:
        """Map reference points into physical cells: (nc, nq, dim)."""
        J = self.cell_jacobians if cells is None else self.cell_jacobians[cells]
        o = self.cell_origins if cells is None else self.cell_origins[cells]
        return o[:, None, :] + np.einsum("cde,qe->cqd", J, ref_pts)

    def quad_points(self) -> np.ndarray:
        return self.cell_points(self.qpoints)

    # -- trace tables --------------------------------------------------------

    def _build_trace_tables(self, family: str) -> TraceTables:
        deg = self.quad_degree
        if family == "edge":
            t, wt = interval_rule(deg)
            ref = np.zeros((6, len(t), 2))
            for le, (a, b) in enumerate(_TRI_LOCAL_EDGES):
                ra, rb = _TRI_REF_VERTS[a], _TRI_REF_VERTS[b]
                ref[2 * le + 0] = (1 - t)[:, None] * ra + t[:, None] * rb
                ref[2 * le + 1] = (1 - t)[:, None] * rb + t[:, None] * ra
            weights = wt
        elif family == "vertical":
            t, wt = interval_rule(deg)
            z, wz = interval_rule(deg)
            ntq, nzq = len(t), len(z)
            ref = np.zeros((6, ntq * nzq, 3))
            for le, (a, b) in enumerate(_TRI_LOCAL_EDGES):
                ra, rb = _TRI_REF_VERTS[a], _TRI_REF_VERTS[b]
                for flip in (0, 1):
                    tt = t if flip == 0 else 1 - t
                    edge_pts = (1 - tt)[:, None] * ra + tt[:, None] * rb
                    ref[2 * le + flip, :, :2] = np.repeat(edge_pts, nzq, axis=0)
                    ref[2 * le + flip, :, 2] = np.tile(z, ntq)
            weights = np.outer(wt, wz).ravel()
        elif family == "horizontal":
            pt, wt = triangle_rule(deg)
            ref = np.zeros((2, len(wt), 3))
            ref[0, :, :2] = pt
            ref[1, :, :2] = pt
            ref[1, :, 2] = 1.0
            weights = wt
        else:
            raise ValueError(f"unknown facet family {family}")

        n_tab, nq, _ = ref.shape
        vals = np.zeros((n_tab, nq, self.dofs_per_cell))
        grads = np.zeros((n_tab, nq, self.dofs_per_cell, self.dim))
        for it in range(n_tab):
            vals[it], grads[it] = self.element.eval(ref[it])
        return TraceTables(weights, vals, grads, ref)

    def trace_tables(self, family: str) -> TraceTables:
        return self._trace_tables[family]

    def facet_points(self, batch) -> np.ndarray:
        """Physical facet quadrature points via the plus side: (nf, nq, dim)."""
        tab = self._trace_tables[batch.family]
        ref = tab.ref_points[batch.trace_plus]          # (nf, nq, dim)
        J = self.cell_jacobians[batch.plus_cell]
        o = self.cell_origins[batch.plus_cell]
        return o[:, None, :] + np.einsum("fde,fqe->fqd", J, ref)

    # -- fields ---------------------------------------------------------------

    def project(self, f: Callable) -> "FieldVector":
        """Exact per-cell L2 projection (mass is block diagonal)."""
        fv = np.asarray(f(self.quad_points().reshape(-1, self.dim)), dtype=float)
        fv = fv.reshape(self.n_cells, len(self.qweights))
        return FieldVector(self, (fv @ self._proj.T).ravel())

    def l2_norm(self, values_at_quad: np.ndarray) -> float:
        s = np.einsum("cq,q,c->", values_at_quad ** 2, self.qweights, self.cell_detj)
        return float(np.sqrt(s))

    def eval_at_quad(self, coeffs: np.ndarray) -> np.ndarray:
        u = coeffs.reshape(self.n_cells, self.dofs_per_cell)
        return u @ self.basis_values.T

    def l2_error(self, u: "FieldVector", exact: Callable) -> float:
        """Relative L2 error against a callable, by volume quadrature."""
        ex = np.asarray(exact(self.quad_points().reshape(-1, self.dim)), dtype=float)
        ex = ex.reshape(self.n_cells, len(self.qweights))
        nrm = self.l2_norm(ex)
        if nrm == 0.0:
            raise ValueError("reference function has zero L2 norm")
        return self.l2_norm(self.eval_at_quad(u.values) - ex) / nrm


@dataclass
class FieldVector:
    """Coefficient vector over a DgSpace (one value per global dof)."""

    space: DgSpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.space.n_dofs,):
            raise ValueError("coefficient length must equal space dimension")

    def copy(self) -> "FieldVector":
        return FieldVector(self.space, self.values.copy())

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["dof", "value"])
            for i, v in enumerate(self.values):
                wr.writerow([i, repr(float(v))])

    @classmethod
    def read_csv(cls, space: DgSpace, path: str) -> "FieldVector":
        vals = np.zeros(space.n_dofs)
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            next(rd)
            for row in rd:
                vals[int(row[0])] = float(row[1])
        return cls(space, vals)


class MagneticField:
    """Analytic magnetic field; the unit direction b = B/|B| is evaluated
    pointwise at quadrature nodes. A vanishing |B| raises SingularFieldError
    naming the offending point."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray]):
        self.func = func

    def raw(self, points: np.ndarray, cells=None) -> np.ndarray:
        return np.asarray(self.func(points), dtype=float)

    def unit(self, points: np.ndarray, cells=None) -> np.ndarray:
        B = self.raw(points, cells)
        norm = np.linalg.norm(B, axis=-1)
        bad = ~(norm > 0)
        if np.any(bad):
            where = points[np.argmax(bad)]
            raise SingularFieldError(
                f"|B| = 0 at quadrature point {np.array2string(where, precision=6)}")
        return B / norm[..., None]


class CellwiseMagneticField(MagneticField):
    """Field evaluated per (point, owning cell); lets tests exercise
    fields whose normal component jumps across facets."""

    def __init__(self, func: Callable[[np.ndarray, np.ndarray], np.ndarray]):
        self.func = func

    def raw(self, points: np.ndarray, cells=None) -> np.ndarray:
        if cells is None:
            raise ValueError("cellwise field needs owning cell indices")
        cells = np.broadcast_to(np.asarray(cells), points.shape[:-1])
        return np.asarray(self.func(points, cells), dtype=float)

"""Operator and right-hand-side assembly for the mixed upwind-DG scheme.

Conventions used throughout:

* matrix entry (i, j) pairs test function i (row) with trial function j
  (column); all matrices are BlockCsrMatrix with one block row per cell.
* on a facet the stored normal is the plus side's outward normal n+, and
  every jump is taken against that fixed normal:
  [[psi b.n]] = (psi+ b+ - psi- b-) . n+.
* the upwind trace of the transport form's first argument takes the plus
  side where b+.n+ < 0 and the minus side otherwise, decided per quadrature
  point; boundary in/outflow is likewise classified pointwise by sign(b.n).
* conductivity factors are kept out of the operators: the transport matrix
  carries unit sqrt(kappa_delta) and the interior-penalty Laplacian unit
  kappa_perp, so solver-side scalings are exact scalar multiplications.

The transport bilinear form is
    l(theta; phi) = -<theta b, grad phi>
                    + int_Gamma [[phi b.n]] theta_up dS
                    + int_{outflow} phi (b.n) theta dS,
assembled either with theta as the trial function (the temperature row,
where the auxiliary flux is transported) or with theta as the test function
(the constraint row). The two assemblies are independent code paths; their
discrete adjointness is a test, not a construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .sparse import BlockCsrMatrix
from .space import DgSpace, FieldVector, MagneticField

_CHUNK = 4096


def _chunks(n, size=_CHUNK):
    for lo in range(0, n, size):
        yield slice(lo, min(lo + size, n))


# ---------------------------------------------------------------------------
# block scatter helpers
# ---------------------------------------------------------------------------

class _BlockAccumulator:
    def __init__(self, space: DgSpace):
        self.space = space
        self.rows = []
        self.cols = []
        self.blocks = []

    def add(self, rows, cols, blocks):
        if len(rows) == 0:
            return
        self.rows.append(np.asarray(rows))
        self.cols.append(np.asarray(cols))
        self.blocks.append(blocks)

    def build(self) -> BlockCsrMatrix:
        n = self.space.n_cells
        b = self.space.dofs_per_cell
        if not self.rows:
            return BlockCsrMatrix(np.zeros(n + 1, dtype=np.int64),
                                  np.zeros(0, dtype=np.int64),
                                  np.zeros((0, b, b)), n)
        return BlockCsrMatrix.from_coo(np.concatenate(self.rows),
                                       np.concatenate(self.cols),
                                       np.concatenate(self.blocks), n, n)


def _facet_quadrature(space, batch, sl):
    """Weights (nf, nq) including the facet area element, and plus-side
    physical points for a chunk of a facet batch."""
    tab = space.trace_tables(batch.family)
    w = batch.scale[sl, None] * tab.weights[None, :]
    pts = space.facet_points_chunk(batch, sl)
    return tab, w, pts


# facet point evaluation for a chunk; attached here to keep space.py lean
def _facet_points_chunk(self, batch, sl):
    tab = self.trace_tables(batch.family)
    ref = tab.ref_points[batch.trace_plus[sl]]
    J = self.cell_jacobians[batch.plus_cell[sl]]
    o = self.cell_origins[batch.plus_cell[sl]]
    return o[:, None, :] + np.einsum("fde,fqe->fqd", J, ref)


DgSpace.facet_points_chunk = _facet_points_chunk


def _unit_field_on_facet(field, pts, cells):
    nf, nq, dim = pts.shape
    cellmap = np.broadcast_to(cells[:, None], (nf, nq))
    return field.unit(pts.reshape(-1, dim), cells=cellmap.reshape(-1)).reshape(nf, nq, dim)


def _trace_values(tab, codes):
    return tab.values[codes]


def _trace_phys_grads(space, tab, codes, cells):
    """Physical gradients of all basis traces: (nf, nq, nb, dim)."""
    gref = tab.grads[codes]
    jinv = space.cell_jinv[cells]
    return np.einsum("fqie,fed->fqid", gref, jinv)


def _trace_b_grads(space, tab, codes, cells, b):
    """b . grad(phi) traces: (nf, nq, nb)."""
    gref = tab.grads[codes]
    jinv = space.cell_jinv[cells]
    bref = np.einsum("fqd,fed->fqe", b, jinv)
    return np.einsum("fqe,fqie->fqi", bref, gref)


# ---------------------------------------------------------------------------
# mass matrices
# ---------------------------------------------------------------------------

def assemble_mass(space: DgSpace) -> BlockCsrMatrix:
    """Block-diagonal mass matrix M_ij = <phi_i, phi_j>."""
    blocks = space.cell_detj[:, None, None] * space.ref_mass[None, :, :]
    idx = np.arange(space.n_cells)
    acc = _BlockAccumulator(space)
    acc.add(idx, idx, blocks)
    return acc.build()


def assemble_boundary_mass(space: DgSpace, weight: str = "he",
                           field: Optional[MagneticField] = None,
                           side: str = "all") -> BlockCsrMatrix:
    """Boundary mass sum_f int_f w phi_i phi_j dS.

    weight is "he", "he_inv" or "one"; with field given, the integrand is
    additionally multiplied by b.n and restricted to the requested side
    ("in": b.n < 0, "out": b.n > 0, "all").
    """
    acc = _BlockAccumulator(space)
    for batch in space.boundary_batches:
        for sl in _chunks(len(batch)):
            tab, w, pts = _facet_quadrature(space, batch, sl)
            w = w * _he_weight(batch.he[sl], weight)[:, None]
            if field is not None:
                b = _unit_field_on_facet(field, pts, batch.plus_cell[sl])
                bn = np.einsum("fqd,fd->fq", b, batch.normal[sl])
                w = w * bn * _side_mask(bn, side)
            V = _trace_values(tab, batch.trace_plus[sl])
            blocks = np.einsum("fq,fqi,fqj->fij", w, V, V)
            acc.add(batch.plus_cell[sl], batch.plus_cell[sl], blocks)
    return acc.build()


def _he_weight(he, weight):
    if weight == "he":
        return he
    if weight == "he_inv":
        return 1.0 / he
    if weight == "one":
        return np.ones_like(he)
    raise ValueError(f"unknown boundary weight {weight!r}")


def _side_mask(bn, side):
    if side == "all":
        return np.ones_like(bn)
    if side == "in":
        return (bn < 0).astype(float)
    if side == "out":
        return (bn > 0).astype(float)
    raise ValueError(f"unknown side {side!r}")


# ---------------------------------------------------------------------------
# upwind transport
# ---------------------------------------------------------------------------

def assemble_transport(space: DgSpace, field: MagneticField,
                       upwind: str = "test") -> BlockCsrMatrix:
    """Matrix of the transport form l(theta; phi), unit conductivity.

    upwind="trial" places theta in the trial slot (entry ij = l(phi_j; phi_i),
    the temperature-row operator); upwind="test" places theta in the test
    slot (entry ij = l(phi_i; phi_j), the constraint-row operator). The two
    results are discrete adjoints of each other.
    """
    if upwind not in ("trial", "test"):
        raise ValueError("upwind must be 'trial' or 'test'")
    acc = _BlockAccumulator(space)
    _transport_volume(space, field, upwind, acc)
    for batch in space.interior_batches:
        _transport_interior(space, field, upwind, batch, acc)
    for batch in space.boundary_batches:
        _transport_outflow(space, field, upwind, batch, acc)
    return acc.build()


def _transport_volume(space, field, upwind, acc):
    w = space.qweights
    V = space.basis_values
    G = space.basis_grads
    idx = np.arange(space.n_cells)
    for sl in _chunks(space.n_cells, 2048):
        pts = space.cell_points(space.qpoints, cells=idx[sl])
        cells = np.broadcast_to(idx[sl, None], pts.shape[:2])
        b = field.unit(pts.reshape(-1, space.dim),
                       cells=cells.reshape(-1)).reshape(pts.shape)
        bref = np.einsum("cqd,ced->cqe", b, space.cell_jinv[sl])
        bgrad = np.einsum("cqe,qie->cqi", bref, G)
        if upwind == "trial":
            blocks = -np.einsum("c,q,cqi,qj->cij", space.cell_detj[sl], w, bgrad, V)
        else:
            blocks = -np.einsum("c,q,qi,cqj->cij", space.cell_detj[sl], w, V, bgrad)
        acc.add(idx[sl], idx[sl], blocks)


def _transport_interior(space, field, upwind, batch, acc):
    for sl in _chunks(len(batch)):
        tab, w, pts = _facet_quadrature(space, batch, sl)
        cp, cm = batch.plus_cell[sl], batch.minus_cell[sl]
        bp = _unit_field_on_facet(field, pts, cp)
        bm = _unit_field_on_facet(field, pts, cm)
        n = batch.normal[sl]
        bn_p = np.einsum("fqd,fd->fq", bp, n)
        bn_m = np.einsum("fqd,fd->fq", bm, n)
        # upstream trace: plus side where the flow leaves it; ties (b.n = 0)
        # fall to the minus side and carry zero weight anyway
        take_plus = (bn_p > 0).astype(float)
        take_minus = 1.0 - take_plus
        Vp = _trace_values(tab, batch.trace_plus[sl])
        Vm = _trace_values(tab, batch.trace_minus[sl])
        jump_p = w * bn_p                          # coefficient of phi+
        jump_m = -w * bn_m                         # coefficient of phi-
        if upwind == "trial":
            # rows follow phi (the jump), columns follow the upwind trace
            for rw, Vr, rc in ((jump_p, Vp, cp), (jump_m, Vm, cm)):
                acc.add(rc, cp, np.einsum("fq,fqi,fqj->fij", rw * take_plus, Vr, Vp))
                acc.add(rc, cm, np.einsum("fq,fqi,fqj->fij", rw * take_minus, Vr, Vm))
        else:
            # rows follow the upwind trace, columns follow phi
            for cw, Vc, cc in ((jump_p, Vp, cp), (jump_m, Vm, cm)):
                acc.add(cp, cc, np.einsum("fq,fqi,fqj->fij", cw * take_plus, Vp, Vc))
                acc.add(cm, cc, np.einsum("fq,fqi,fqj->fij", cw * take_minus, Vm, Vc))


def _transport_outflow(space, field, upwind, batch, acc):
    for sl in _chunks(len(batch)):
        tab, w, pts = _facet_quadrature(space, batch, sl)
        cells = batch.plus_cell[sl]
        b = _unit_field_on_facet(field, pts, cells)
        bn = np.einsum("fqd,fd->fq", b, batch.normal[sl])
        wq = w * bn * (bn > 0)
        V = _trace_values(tab, batch.trace_plus[sl])
        blocks = np.einsum("fq,fqi,fqj->fij", wq, V, V)
        acc.add(cells, cells, blocks)


# ---------------------------------------------------------------------------
# interior-penalty Laplacian
# ---------------------------------------------------------------------------

def assemble_ip_laplacian(space: DgSpace, kappa_p: float = 2.0,
                          neumann: bool = False) -> BlockCsrMatrix:
    """Symmetric interior-penalty Laplacian, unit conductivity, positive
    volume convention (the scheme subtracts it as -kappa_perp * L).

    With neumann=True the Dirichlet boundary consistency terms are dropped
    entirely (flux data lives on the right-hand side), so L_N annihilates
    constants.
    """
    acc = _BlockAccumulator(space)

    # volume: detJ * Gref (Jinv Jinv^T) Gref
    S = np.einsum("q,qie,qjf->ijef", space.qweights, space.basis_grads,
                  space.basis_grads)
    JJT = np.einsum("ced,cfd->cef", space.cell_jinv, space.cell_jinv)
    blocks = np.einsum("c,ijef,cef->cij", space.cell_detj, S, JJT)
    idx = np.arange(space.n_cells)
    acc.add(idx, idx, blocks)

    for batch in space.interior_batches:
        for sl in _chunks(len(batch)):
            tab, w, _ = _facet_quadrature(space, batch, sl)
            cp, cm = batch.plus_cell[sl], batch.minus_cell[sl]
            n = batch.normal[sl]
            Vp = _trace_values(tab, batch.trace_plus[sl])
            Vm = _trace_values(tab, batch.trace_minus[sl])
            gn_p = np.einsum("fqid,fd->fqi",
                             _trace_phys_grads(space, tab, batch.trace_plus[sl], cp), n)
            gn_m = np.einsum("fqid,fd->fqi",
                             _trace_phys_grads(space, tab, batch.trace_minus[sl], cm), n)
            pen = (kappa_p / batch.he[sl])[:, None] * w
            sides = ((cp, Vp, gn_p, 1.0), (cm, Vm, gn_m, -1.0))
            for ci, Vi, gi, si in sides:
                for cj, Vj, gj, sj in sides:
                    blk = -0.5 * np.einsum("fq,fqi,fqj->fij", w, gi, sj * Vj)
                    blk -= 0.5 * np.einsum("fq,fqi,fqj->fij", w, si * Vi, gj)
                    blk += si * sj * np.einsum("fq,fqi,fqj->fij", pen, Vi, Vj)
                    acc.add(ci, cj, blk)

    if not neumann:
        for batch in space.boundary_batches:
            for sl in _chunks(len(batch)):
                tab, w, _ = _facet_quadrature(space, batch, sl)
                cells = batch.plus_cell[sl]
                V = _trace_values(tab, batch.trace_plus[sl])
                gn = np.einsum("fqid,fd->fqi",
                               _trace_phys_grads(space, tab, batch.trace_plus[sl], cells),
                               batch.normal[sl])
                blk = -np.einsum("fq,fqi,fqj->fij", w, gn, V)
                blk -= np.einsum("fq,fqi,fqj->fij", w, V, gn)
                acc.add(cells, cells, blk)
    return acc.build()


def assemble_ip_dirichlet_load(space: DgSpace, t_bc: Callable) -> np.ndarray:
    """Consistency data -int_bdry (n.grad phi_i) T_BC, unit conductivity."""
    out = np.zeros(space.n_dofs)
    for batch in space.boundary_batches:
        for sl in _chunks(len(batch)):
            tab, w, pts = _facet_quadrature(space, batch, sl)
            cells = batch.plus_cell[sl]
            g = np.asarray(t_bc(pts.reshape(-1, space.dim))).reshape(w.shape)
            gn = np.einsum("fqid,fd->fqi",
                           _trace_phys_grads(space, tab, batch.trace_plus[sl], cells),
                           batch.normal[sl])
            vals = -np.einsum("fq,fqi->fi", w * g, gn)
            _scatter_load(out, space, cells, vals)
    return out


def _scatter_load(out, space, cells, vals):
    nb = space.dofs_per_cell
    idx = cells[:, None] * nb + np.arange(nb)[None, :]
    np.add.at(out, idx.ravel(), vals.ravel())


# ---------------------------------------------------------------------------
# loads
# ---------------------------------------------------------------------------

def assemble_volume_load(space: DgSpace, f: Callable) -> np.ndarray:
    """<phi_i, f> by volume quadrature."""
    fv = np.asarray(f(space.quad_points().reshape(-1, space.dim)), dtype=float)
    fv = fv.reshape(space.n_cells, len(space.qweights))
    vals = np.einsum("c,q,cq,qi->ci", space.cell_detj, space.qweights, fv,
                     space.basis_values)
    out = np.zeros(space.n_dofs)
    _scatter_load(out, space, np.arange(space.n_cells), vals)
    return out


def assemble_boundary_load(space: DgSpace, g: Callable, weight: str = "one",
                           field: Optional[MagneticField] = None,
                           side: str = "all") -> np.ndarray:
    """Boundary data vector int_bdry w [b.n] phi_i g dS with the same weight
    and side options as assemble_boundary_mass."""
    out = np.zeros(space.n_dofs)
    for batch in space.boundary_batches:
        for sl in _chunks(len(batch)):
            tab, w, pts = _facet_quadrature(space, batch, sl)
            w = w * _he_weight(batch.he[sl], weight)[:, None]
            if field is not None:
                b = _unit_field_on_facet(field, pts, batch.plus_cell[sl])
                bn = np.einsum("fqd,fd->fq", b, batch.normal[sl])
                w = w * bn * _side_mask(bn, side)
            elif side != "all":
                b = None
                raise ValueError("side masking requires a field")
            gv = np.asarray(g(pts.reshape(-1, space.dim))).reshape(w.shape)
            V = _trace_values(tab, batch.trace_plus[sl])
            vals = np.einsum("fq,fqi->fi", w * gv, V)
            _scatter_load(out, space, batch.plus_cell[sl], vals)
    return out


def assemble_boundary_flux_matrix(space: DgSpace, field: MagneticField,
                                  side: str, weight: str = "one") -> BlockCsrMatrix:
    """int_{side} w (b.n) phi_i phi_j dS (same-cell blocks on the boundary)."""
    return assemble_boundary_mass(space, weight=weight, field=field, side=side)


# ---------------------------------------------------------------------------
# primal-DG anisotropic interior-penalty form
# ---------------------------------------------------------------------------

def assemble_primal_aniso(space: DgSpace, field: MagneticField,
                          kappa_delta: float,
                          kappa_p: float = 10.0) -> BlockCsrMatrix:
    """Matrix of the anisotropic interior-penalty form IP_b (conductivity
    included; zero matrix when kappa_delta = 0). Boundary T_BC data is
    routed to assemble_primal_aniso_load."""
    acc = _BlockAccumulator(space)
    if kappa_delta == 0.0:
        zero_rows = np.zeros(0, dtype=np.int64)
        acc.add(zero_rows, zero_rows, np.zeros((0, space.dofs_per_cell,
                                                space.dofs_per_cell)))
        return acc.build()
    kd = kappa_delta

    # volume: -kd <b.grad phi, b.grad T>
    w = space.qweights
    idx = np.arange(space.n_cells)
    for sl in _chunks(space.n_cells, 2048):
        pts = space.cell_points(space.qpoints, cells=idx[sl])
        cells = np.broadcast_to(idx[sl, None], pts.shape[:2])
        b = field.unit(pts.reshape(-1, space.dim),
                       cells=cells.reshape(-1)).reshape(pts.shape)
        bref = np.einsum("cqd,ced->cqe", b, space.cell_jinv[sl])
        bgrad = np.einsum("cqe,qie->cqi", bref, space.basis_grads)
        blocks = -kd * np.einsum("c,q,cqi,cqj->cij", space.cell_detj[sl], w,
                                 bgrad, bgrad)
        acc.add(idx[sl], idx[sl], blocks)

    for batch in space.interior_batches:
        for sl in _chunks(len(batch)):
            tab, w, pts = _facet_quadrature(space, batch, sl)
            cp, cm = batch.plus_cell[sl], batch.minus_cell[sl]
            n = batch.normal[sl]
            bp = _unit_field_on_facet(field, pts, cp)
            bm = _unit_field_on_facet(field, pts, cm)
            bn_p = np.einsum("fqd,fd->fq", bp, n)
            bn_m = np.einsum("fqd,fd->fq", bm, n)
            Vp = _trace_values(tab, batch.trace_plus[sl])
            Vm = _trace_values(tab, batch.trace_minus[sl])
            bg_p = _trace_b_grads(space, tab, batch.trace_plus[sl], cp, bp)
            bg_m = _trace_b_grads(space, tab, batch.trace_minus[sl], cm, bm)
            pen = (kappa_p / batch.he[sl])[:, None] * w
            # per-side data: jump coefficient of (b.n)psi and traces
            sides = ((cp, bn_p, Vp, bg_p), (cm, -bn_m, Vm, bg_m))
            for ci, jbi, Vi, bgi in sides:
                for cj, jbj, Vj, bgj in sides:
                    # + [[ (b.n) T ]] {kd b.grad phi}  (T trial -> j)
                    blk = 0.5 * kd * np.einsum("fq,fqi,fqj->fij", w, bgi, jbj[..., None] * Vj)
                    # + [[ (b.n) phi ]] {kd b.grad T}
                    blk += 0.5 * kd * np.einsum("fq,fqi,fqj->fij", w, jbi[..., None] * Vi, bgj)
                    # - kd kp/h [[ (b.n) phi ]] [[ (b.n) T ]]
                    blk -= kd * np.einsum("fq,fqi,fqj->fij", pen,
                                          jbi[..., None] * Vi, jbj[..., None] * Vj)
                    acc.add(ci, cj, blk)

    for batch in space.boundary_batches:
        for sl in _chunks(len(batch)):
            tab, w, pts = _facet_quadrature(space, batch, sl)
            cells = batch.plus_cell[sl]
            b = _unit_field_on_facet(field, pts, cells)
            bn = np.einsum("fqd,fd->fq", b, batch.normal[sl])
            V = _trace_values(tab, batch.trace_plus[sl])
            bg = _trace_b_grads(space, tab, batch.trace_plus[sl], cells, b)
            pen = (2.0 * kappa_p / batch.he[sl])[:, None] * w
            blk = -kd * np.einsum("fq,fqi,fqj->fij", pen, V, V)
            blk += kd * np.einsum("fq,fqi,fqj->fij", w * bn, bg, V)
            blk += kd * np.einsum("fq,fqi,fqj->fij", w * bn, V, bg)
            acc.add(cells, cells, blk)
    return acc.build()


def assemble_primal_aniso_load(space: DgSpace, field: MagneticField,
                               t_bc: Callable, kappa_delta: float,
                               kappa_p: float = 10.0) -> np.ndarray:
    """T_BC data of IP_b, moved to the right-hand side of the primal scheme:
    + int 2 kd kp/h phi T_BC - int kd (b.n)(b.grad phi) T_BC."""
    out = np.zeros(space.n_dofs)
    if kappa_delta == 0.0:
        return out
    kd = kappa_delta
    for batch in space.boundary_batches:
        for sl in _chunks(len(batch)):
            tab, w, pts = _facet_quadrature(space, batch, sl)
            cells = batch.plus_cell[sl]
            b = _unit_field_on_facet(field, pts, cells)
            bn = np.einsum("fqd,fd->fq", b, batch.normal[sl])
            g = np.asarray(t_bc(pts.reshape(-1, space.dim))).reshape(w.shape)
            V = _trace_values(tab, batch.trace_plus[sl])
            bg = _trace_b_grads(space, tab, batch.trace_plus[sl], cells, b)
            pen = (2.0 * kappa_p / batch.he[sl])[:, None] * w
            vals = kd * np.einsum("fq,fqi->fi", pen * g, V)
            vals -= kd * np.einsum("fq,fqi->fi", w * bn * g, bg)
            _scatter_load(out, space, cells, vals)
    return out


# ---------------------------------------------------------------------------
# facet functionals used by the structural identities
# ---------------------------------------------------------------------------

def interior_upwind_jump_flux(space: DgSpace, field: MagneticField,
                              zeta: FieldVector) -> float:
    """sum over interior facets of int [[b.n]] zeta_up dS (unit conductivity);
    vanishes when b has continuous normal components."""
    nb = space.dofs_per_cell
    coeffs = zeta.values.reshape(space.n_cells, nb)
    total = 0.0
    for batch in space.interior_batches:
        for sl in _chunks(len(batch)):
            tab, w, pts = _facet_quadrature(space, batch, sl)
            cp, cm = batch.plus_cell[sl], batch.minus_cell[sl]
            n = batch.normal[sl]
            bp = _unit_field_on_facet(field, pts, cp)
            bm = _unit_field_on_facet(field, pts, cm)
            bn_p = np.einsum("fqd,fd->fq", bp, n)
            bn_m = np.einsum("fqd,fd->fq", bm, n)
            Vp = _trace_values(tab, batch.trace_plus[sl])
            Vm = _trace_values(tab, batch.trace_minus[sl])
            zp = np.einsum("fqi,fi->fq", Vp, coeffs[cp])
            zm = np.einsum("fqi,fi->fq", Vm, coeffs[cm])
            zup = np.where(bn_p > 0, zp, zm)
            total += float(np.sum(w * (bn_p - bn_m) * zup))
    return total


def boundary_flux_integral(space: DgSpace, field: MagneticField,
                           g: Callable, side: str) -> float:
    """int_{side} (b.n) g dS for a callable g (facet quadrature)."""
    total = 0.0
    for batch in space.boundary_batches:
        for sl in _chunks(len(batch)):
            tab, w, pts = _facet_quadrature(space, batch, sl)
            b = _unit_field_on_facet(field, pts, batch.plus_cell[sl])
            bn = np.einsum("fqd,fd->fq", b, batch.normal[sl])
            gv = np.asarray(g(pts.reshape(-1, space.dim))).reshape(w.shape)
            total += float(np.sum(w * bn * _side_mask(bn, side) * gv))
    return total


# ---------------------------------------------------------------------------
# problem configuration and the operator bundle
# ---------------------------------------------------------------------------

def _zero(points):
    return np.zeros(len(points))


@dataclass
class ProblemConfig:
    """Physical and penalty parameters of one heat-flux problem.

    kappa_delta = kappa_par - kappa_perp is derived; kappa_par >= kappa_perp
    > 0 is enforced. Boundary data callables take (m, dim) point arrays.
    """

    kappa_par: float
    kappa_perp: float
    dt: float
    kappa_p: float = 2.0
    kappa_bc: float = 20.0
    kappa_p_aniso: float = 10.0
    bc_kind: str = "dirichlet"
    t_bc: Callable = dc_field(default=_zero)
    q_par_bc: Callable = dc_field(default=_zero)
    q_perp_bc: Callable = dc_field(default=_zero)
    source: Callable = dc_field(default=_zero)

    def __post_init__(self):
        if not (self.kappa_par >= self.kappa_perp > 0):
            raise ValueError("need kappa_par >= kappa_perp > 0")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.bc_kind not in ("dirichlet", "neumann"):
            raise ValueError("bc_kind must be 'dirichlet' or 'neumann'")

    @property
    def kappa_delta(self) -> float:
        return self.kappa_par - self.kappa_perp

    @property
    def sqrt_kappa_delta(self) -> float:
        return float(np.sqrt(self.kappa_delta))


@dataclass
class AssembledOperators:
    """Every constant-in-time operator of the discretization.

    gb is the paper-convention transport block: the constraint row reads
    -sqrt(kappa_delta) * gb and the temperature row sqrt(kappa_delta) *
    gb^T. transport_test is the raw test-upwinded form matrix (gb = -that).
    """

    space: DgSpace
    field: MagneticField
    M: BlockCsrMatrix
    M_bc_he: BlockCsrMatrix
    M_bc_heinv: BlockCsrMatrix
    L: BlockCsrMatrix
    gb: BlockCsrMatrix
    flux_in: BlockCsrMatrix
    flux_out: BlockCsrMatrix
    L_neumann: Optional[BlockCsrMatrix] = None
    M_bc_bn_he: Optional[BlockCsrMatrix] = None


def build_operators(space: DgSpace, field: MagneticField,
                    kappa_p: float = 2.0,
                    with_neumann: bool = False) -> AssembledOperators:
    transport = assemble_transport(space, field, upwind="test")
    ops = AssembledOperators(
        space=space, field=field,
        M=assemble_mass(space),
        M_bc_he=assemble_boundary_mass(space, "he"),
        M_bc_heinv=assemble_boundary_mass(space, "he_inv"),
        L=assemble_ip_laplacian(space, kappa_p),
        gb=transport.scaled(-1.0),
        flux_in=assemble_boundary_flux_matrix(space, field, "in"),
        flux_out=assemble_boundary_flux_matrix(space, field, "out"),
    )
    if with_neumann:
        ops.L_neumann = assemble_ip_laplacian(space, kappa_p, neumann=True)
        ops.M_bc_bn_he = assemble_boundary_mass(space, "he", field=field, side="all")
    return ops

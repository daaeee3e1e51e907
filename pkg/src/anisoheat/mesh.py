"""Perturbed triangular base meshes and straight prism extrusions.

The base mesh is a regular right-triangle grid on [0, L_x]^2 whose interior
vertices are displaced by a deterministic counter-based RNG (SplitMix64 keyed
by seed, vertex index and axis), so meshes are bit-reproducible across runs
and platforms. Refinement splits each triangle into four by edge midpoints
and is applied after perturbation, so coarse vertices are a subset of fine
ones. Extrusion is straight and uniform in z, optionally periodic.

All cells are affine (constant Jacobian): triangles in 2D, straight prisms
in 3D.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


# SplitMix64 finalizer; wraps in uint64 arithmetic.
_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(x: np.ndarray) -> np.ndarray:
    z = (x + _SM_GAMMA).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _SM_M1
    z = (z ^ (z >> np.uint64(27))) * _SM_M2
    return z ^ (z >> np.uint64(31))


def unit_noise(seed: int, counters: np.ndarray) -> np.ndarray:
    """Deterministic uniforms in [-1, 1) from integer counters."""
    base = _mix64(np.full(counters.shape, seed, dtype=np.uint64))
    z = _mix64(base + counters.astype(np.uint64))
    u = (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return 2.0 * u - 1.0


@dataclass
class FacetBatch:
    """Homogeneous batch of facets sharing a quadrature family.

    family is "edge" (2D), "vertical" (quad facets from base edges x layers)
    or "horizontal" (triangle facets between layers). For interior batches
    minus_* are populated and the stored normal is n+ (pointing from the plus
    cell into the minus cell); boundary batches carry the outward normal.
    trace_plus / trace_minus identify the trace table of each side: for edge
    and vertical families this is local_edge * 2 + (0 if the cell's local
    edge direction agrees with the facet parameterization else 1); for the
    horizontal family 0 means the cell's bottom face and 1 its top face.
    """

    family: str
    interior: bool
    plus_cell: np.ndarray
    trace_plus: np.ndarray
    normal: np.ndarray
    scale: np.ndarray
    area: np.ndarray
    he: np.ndarray
    minus_cell: Optional[np.ndarray] = None
    trace_minus: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.plus_cell)


def _triangle_areas(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


@dataclass
class BaseMesh2d:
    """Triangulation of [0, L_x]^2 with full edge topology.

    vertices are 2D coordinates; triangles are counterclockwise vertex
    triples. Edge topology (canonical vertex pairs, adjacent cells, local
    edge ids, orientations, unit normals n+) is derived on construction.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    L_x: float

    # derived topology, filled by _finalize
    edges: np.ndarray = field(init=False)
    edge_cells: np.ndarray = field(init=False)
    edge_local: np.ndarray = field(init=False)
    edge_aligned: np.ndarray = field(init=False)
    edge_normal: np.ndarray = field(init=False)
    edge_length: np.ndarray = field(init=False)
    cell_volumes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self._finalize()

    def _finalize(self):
        areas = _triangle_areas(self.vertices, self.triangles)
        if np.any(areas <= 0):
            bad = int(np.argmin(areas))
            raise MeshError(f"non-positive triangle area at cell {bad}: {areas[bad]:.3e}")
        self.cell_volumes = areas

        nt = len(self.triangles)
        # local edges of the reference triangle: (0,1), (1,2), (2,0)
        locv = np.array([[0, 1], [1, 2], [2, 0]])
        va = self.triangles[:, locv[:, 0]]  # (nt, 3)
        vb = self.triangles[:, locv[:, 1]]
        lo = np.minimum(va, vb).ravel()
        hi = np.maximum(va, vb).ravel()
        keys = lo * (self.vertices.shape[0] + 1) + hi
        uniq, first_pos, inv = np.unique(keys, return_index=True, return_inverse=True)
        ne = len(uniq)

        self.edges = np.column_stack([lo[first_pos], hi[first_pos]])
        self.edge_cells = np.full((ne, 2), -1, dtype=np.int64)
        self.edge_local = np.full((ne, 2), -1, dtype=np.int64)
        self.edge_aligned = np.zeros((ne, 2), dtype=bool)

        tri_of_entry = np.repeat(np.arange(nt), 3)
        local_of_entry = np.tile(np.arange(3), nt)
        aligned_entry = (va.ravel() == lo)
        # stable fill: first occurrence becomes the plus side
        order = np.argsort(inv, kind="stable")
        for pos in order:
            e = inv[pos]
            slot = 0 if self.edge_cells[e, 0] < 0 else 1
            if slot == 1 and self.edge_cells[e, 1] >= 0:
                raise MeshError(f"edge {e} shared by more than two triangles")
            self.edge_cells[e, slot] = tri_of_entry[pos]
            self.edge_local[e, slot] = local_of_entry[pos]
            self.edge_aligned[e, slot] = aligned_entry[pos]

        pa = self.vertices[self.edges[:, 0]]
        pb = self.vertices[self.edges[:, 1]]
        tang = pb - pa
        self.edge_length = np.linalg.norm(tang, axis=1)
        if np.any(self.edge_length <= 0):
            raise MeshError("zero-length edge")
        that = tang / self.edge_length[:, None]
        normal = np.column_stack([that[:, 1], -that[:, 0]])
        # orient n+ away from the plus cell
        cplus = self.vertices[self.triangles[self.edge_cells[:, 0]]].mean(axis=1)
        mid = 0.5 * (pa + pb)
        flip = np.einsum("ij,ij->i", normal, cplus - mid) > 0
        normal[flip] *= -1.0
        self.edge_normal = normal

    @property
    def dim(self) -> int:
        return 2

    @property
    def n_cells(self) -> int:
        return len(self.triangles)

    @property
    def interior_edge_mask(self) -> np.ndarray:
        return self.edge_cells[:, 1] >= 0

    @property
    def boundary_edges(self):
        """(vertex pair, outward unit normal) for each boundary edge."""
        mask = ~self.interior_edge_mask
        return list(zip(self.edges[mask].tolist(), self.edge_normal[mask]))

    def cell_maps(self):
        """Affine maps x = origin + J xi: returns (origins, J) arrays."""
        p = self.vertices[self.triangles]
        origins = p[:, 0]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        return origins, J

    def facet_batches(self):
        mask = self.interior_edge_mask
        he_num = self.cell_volumes[self.edge_cells[:, 0]].copy()
        he_num[mask] += self.cell_volumes[self.edge_cells[mask, 1]]
        he_den = np.where(mask, 2.0 * self.edge_length, self.edge_length)
        he = he_num / he_den

        def trace_code(slot, sel):
            return self.edge_local[sel, slot] * 2 + (~self.edge_aligned[sel, slot]).astype(np.int64)

        interior = FacetBatch(
            family="edge", interior=True,
            plus_cell=self.edge_cells[mask, 0], trace_plus=trace_code(0, mask),
            minus_cell=self.edge_cells[mask, 1], trace_minus=trace_code(1, mask),
            normal=self.edge_normal[mask], scale=self.edge_length[mask],
            area=self.edge_length[mask], he=he[mask])
        bmask = ~mask
        boundary = FacetBatch(
            family="edge", interior=False,
            plus_cell=self.edge_cells[bmask, 0], trace_plus=trace_code(0, bmask),
            normal=self.edge_normal[bmask], scale=self.edge_length[bmask],
            area=self.edge_length[bmask], he=he[bmask])
        return [interior], [boundary]


def build_base_mesh(n: int, L_x: float = 1.0, perturb: float = 0.0,
                    seed: int = 0) -> BaseMesh2d:
    """Regular right-triangle grid with perturbed interior vertices.

    Parameters
    ----------
    n : cells per side (resolution dx = L_x / n); n >= 2
    perturb : interior vertices move by perturb*dx*u per coordinate with
        u ~ uniform[-1, 1) from the seeded counter RNG; 0 <= perturb < 0.5
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if not (0.0 <= perturb < 0.5):
        raise ValueError("perturb must lie in [0, 0.5)")
    dx = L_x / n
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    verts = np.column_stack([ii.ravel() * dx, jj.ravel() * dx])

    interior = ((ii.ravel() > 0) & (ii.ravel() < n)
                & (jj.ravel() > 0) & (jj.ravel() < n))
    idx = np.arange(len(verts))
    for axis in range(2):
        u = unit_noise(seed, idx * 2 + axis)
        verts[interior, axis] += perturb * dx * u[interior]

    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b = j * (n + 1) + i + 1
            c = (j + 1) * (n + 1) + i + 1
            d = (j + 1) * (n + 1) + i
            tris.append((a, b, c))  # fixed diagonal a-c
            tris.append((a, c, d))
    return BaseMesh2d(verts, np.array(tris), L_x)


def refine(mesh: BaseMesh2d) -> BaseMesh2d:
    """Split every triangle into four by edge midpoints (no re-perturbation)."""
    verts = mesh.vertices
    nv = len(verts)
    mid_of = {}
    new_pts = []

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        m = mid_of.get(key)
        if m is None:
            m = nv + len(new_pts)
            mid_of[key] = m
            new_pts.append(0.5 * (verts[a] + verts[b]))
        return m

    tris = []
    for v0, v1, v2 in mesh.triangles:
        m01 = midpoint(v0, v1)
        m12 = midpoint(v1, v2)
        m20 = midpoint(v2, v0)
        tris.extend([(v0, m01, m20), (v1, m12, m01), (v2, m20, m12),
                     (m01, m12, m20)])
    allverts = np.vstack([verts, np.array(new_pts)]) if new_pts else verts.copy()
    return BaseMesh2d(allverts, np.array(tris), mesh.L_x)


@dataclass
class PrismMesh:
    """Straight extrusion of a BaseMesh2d into layers of prisms.

    Cell index is tri * n_layers + layer. Every prism has 3 vertical quad
    facets and 2 horizontal triangle facets; when periodic_z the horizontal
    facet between the last and first layer is interior.
    """

    base: BaseMesh2d
    n_layers: int
    L_z: float
    periodic_z: bool

    cell_volumes: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.n_layers < 1:
            raise MeshError("n_layers must be >= 1")
        if self.periodic_z and self.n_layers < 2:
            raise MeshError("periodic extrusion needs at least 2 layers")
        self.dz = self.L_z / self.n_layers
        areas = self.base.cell_volumes
        self.cell_volumes = np.repeat(areas, self.n_layers) * self.dz

    @property
    def dim(self) -> int:
        return 3

    @property
    def n_cells(self) -> int:
        return self.base.n_cells * self.n_layers

    def cell_index(self, tri, layer):
        return np.asarray(tri) * self.n_layers + np.asarray(layer)

    def cell_maps(self):
        o2, J2 = self.base.cell_maps()
        nl = self.n_layers
        nt = self.base.n_cells
        origins = np.zeros((nt * nl, 3))
        J = np.zeros((nt * nl, 3, 3))
        layer_z = np.arange(nl) * self.dz
        origins[:, :2] = np.repeat(o2, nl, axis=0)
        origins[:, 2] = np.tile(layer_z, nt)
        J[:, :2, :2] = np.repeat(J2, nl, axis=0)
        J[:, 2, 2] = self.dz
        return origins, J

    def facet_batches(self):
        base = self.base
        nl = self.n_layers
        areas2 = base.cell_volumes
        layers = np.arange(nl)

        def expand_edges(sel):
            """Tile per-edge base data across layers; returns flat index pairs."""
            eidx = np.where(sel)[0]
            ne = len(eidx)
            e_rep = np.repeat(eidx, nl)
            l_rep = np.tile(layers, ne)
            return eidx, e_rep, l_rep

        int_batches = []
        bnd_batches = []

        # vertical facets: interior base edges -> interior, boundary -> boundary
        for interior in (True, False):
            sel = base.interior_edge_mask if interior else ~base.interior_edge_mask
            eidx, e_rep, l_rep = expand_edges(sel)
            if len(e_rep) == 0:
                continue
            vol_plus = areas2[base.edge_cells[eidx, 0]] * self.dz
            length = base.edge_length[eidx]
            farea = length * self.dz
            if interior:
                vol_minus = areas2[base.edge_cells[eidx, 1]] * self.dz
                he = (vol_plus + vol_minus) / (2.0 * farea)
            else:
                he = vol_plus / farea
            normal = np.zeros((len(eidx), 3))
            normal[:, :2] = base.edge_normal[eidx]
            tr_plus = base.edge_local[eidx, 0] * 2 + (~base.edge_aligned[eidx, 0]).astype(np.int64)
            batch = FacetBatch(
                family="vertical", interior=interior,
                plus_cell=self.cell_index(base.edge_cells[e_rep, 0], l_rep),
                trace_plus=np.repeat(tr_plus, nl),
                normal=np.repeat(normal, nl, axis=0),
                scale=np.repeat(farea, nl),
                area=np.repeat(farea, nl),
                he=np.repeat(he, nl))
            if interior:
                tr_minus = base.edge_local[eidx, 1] * 2 + (~base.edge_aligned[eidx, 1]).astype(np.int64)
                batch.minus_cell = self.cell_index(base.edge_cells[e_rep, 1], l_rep)
                batch.trace_minus = np.repeat(tr_minus, nl)
            (int_batches if interior else bnd_batches).append(batch)

        # horizontal facets: plus cell is the lower layer, n+ = +z
        nt = base.n_cells
        tri_ids = np.arange(nt)
        n_if = nl if self.periodic_z else nl - 1
        if n_if > 0:
            lower = np.tile(np.arange(n_if), nt)
            t_rep = np.repeat(tri_ids, n_if)
            upper = (lower + 1) % nl if self.periodic_z else lower + 1
            normal = np.zeros((nt * n_if, 3))
            normal[:, 2] = 1.0
            a_rep = np.repeat(areas2, n_if)
            int_batches.append(FacetBatch(
                family="horizontal", interior=True,
                plus_cell=self.cell_index(t_rep, lower),
                trace_plus=np.ones(nt * n_if, dtype=np.int64),   # top face
                minus_cell=self.cell_index(t_rep, upper),
                trace_minus=np.zeros(nt * n_if, dtype=np.int64),  # bottom face
                normal=normal, scale=2.0 * a_rep, area=a_rep,
                he=np.full(nt * n_if, self.dz)))
        if not self.periodic_z:
            for top in (False, True):
                layer = nl - 1 if top else 0
                normal = np.zeros((nt, 3))
                normal[:, 2] = 1.0 if top else -1.0
                bnd_batches.append(FacetBatch(
                    family="horizontal", interior=False,
                    plus_cell=self.cell_index(tri_ids, np.full(nt, layer)),
                    trace_plus=np.full(nt, 1 if top else 0, dtype=np.int64),
                    normal=normal, scale=2.0 * areas2, area=areas2.copy(),
                    he=np.full(nt, self.dz)))
        return int_batches, bnd_batches


def extrude(base: BaseMesh2d, n_layers: int, L_z: float,
            periodic_z: bool = False) -> PrismMesh:
    """Extrude a base mesh into n_layers straight prism layers of height L_z."""
    return PrismMesh(base, n_layers, L_z, periodic_z)


def export_text(mesh, path: str) -> None:
    """Plain-text mesh dump: vertices then cells, one entity per line.

    Format: a header line "anisoheat-mesh <dim>", then
    "vertices <nv>" followed by nv coordinate lines, then
    "cells <nc>" followed by nc vertex-index lines (triangles) or
    "tri layer" pairs (prisms), then for prisms one line
    "extrusion <n_layers> <L_z> <periodic_z>".
    """
    lines = []
    if isinstance(mesh, PrismMesh):
        base = mesh.base
        lines.append("anisoheat-mesh 3")
        lines.append(f"vertices {len(base.vertices)}")
        lines.extend(f"{x:.17g} {y:.17g}" for x, y in base.vertices)
        lines.append(f"cells {base.n_cells * mesh.n_layers}")
        for t in range(base.n_cells):
            for layer in range(mesh.n_layers):
                lines.append(f"{t} {layer}")
        lines.append(f"extrusion {mesh.n_layers} {mesh.L_z:.17g} {int(mesh.periodic_z)}")
        lines.append(f"base-cells {base.n_cells}")
        for tri in base.triangles:
            lines.append(" ".join(str(v) for v in tri))
    else:
        lines.append("anisoheat-mesh 2")
        lines.append(f"vertices {len(mesh.vertices)}")
        lines.extend(f"{x:.17g} {y:.17g}" for x, y in mesh.vertices)
        lines.append(f"cells {mesh.n_cells}")
        for tri in mesh.triangles:
            lines.append(" ".join(str(v) for v in tri))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

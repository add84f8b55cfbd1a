"""P2-vector / P0 mixed finite elements on triangles.

Velocity coefficient vectors have length ``2 * n_nodes`` and are laid out as
``[u_x at all nodes, u_y at all nodes]``; nodes are the mesh vertices followed
by the edge midpoints. Pressures are one value per triangle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .mesh import Mesh
from .quadrature import TriangleRule, conical_rule, require_degree, triangle_rule

LOAD_RULE = conical_rule(7)

# barycentric coordinates of the six P2 nodes of a triangle
P2_NODE_BARY = np.array([
    [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5],
])


def p2_basis(bary: np.ndarray) -> np.ndarray:
    """P2 shape functions at barycentric points, shape (..., 6)."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=-1)


def p2_basis_dbary(bary: np.ndarray) -> np.ndarray:
    """Derivatives of the shape functions w.r.t. the barycentric coordinates, (..., 6, 3)."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    z = np.zeros_like(l0)
    rows = [
        (4 * l0 - 1, z, z), (z, 4 * l1 - 1, z), (z, z, 4 * l2 - 1),
        (4 * l1, 4 * l0, z), (z, 4 * l2, 4 * l1), (4 * l2, z, 4 * l0),
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def bary_gradients(mesh: Mesh) -> np.ndarray:
    """Constant gradients of the barycentric coordinates, shape (nt, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    twice_area = 2.0 * mesh.areas
    g = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / twice_area
        g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / twice_area
    return g


@dataclass(frozen=True, eq=False)
class DofMap:
    """Degrees of freedom of the P2-vector / P0 pair with no-slip boundary."""

    mesh: Mesh
    cell_nodes: np.ndarray  # (nt, 6)
    node_coords: np.ndarray  # (n_nodes, 2)
    boundary_nodes: np.ndarray  # (n_nodes,) bool
    free_nodes: np.ndarray  # indices of interior nodes

    @classmethod
    def build(cls, mesh: Mesh) -> DofMap:
        nv = mesh.n_vertices
        cell_nodes = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
        mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        coords = np.vstack([mesh.vertices, mids])
        boundary = np.concatenate([mesh.boundary_vertex_flags, mesh.boundary_edge_flags])
        return cls(mesh, cell_nodes, coords, boundary, np.flatnonzero(~boundary))

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def velocity_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def pressure_dofs(self) -> int:
        return self.mesh.n_triangles

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return np.concatenate([self.boundary_nodes, self.boundary_nodes])

    @property
    def free_dofs(self) -> np.ndarray:
        return np.concatenate([self.free_nodes, self.n_nodes + self.free_nodes])

    @property
    def free_count(self) -> int:
        return 2 * len(self.free_nodes)

    @property
    def zero_mean_constraint(self) -> np.ndarray:
        return self.mesh.areas

    def restrict(self, u: np.ndarray) -> np.ndarray:
        return u[self.free_dofs]

    def extend(self, u_free: np.ndarray) -> np.ndarray:
        u = np.zeros(self.velocity_dofs)
        u[self.free_dofs] = u_free
        return u

    def interpolate(self, f: Callable) -> np.ndarray:
        """Nodal P2 interpolant of ``f(x, y)``; vector fields return ``(fx, fy)``."""
        vals = f(self.node_coords[:, 0], self.node_coords[:, 1])
        if isinstance(vals, tuple) or np.ndim(vals) == 2:
            return np.concatenate([np.broadcast_to(v, (self.n_nodes,)) for v in vals]).astype(float)
        return np.broadcast_to(vals, (self.n_nodes,)).astype(float)


@dataclass(frozen=True, eq=False)
class ElementData:
    """Basis values and physical gradients at the quadrature points of every triangle."""

    rule: TriangleRule
    points: np.ndarray  # (nt, nq, 2)
    weights: np.ndarray  # (nt, nq), area included
    phi: np.ndarray  # (nq, 6)
    grad: np.ndarray  # (nt, nq, 6, 2)

    @classmethod
    def build(cls, mesh: Mesh, rule: TriangleRule) -> ElementData:
        verts = mesh.vertices[mesh.triangles]
        points = np.einsum("qi,tid->tqd", rule.points, verts)
        weights = mesh.areas[:, None] * rule.weights[None, :]
        phi = p2_basis(rule.points)
        dbary = p2_basis_dbary(rule.points)  # (nq, 6, 3)
        grad = np.einsum("qki,tid->tqkd", dbary, bary_gradients(mesh))
        return cls(rule, points, weights, phi, grad)


class ScalarPattern:
    """CSR sparsity of the scalar P2 matrix restricted to a node subset.

    ``assemble`` scatters element matrices with a fixed summation order, so
    repeated assemblies are bit-identical.
    """

    def __init__(self, cell_nodes: np.ndarray, nodes: np.ndarray, n_nodes: int):
        index = np.full(n_nodes, -1, dtype=np.int64)
        index[nodes] = np.arange(len(nodes))
        local = index[cell_nodes]  # (nt, 6)
        rows = np.broadcast_to(local[:, :, None], local.shape + (6,))
        cols = np.broadcast_to(local[:, None, :], local.shape + (6,))
        keep = (rows >= 0) & (cols >= 0)
        n = len(nodes)
        pat = sp.coo_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(n, n)).tocsr()
        pat.sum_duplicates()
        pat.sort_indices()
        self.shape = (n, n)
        self.indptr = pat.indptr
        self.indices = pat.indices
        row_of = np.repeat(np.arange(n), np.diff(pat.indptr))
        keys = row_of.astype(np.int64) * n + pat.indices
        pos = np.full(rows.shape, -1, dtype=np.int64)
        pos[keep] = np.searchsorted(keys, rows[keep].astype(np.int64) * n + cols[keep])
        self.flat_pos = pos.ravel()
        self.mask = self.flat_pos >= 0
        self.nnz = len(keys)

    def assemble_data(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.flat_pos[self.mask], weights=local.ravel()[self.mask],
                           minlength=self.nnz)

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


def _pressure_coupling(dofmap: DofMap, edata: ElementData, nodes: np.ndarray) -> tuple:
    """Rows = triangles, entries int_K d(phi_j)/dx_c for c = x, y."""
    nt = dofmap.mesh.n_triangles
    index = np.full(dofmap.n_nodes, -1, dtype=np.int64)
    index[nodes] = np.arange(len(nodes))
    cols = index[dofmap.cell_nodes]
    keep = cols >= 0
    rows = np.broadcast_to(np.arange(nt)[:, None], cols.shape)
    out = []
    for c in range(2):
        vals = np.einsum("tq,tqj->tj", edata.weights, edata.grad[..., c])
        out.append(sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(nt, len(nodes))))
    return tuple(out)


@dataclass(eq=False)
class AssembledOperators:
    """Mass, stiffness and divergence matrices of the P2/P0 pair.

    Scalar matrices (``Ms``, ``As``) act on one velocity component; the vector
    operators ``M``, ``A`` are block diagonal. ``*_free`` variants have the
    Dirichlet nodes eliminated. ``Bx``/``By`` hold int_K d(phi_j)/dx, so that
    ``B @ u`` lists int_K div(u) for every triangle K.
    """

    dofmap: DofMap
    edata: ElementData
    pattern_all: ScalarPattern = field(repr=False)
    pattern_free: ScalarPattern = field(repr=False)
    Ms: sp.csr_matrix = field(repr=False)
    As: sp.csr_matrix = field(repr=False)
    Bx: sp.csr_matrix = field(repr=False)
    By: sp.csr_matrix = field(repr=False)
    Ms_free: sp.csr_matrix = field(repr=False)
    As_free: sp.csr_matrix = field(repr=False)
    Bx_free: sp.csr_matrix = field(repr=False)
    By_free: sp.csr_matrix = field(repr=False)

    @property
    def quadrature_rule(self) -> TriangleRule:
        return self.edata.rule

    @property
    def mesh(self) -> Mesh:
        return self.dofmap.mesh

    @cached_property
    def M(self) -> sp.csr_matrix:
        return sp.block_diag([self.Ms, self.Ms], format="csr")

    @cached_property
    def A(self) -> sp.csr_matrix:
        return sp.block_diag([self.As, self.As], format="csr")

    @cached_property
    def B(self) -> sp.csr_matrix:
        return sp.hstack([self.Bx, self.By], format="csr")

    @cached_property
    def M_free(self) -> sp.csr_matrix:
        return sp.block_diag([self.Ms_free, self.Ms_free], format="csr")

    @cached_property
    def A_free(self) -> sp.csr_matrix:
        return sp.block_diag([self.As_free, self.As_free], format="csr")

    @cached_property
    def B_free(self) -> sp.csr_matrix:
        return sp.hstack([self.Bx_free, self.By_free], format="csr")

    @cached_property
    def pressure_mass(self) -> np.ndarray:
        return self.mesh.areas.copy()

    @cached_property
    def convection(self) -> ConvectionAssembler:
        return ConvectionAssembler(self)

    # -- norms of full coefficient vectors ----------------------------------
    def l2_norm_sq(self, u: np.ndarray) -> float:
        n = self.dofmap.n_nodes
        return float(u[:n] @ (self.Ms @ u[:n]) + u[n:] @ (self.Ms @ u[n:]))

    def grad_norm_sq(self, u: np.ndarray) -> float:
        n = self.dofmap.n_nodes
        return float(u[:n] @ (self.As @ u[:n]) + u[n:] @ (self.As @ u[n:]))

    def divergence(self, u: np.ndarray) -> np.ndarray:
        n = self.dofmap.n_nodes
        return self.Bx @ u[:n] + self.By @ u[n:]


def assemble_static(mesh: Mesh, dofmap: DofMap | None = None,
                    rule: TriangleRule | None = None) -> AssembledOperators:
    """Assemble M, A and B; the rule must integrate P2 x P2 products exactly."""
    dofmap = dofmap if dofmap is not None else DofMap.build(mesh)
    if dofmap.mesh is not mesh:
        raise ValueError("dofmap was built on a different mesh")
    rule = rule if rule is not None else triangle_rule(5)
    require_degree(rule, 4, "P2 mass matrix")
    edata = ElementData.build(mesh, rule)
    mass_loc = np.einsum("tq,qi,qj->tij", edata.weights, edata.phi, edata.phi)
    stiff_loc = np.einsum("tq,tqid,tqjd->tij", edata.weights, edata.grad, edata.grad)
    all_nodes = np.arange(dofmap.n_nodes)
    p_all = ScalarPattern(dofmap.cell_nodes, all_nodes, dofmap.n_nodes)
    p_free = ScalarPattern(dofmap.cell_nodes, dofmap.free_nodes, dofmap.n_nodes)
    Bx, By = _pressure_coupling(dofmap, edata, all_nodes)
    Bxf, Byf = _pressure_coupling(dofmap, edata, dofmap.free_nodes)
    return AssembledOperators(
        dofmap, edata, p_all, p_free,
        p_all.matrix(p_all.assemble_data(mass_loc)),
        p_all.matrix(p_all.assemble_data(stiff_loc)),
        Bx, By,
        p_free.matrix(p_free.assemble_data(mass_loc)),
        p_free.matrix(p_free.assemble_data(stiff_loc)),
        Bxf, Byf,
    )


class ConvectionAssembler:
    """Assembles N_theta(w)_ij = int (w.grad phi_j + theta div(w) phi_j) phi_i.

    The scalar form acts identically on both velocity components.
    """

    def __init__(self, ops: AssembledOperators):
        require_degree(ops.edata.rule, 5, "convection form (exact skew-symmetry)")
        self.ops = ops
        self.n_nodes = ops.dofmap.n_nodes
        ed = ops.edata
        # contiguous copies keep the batched products below on fast paths
        self._wphiT = np.ascontiguousarray(
            (ed.weights[:, :, None] * ed.phi[None, :, :]).transpose(0, 2, 1))  # (nt, 6, nq)
        self._gx = np.ascontiguousarray(ed.grad[..., 0])
        self._gy = np.ascontiguousarray(ed.grad[..., 1])

    def local(self, w: np.ndarray, theta: float) -> np.ndarray:
        if w.shape != (2 * self.n_nodes,):
            raise ValueError(f"transport field has shape {w.shape}, expected ({2 * self.n_nodes},)")
        if not 0.0 <= theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {theta}")
        phi = self.ops.edata.phi
        cn = self.ops.dofmap.cell_nodes
        wx = w[:self.n_nodes][cn]
        wy = w[self.n_nodes:][cn]
        adv = (wx @ phi.T)[:, :, None] * self._gx
        adv += (wy @ phi.T)[:, :, None] * self._gy
        if theta != 0.0:
            div = np.matmul(self._gx, wx[:, :, None])
            div += np.matmul(self._gy, wy[:, :, None])
            div *= theta
            adv += div * phi
        return np.matmul(self._wphiT, adv)

    def free_data(self, w: np.ndarray, theta: float) -> np.ndarray:
        """Scalar matrix data on the free-node pattern of ``ops.pattern_free``."""
        return self.ops.pattern_free.assemble_data(self.local(w, theta))

    def scalar(self, w: np.ndarray, theta: float) -> sp.csr_matrix:
        p = self.ops.pattern_all
        return p.matrix(p.assemble_data(self.local(w, theta)))


def assemble_convection(ops: AssembledOperators, w: np.ndarray, theta: float = 0.5) -> sp.csr_matrix:
    """Full (unconstrained) vector convection matrix N_theta(w)."""
    Ns = ops.convection.scalar(np.asarray(w, dtype=float), theta)
    return sp.block_diag([Ns, Ns], format="csr")


def load_vector(ops: AssembledOperators, f: Callable, rule: TriangleRule | None = None) -> np.ndarray:
    """int f . phi_i for a vector field ``f(x, y) -> (fx, fy)``.

    Analytic fields are integrated with a degree-13 conical rule by default,
    so the quadrature error is negligible next to the discretization error.
    """
    rule = rule if rule is not None else LOAD_RULE
    verts = ops.mesh.vertices[ops.mesh.triangles]
    pts = np.einsum("qi,tid->tqd", rule.points, verts)
    weights = ops.mesh.areas[:, None] * rule.weights[None, :]
    phi = p2_basis(rule.points)
    fx, fy = f(pts[..., 0], pts[..., 1])
    out = []
    for comp in (fx, fy):
        loc = (weights * np.broadcast_to(comp, weights.shape)) @ phi
        out.append(np.bincount(ops.dofmap.cell_nodes.ravel(), weights=loc.ravel(),
                               minlength=ops.dofmap.n_nodes))
    return np.concatenate(out)


def values_at_quadrature(ops: AssembledOperators, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (nt, nq, 2) and gradients (nt, nq, 2, 2) of a velocity field;
    ``grad[..., c, d]`` is d u_c / d x_d."""
    ed, cn, n = ops.edata, ops.dofmap.cell_nodes, ops.dofmap.n_nodes
    vals, grads = [], []
    for c in range(2):
        uc = u[c * n:(c + 1) * n][cn]
        vals.append(uc @ ed.phi.T)
        grads.append(np.einsum("tj,tqjd->tqd", uc, ed.grad))
    return np.stack(vals, axis=-1), np.stack(grads, axis=-2)


def field_errors(ops: AssembledOperators, u: np.ndarray, f: Callable,
                 grad_f: Callable | None = None) -> tuple[float, float]:
    """L2 error and (optionally) H1-seminorm error of ``u`` against exact fields."""
    ed = ops.edata
    x, y = ed.points[..., 0], ed.points[..., 1]
    vals, grads = values_at_quadrature(ops, u)
    ex = np.stack(f(x, y), axis=-1)
    l2 = np.sqrt(np.sum(ed.weights * np.sum((vals - ex) ** 2, axis=-1)))
    if grad_f is None:
        return float(l2), float("nan")
    g = np.asarray(grad_f(x, y))  # (2, 2, nt, nq)
    g = np.moveaxis(g, (0, 1), (-2, -1))
    h1 = np.sqrt(np.sum(ed.weights * np.sum((grads - g) ** 2, axis=(-1, -2))))
    return float(l2), float(h1)


def project_divfree(ops: AssembledOperators, v, tol: float = 1e-10) -> np.ndarray:
    """L2-orthogonal projection onto the discretely divergence-free subspace.

    ``v`` is either a callable ``v(x, y) -> (vx, vy)`` (sampled at the
    quadrature points) or a full velocity coefficient vector.
    """
    from .linsolve import KRYLOV_THRESHOLD, BlockDiagonal, SaddleSolver

    if callable(v):
        rhs = load_vector(ops, v)
    else:
        v = np.asarray(v, dtype=float)
        if v.shape != (ops.dofmap.velocity_dofs,):
            raise ValueError("coefficient vector has the wrong length")
        rhs = ops.M @ v
    f = ops.dofmap.restrict(rhs)
    K = BlockDiagonal(ops.Ms_free)
    if ops.dofmap.free_count > KRYLOV_THRESHOLD:
        solver = SaddleSolver(ops.B_free, ops.pressure_mass, 1.0, tol, strategy="krylov", K_ref=K)
    else:
        solver = SaddleSolver(ops.B_free, ops.pressure_mass, 1.0, tol)
    u, _ = solver.solve(K, f)
    return ops.dofmap.extend(u)


def project_pressure(ops: AssembledOperators, p: Callable) -> np.ndarray:
    """Elementwise means of ``p(x, y)`` shifted to zero (area-weighted) mean."""
    ed = ops.edata
    vals = np.broadcast_to(p(ed.points[..., 0], ed.points[..., 1]), ed.weights.shape)
    areas = ops.mesh.areas
    means = np.sum(ed.weights * vals, axis=1) / areas
    return means - np.dot(areas, means) / areas.sum()


def pressure_l2_error(ops: AssembledOperators, ph: np.ndarray, p: Callable) -> float:
    ed = ops.edata
    vals = np.broadcast_to(p(ed.points[..., 0], ed.points[..., 1]), ed.weights.shape)
    return float(np.sqrt(np.sum(ed.weights * (vals - ph[:, None]) ** 2)))


# -- point evaluation -------------------------------------------------------

def locate(mesh: Mesh, points: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle and barycentric coordinates of each point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    verts = mesh.vertices[mesh.triangles]
    g = bary_gradients(mesh)

    def bary(tris, pts):
        l12 = np.einsum("pid,pd->pi", g[tris][:, 1:], pts - verts[tris, 0])
        return np.column_stack([1 - l12.sum(axis=1), l12])

    k = min(8, mesh.n_triangles)
    _, cand = cKDTree(mesh.centroids()).query(points, k=k)
    cand = cand.reshape(len(points), k)
    tri = np.full(len(points), -1, dtype=np.int64)
    lam = np.zeros((len(points), 3))
    for c in range(k):
        todo = np.flatnonzero(tri < 0)
        if len(todo) == 0:
            break
        b = bary(cand[todo, c], points[todo])
        ok = np.all(b >= -tol, axis=1)
        tri[todo[ok]] = cand[todo[ok], c]
        lam[todo[ok]] = b[ok]
    for i in np.flatnonzero(tri < 0):
        all_t = np.arange(mesh.n_triangles)
        b = bary(all_t, np.repeat(points[i:i + 1], mesh.n_triangles, axis=0))
        hit = np.flatnonzero(np.all(b >= -tol, axis=1))
        if len(hit) == 0:
            raise ValueError(f"point {points[i].tolist()} lies outside the mesh")
        tri[i], lam[i] = hit[0], b[hit[0]]
    return tri, lam


def evaluate(coeffs: np.ndarray, dofmap: DofMap, points, grad: bool = False):
    """Evaluate a P2 function (scalar or vector layout) at arbitrary points.

    Returns values of shape (P,) or (P, 2); with ``grad=True`` also gradients
    of shape (P, 2) or (P, 2, 2) where ``[..., c, d] = d u_c / d x_d``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    n = dofmap.n_nodes
    if coeffs.shape == (n,):
        comps = [coeffs]
    elif coeffs.shape == (2 * n,):
        comps = [coeffs[:n], coeffs[n:]]
    else:
        raise ValueError("coefficient vector matches neither scalar nor vector layout")
    tri, lam = locate(dofmap.mesh, points)
    nodes = dofmap.cell_nodes[tri]
    phi = p2_basis(lam)
    vals = np.stack([np.sum(c[nodes] * phi, axis=1) for c in comps], axis=-1)
    if grad:
        dphi = np.einsum("pki,pid->pkd", p2_basis_dbary(lam), bary_gradients(dofmap.mesh)[tri])
        grads = np.stack([np.einsum("pk,pkd->pd", c[nodes], dphi) for c in comps], axis=-2)
    if len(comps) == 1:
        vals = vals[:, 0]
        if grad:
            grads = grads[:, 0]
    return (vals, grads) if grad else vals


# -- nested prolongation ----------------------------------------------------

_CHILD_VERTEX_BARY = np.array([
    [[1, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5]],
    [[0.5, 0.5, 0], [0, 1, 0], [0, 0.5, 0.5]],
    [[0.5, 0, 0.5], [0, 0.5, 0.5], [0, 0, 1]],
    [[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]],
])


def prolongation(coarse: DofMap, fine: DofMap) -> sp.csr_matrix:
    """Exact scalar P2 injection from a mesh to its red refinement."""
    fmesh = fine.mesh
    if fmesh.parent is not coarse.mesh:
        raise ValueError("fine dofmap is not built on the red refinement of the coarse mesh")
    child = np.arange(fmesh.n_triangles) % 4
    # barycentric (w.r.t. parent) of each P2 node of each child: (4, 6, 3)
    node_bary = np.einsum("ni,cid->cnd", P2_NODE_BARY, _CHILD_VERTEX_BARY)
    phi = p2_basis(node_bary)  # (4, 6 child nodes, 6 parent nodes)
    fnodes = fine.cell_nodes.ravel()
    first = np.unique(fnodes, return_index=True)[1]
    t, ln = np.divmod(first, 6)
    vals = phi[child[t], ln]  # (n_fine_nodes, 6)
    cols = coarse.cell_nodes[fmesh.parent_map[t]]
    rows = np.broadcast_to(fnodes[first][:, None], cols.shape)
    keep = vals != 0
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                         shape=(fine.n_nodes, coarse.n_nodes))


def vector_prolongation(P: sp.csr_matrix) -> sp.csr_matrix:
    return sp.block_diag([P, P], format="csr")


def export_coo(matrix: sp.spmatrix, path) -> None:
    """Write ``row col value`` lines for debugging."""
    m = sp.coo_matrix(matrix)
    with Path(path).open("w") as fh:
        for r, c, v in zip(m.row.tolist(), m.col.tolist(), m.data.tolist()):
            fh.write(f"{r} {c} {v!r}\n")

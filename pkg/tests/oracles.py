"""Reference implementations written independently of the package code.

Basis functions, quadrature and eigenvalue computations here do not reuse
anything from ``snse`` so that agreement is meaningful.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla


def collapsed_gauss(order: int):
    """Conical product Gauss rule on the reference triangle (0,0),(1,0),(0,1).

    Exact for polynomials of total degree <= 2 * order - 2.
    """
    g, w = np.polynomial.legendre.leggauss(order)
    g, w = 0.5 * (g + 1), 0.5 * w
    s, t = np.meshgrid(g, g, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    x = s.ravel()
    y = (t * (1 - s)).ravel()
    return np.column_stack([x, y]), (ws * wt * (1 - s)).ravel()


def p2_reference(x, y):
    """Values and reference gradients of the six P2 shape functions.

    Node order: vertices (0,0), (1,0), (0,1), then midpoints of the edges
    v0-v1, v1-v2, v2-v0.
    """
    l0, l1, l2 = 1 - x - y, x, y
    vals = np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=-1)
    # d/dx and d/dy in reference coordinates
    dx = np.stack([-(4 * l0 - 1), 4 * l1 - 1, 0 * x, 4 * (l0 - l1), 4 * l2, -4 * l2], axis=-1)
    dy = np.stack([-(4 * l0 - 1), 0 * x, 4 * l2 - 1, -4 * l1, 4 * l1, 4 * (l0 - l2)], axis=-1)
    return vals, np.stack([dx, dy], axis=-1)


def integrate_on_mesh(mesh, cell_nodes, fields, integrand, order=6):
    """Sum over triangles of integrand(values, gradients) with an affine map.

    ``fields`` are scalar nodal vectors; ``integrand`` receives lists of
    values (nq,) and physical gradients (nq, 2) for each field on one triangle.
    """
    pts, wts = collapsed_gauss(order)
    vals, dref = p2_reference(pts[:, 0], pts[:, 1])
    total = 0.0
    for t, tri in enumerate(mesh.triangles):
        p = mesh.vertices[tri]
        Jm = np.column_stack([p[1] - p[0], p[2] - p[0]])
        detJ = abs(np.linalg.det(Jm))
        Jinv = np.linalg.inv(Jm)
        grads = dref @ Jinv  # (nq, 6, 2)
        nodes = cell_nodes[t]
        fv = [vals @ f[nodes] for f in fields]
        fg = [np.einsum("qkd,k->qd", grads, f[nodes]) for f in fields]
        total += detJ * np.dot(wts, integrand(fv, fg))
    return total


def infsup_svd(A, B, mp):
    """beta_h from singular values of Mp^{-1/2} B L^{-T}, with A = L L^T.

    The pressure constants span the kernel of B^T; the smallest singular
    value on their orthogonal complement is the inf-sup constant.
    """
    L = np.linalg.cholesky(A)
    C = (B / np.sqrt(mp)[:, None])
    C = sla.solve_triangular(L, C.T, lower=True).T
    s = np.linalg.svd(C, compute_uv=False)
    s = np.sort(s)
    return float(s[1]) if s[0] < 1e-10 * s[-1] else float(s[0])


def load_oracle(mesh, cell_nodes, n_nodes, f, order=12):
    """int f . phi_i for every node, both components, by collapsed Gauss."""
    pts, wts = collapsed_gauss(order)
    vals, _ = p2_reference(pts[:, 0], pts[:, 1])
    out = np.zeros(2 * n_nodes)
    for t, tri in enumerate(mesh.triangles):
        p = mesh.vertices[tri]
        Jm = np.column_stack([p[1] - p[0], p[2] - p[0]])
        xy = p[0] + pts @ Jm.T
        fx, fy = f(xy[:, 0], xy[:, 1])
        detJ = abs(np.linalg.det(Jm))
        nodes = cell_nodes[t]
        out[nodes] += detJ * (wts * fx) @ vals
        out[n_nodes + nodes] += detJ * (wts * fy) @ vals
    return out

"""Conforming triangulations of polygons with nested red refinement.

Triangles are stored positively oriented. Local edge ``i`` of a triangle
joins local vertices ``LOCAL_EDGES[i]``; P2 edge nodes follow the same order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


class MeshError(ValueError):
    """Raised for invalid or non-conforming triangulations."""


def _edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique sorted edges, triangle-to-edge map and per-edge triangle counts."""
    nt = triangles.shape[0]
    local = triangles[:, LOCAL_EDGES]  # (nt, 3, 2)
    flat = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(flat, axis=0, return_inverse=True,
                                       return_counts=True)
    return edges, inverse.reshape(nt, 3), counts


def signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (vertices[triangles[:, i]] for i in range(3))
    d1, d2 = p1 - p0, p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with edge connectivity and quality metrics.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    edges : (ne, 2) int array, sorted vertex pairs
    triangle_edges : (nt, 3) int array, global edge of each local edge
    boundary_edge_flags : (ne,) bool
    boundary_vertex_flags : (nv,) bool
    parent_map : (nt,) int array or None
        Index of the parent triangle in ``parent`` for refined meshes.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(repr=False)
    triangle_edges: np.ndarray = field(repr=False)
    boundary_edge_flags: np.ndarray = field(repr=False)
    boundary_vertex_flags: np.ndarray = field(repr=False)
    parent_map: np.ndarray | None = field(default=None, repr=False)
    parent: Mesh | None = field(default=None, repr=False)

    @classmethod
    def from_arrays(cls, vertices, triangles, parent_map=None, parent=None) -> Mesh:
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise MeshError("triangles must have shape (nt, 3) with nt >= 1")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError("triangle index out of range")
        area = signed_areas(vertices, triangles)
        if np.any(area <= 0):
            raise MeshError(f"{np.count_nonzero(area <= 0)} triangles are not positively oriented")
        edges, tri_edges, counts = _edges(triangles)
        if np.any(counts > 2):
            raise MeshError("an edge is shared by more than two triangles")
        bflags = counts == 1
        bverts = np.zeros(len(vertices), dtype=bool)
        bverts[edges[bflags].ravel()] = True
        for arr in (vertices, triangles, edges, tri_edges, bflags, bverts):
            arr.setflags(write=False)
        return cls(vertices, triangles, edges, tri_edges, bflags, bverts,
                   parent_map, parent)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def boundary_edge_list(self) -> np.ndarray:
        return self.edges[self.boundary_edge_flags]

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    def edge_lengths(self) -> np.ndarray:
        """(nt, 3) lengths of the local edges."""
        p = self.vertices[self.triangles[:, LOCAL_EDGES]]  # (nt, 3, 2, 2)
        return np.linalg.norm(p[:, :, 1] - p[:, :, 0], axis=-1)

    def diameters(self) -> np.ndarray:
        return self.edge_lengths().max(axis=1)

    def inradii(self) -> np.ndarray:
        return 2.0 * self.areas / self.edge_lengths().sum(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameters().max())

    @property
    def shape_ratio(self) -> float:
        return float((self.diameters() / self.inradii()).max())

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def check_conforming(self) -> None:
        """Reject hanging nodes: no vertex may lie inside a boundary edge."""
        bedges = self.boundary_edge_list
        bv = np.flatnonzero(self.boundary_vertex_flags)
        pts = self.vertices[bv]
        a = self.vertices[bedges[:, 0]]
        b = self.vertices[bedges[:, 1]]
        d = b - a
        scale = np.einsum("ij,ij->i", d, d)
        for start in range(0, len(bedges), 512):
            sl = slice(start, start + 512)
            rel = pts[None, :, :] - a[sl, None, :]
            cross = d[sl, None, 0] * rel[..., 1] - d[sl, None, 1] * rel[..., 0]
            t = np.einsum("ekj,ej->ek", rel, d[sl]) / scale[sl, None]
            inside = (np.abs(cross) <= 1e-12 * scale[sl, None]) & (t > 1e-12) & (t < 1 - 1e-12)
            if inside.any():
                raise MeshError("non-conforming mesh: hanging vertex on an edge")

    # -- plain-text exchange ------------------------------------------------
    def to_text(self) -> str:
        lines = [f"vertices {self.n_vertices} triangles {self.n_triangles}"]
        lines += [f"{x!r} {y!r}" for x, y in self.vertices.tolist()]
        lines += [f"{a} {b} {c}" for a, b, c in self.triangles.tolist()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> Mesh:
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        head = rows[0]
        if len(head) != 4 or head[0] != "vertices" or head[2] != "triangles":
            raise MeshError("header must read 'vertices N triangles T'")
        nv, nt = int(head[1]), int(head[3])
        if len(rows) != 1 + nv + nt:
            raise MeshError("line count does not match header")
        verts = np.array(rows[1:1 + nv], dtype=float)
        tris = np.array(rows[1 + nv:], dtype=np.int64)
        return cls.from_arrays(verts, tris)

    @classmethod
    def load(cls, path) -> Mesh:
        return cls.from_text(Path(path).read_text())


def build_unit_square_mesh(n: int) -> Mesh:
    """Structured mesh of the unit square: each of the n*n cells split along
    its lower-left to upper-right diagonal."""
    if int(n) != n or n < 1:
        raise MeshError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (j * (n + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh.from_arrays(vertices, triangles)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: split every triangle into four through its edge midpoints.

    Child ``4k + c`` of triangle ``k`` is the corner child at local vertex ``c``
    for ``c < 3`` and the interior child for ``c = 3``.
    """
    mesh.check_conforming()
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    v = mesh.triangles
    m01, m12, m20 = (nv + mesh.triangle_edges[:, i] for i in range(3))
    children = np.stack([
        np.column_stack([v[:, 0], m01, m20]),
        np.column_stack([m01, v[:, 1], m12]),
        np.column_stack([m20, m12, v[:, 2]]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)
    parent_map = np.repeat(np.arange(mesh.n_triangles), 4)
    parent_map.setflags(write=False)
    return Mesh.from_arrays(vertices, children, parent_map=parent_map, parent=mesh)


def mesh_hierarchy(n0: int, levels: int) -> list[Mesh]:
    """``levels`` nested meshes starting from the n0 x n0 square mesh."""
    meshes = [build_unit_square_mesh(n0)]
    for _ in range(levels - 1):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes

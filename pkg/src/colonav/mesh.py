"""Indexed triangle surfaces and their validity checks.

All coordinates are meters. A mesh is immutable after construction; the
heavier derived quantities (areas, edge tables, components) are cached on
first access and safe to share across threads.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

MIN_FACE_AREA = 1e-12  # m^2


class MeshError(Exception):
    """Raised for structurally invalid meshes or malformed mesh files."""


class TriMesh:
    """Triangle surface: (n,3) float64 vertices, (m,3) int64 face indices.

    Construction validates index bounds and rejects degenerate faces.
    Winding consistency is *checked* lazily (``winding_violations``) but
    never repaired; callers decide what an inconsistency means.
    """

    def __init__(self, vertices, faces):
        v = np.ascontiguousarray(np.asarray(vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(faces, dtype=np.int64))
        if v.size == 0:
            v = v.reshape(0, 3)
        if f.size == 0:
            f = f.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n,3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (m,3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinate")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise MeshError(
                    f"face index out of range (vertex count {len(v)})")
        v.setflags(write=False)
        f.setflags(write=False)
        self.vertices = v
        self.faces = f
        if f.size:
            bad = np.nonzero(self.face_areas <= MIN_FACE_AREA)[0]
            if bad.size:
                raise MeshError(
                    f"degenerate face(s) with area <= {MIN_FACE_AREA}: "
                    f"{bad[:8].tolist()}")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(m,3,3) corner positions."""
        return self.vertices[self.faces]

    @cached_property
    def face_areas(self) -> np.ndarray:
        t = self.triangles()
        c = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return 0.5 * np.linalg.norm(c, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit normals following face winding."""
        t = self.triangles()
        c = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        n = np.linalg.norm(c, axis=1)
        return c / n[:, None]

    @property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def volume(self) -> float:
        """Signed enclosed volume by the divergence theorem.

        Only meaningful for closed surfaces; positive for outward winding.
        """
        t = self.triangles()
        return float(np.einsum("ij,ij->i", t[:, 0],
                               np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    @cached_property
    def _directed_edges(self) -> np.ndarray:
        f = self.faces
        return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])

    @cached_property
    def edges_unique(self) -> np.ndarray:
        """(e,2) undirected edges, each row sorted, deduplicated."""
        e = np.sort(self._directed_edges, axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def _edge_face_counts(self) -> np.ndarray:
        e = np.sort(self._directed_edges, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    @property
    def is_watertight(self) -> bool:
        """Every undirected edge shared by exactly two faces."""
        if self.n_faces == 0:
            return False
        return bool(np.all(self._edge_face_counts == 2))

    @cached_property
    def winding_violations(self) -> np.ndarray:
        """Undirected edges whose two incident faces traverse them in the
        same direction (inconsistent winding). (k,2) array, possibly empty.
        """
        de = self._directed_edges
        # A consistently wound interior edge appears once as (a,b) and once
        # as (b,a). Duplicated *directed* edges mark violations.
        uniq, counts = np.unique(de, axis=0, return_counts=True)
        dup = uniq[counts > 1]
        return np.unique(np.sort(dup, axis=1), axis=0)

    @cached_property
    def vertex_adjacency(self):
        """Sparse symmetric vertex adjacency (boolean)."""
        e = self.edges_unique
        n = self.n_vertices
        if len(e) == 0:
            return coo_matrix((n, n)).tocsr()
        data = np.ones(len(e), dtype=np.int8)
        m = coo_matrix((data, (e[:, 0], e[:, 1])), shape=(n, n))
        return (m + m.T).tocsr()

    @cached_property
    def connected_component_labels(self) -> np.ndarray:
        _, labels = connected_components(self.vertex_adjacency,
                                         directed=False)
        return labels

    @property
    def n_components(self) -> int:
        if self.n_vertices == 0:
            return 0
        return int(self.connected_component_labels.max()) + 1

    @property
    def is_connected(self) -> bool:
        return self.n_components <= 1

    def __repr__(self):
        return f"TriMesh({self.n_vertices} vertices, {self.n_faces} faces)"

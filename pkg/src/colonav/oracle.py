"""Brute-force visibility reference.

Deliberately a different algorithm from the BVH path: plane intersection
plus inside-triangle tests via edge cross products, vectorized over all
faces, nearest hit by first-minimum argmin (which is exactly the lower-id
tie-break). Used to verify BVH traversal and marker results; never used
by the fast path itself.
"""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh

RAY_TMIN = 1e-9


class NaiveRaycaster:
    """Precomputes per-face quantities once; each ray is one vectorized
    pass over every face."""

    def __init__(self, mesh: TriMesh):
        tris = mesh.triangles()
        self.a = np.ascontiguousarray(tris[:, 0])
        self.b = np.ascontiguousarray(tris[:, 1])
        self.c = np.ascontiguousarray(tris[:, 2])
        self.normal = np.cross(self.b - self.a, self.c - self.a)
        self.n_faces = mesh.n_faces

    def cast(self, origin, direction, tmin: float = RAY_TMIN):
        """Returns (face id, t) or (-1, inf)."""
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(direction, dtype=np.float64)
        denom = self.normal @ d
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.einsum("ij,ij->i", self.normal, self.a - o) / denom
        valid = np.isfinite(t) & (t > tmin)
        if not valid.any():
            return -1, np.inf
        p = o + t[:, None] * d
        for e0, e1 in ((self.a, self.b), (self.b, self.c),
                       (self.c, self.a)):
            side = np.einsum("ij,ij->i", np.cross(e1 - e0, p - e0),
                             self.normal)
            valid &= side >= 0.0
            if not valid.any():
                return -1, np.inf
        t = np.where(valid, t, np.inf)
        fid = int(np.argmin(t))
        if not np.isfinite(t[fid]):
            return -1, np.inf
        return fid, float(t[fid])

    def cast_many(self, origins, dirs, tmin: float = RAY_TMIN):
        origins = np.asarray(origins, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        n = len(origins)
        out_f = np.empty(n, dtype=np.int64)
        out_t = np.empty(n, dtype=np.float64)
        for i in range(n):
            out_f[i], out_t[i] = self.cast(origins[i], dirs[i], tmin)
        return out_f, out_t


def point_inside(mesh: TriMesh, point,
                 caster: NaiveRaycaster | None = None) -> bool:
    """Ray-parity containment test with a fixed irrational-ish direction
    to dodge edge-aligned degeneracies."""
    caster = caster or NaiveRaycaster(mesh)
    o = np.asarray(point, dtype=np.float64)
    d = np.array([0.2873519, 0.6642347, 0.6903672])
    d = d / np.linalg.norm(d)
    crossings = 0
    t_seen = -np.inf
    guard = 0
    while True:
        fid, t = caster.cast(o, d, tmin=max(t_seen, 0.0) + 1e-9)
        if fid < 0:
            break
        crossings += 1
        t_seen = t
        guard += 1
        if guard > 10000:
            raise RuntimeError("containment test did not terminate")
    return crossings % 2 == 1

"""Axis-aligned BVH over triangle faces with jitted ray traversal.

Median split on the longest centroid axis, leaf capacity 8 by default.
Traversal applies boundary-inclusive Moller-Trumbore intersection and a
deterministic tie-break (lower face id wins at equal t), so results are
identical to a brute-force scan over all faces in id order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .mesh import TriMesh

DEFAULT_LEAF_SIZE = 8
RAY_TMIN = 1e-9


class BvhError(Exception):
    pass


@dataclass(frozen=True)
class RayHit:
    face: int
    t: float
    point: np.ndarray


class Bvh:
    """Flat-array BVH. Interior nodes store child indices; leaves store a
    [start, start+count) range into the face ordering."""

    def __init__(self, mesh: TriMesh, leaf_size: int = DEFAULT_LEAF_SIZE):
        if mesh.n_faces == 0:
            raise BvhError("cannot build a BVH over an empty mesh")
        if leaf_size < 1:
            raise BvhError("leaf_size must be >= 1")
        self.mesh = mesh
        self.leaf_size = leaf_size
        tris = mesh.triangles()
        self.triangles = np.ascontiguousarray(tris, dtype=np.float64)
        lo = tris.min(axis=1)
        hi = tris.max(axis=1)
        centroids = tris.mean(axis=1)

        order = np.arange(mesh.n_faces, dtype=np.int64)
        node_min, node_max = [], []
        node_left, node_right = [], []
        node_start, node_count = [], []

        def build(lo_idx: int, hi_idx: int) -> int:
            node = len(node_min)
            idx = order[lo_idx:hi_idx]
            node_min.append(lo[idx].min(axis=0))
            node_max.append(hi[idx].max(axis=0))
            node_left.append(-1)
            node_right.append(-1)
            node_start.append(-1)
            node_count.append(0)
            n = hi_idx - lo_idx
            if n <= leaf_size:
                node_start[node] = lo_idx
                node_count[node] = n
                return node
            c = centroids[idx]
            extents = c.max(axis=0) - c.min(axis=0)
            axis = int(np.argmax(extents))
            mid = n // 2
            part = np.argpartition(c[:, axis], mid)
            order[lo_idx:hi_idx] = idx[part]
            if extents[axis] <= 0.0:
                # identical centroids; arbitrary split keeps depth bounded
                pass
            node_left[node] = build(lo_idx, lo_idx + mid)
            node_right[node] = build(lo_idx + mid, hi_idx)
            return node

        import sys
        limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(limit, 10000))
        try:
            build(0, mesh.n_faces)
        finally:
            sys.setrecursionlimit(limit)

        self.node_min = np.ascontiguousarray(node_min, dtype=np.float64)
        self.node_max = np.ascontiguousarray(node_max, dtype=np.float64)
        self.node_left = np.ascontiguousarray(node_left, dtype=np.int64)
        self.node_right = np.ascontiguousarray(node_right, dtype=np.int64)
        self.node_start = np.ascontiguousarray(node_start, dtype=np.int64)
        self.node_count = np.ascontiguousarray(node_count, dtype=np.int64)
        self.face_order = np.ascontiguousarray(order, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self.node_min)

    def leaf_face_sets(self):
        for i in range(self.n_nodes):
            if self.node_count[i] > 0:
                s = self.node_start[i]
                yield self.face_order[s:s + self.node_count[i]]

    def _kernel_args(self):
        return (self.node_min, self.node_max, self.node_left,
                self.node_right, self.node_start, self.node_count,
                self.face_order, self.triangles)


def build_bvh(mesh: TriMesh, leaf_size: int = DEFAULT_LEAF_SIZE) -> Bvh:
    return Bvh(mesh, leaf_size)


@nb.njit(cache=True, fastmath=False)
def _tri_hit(ox, oy, oz, dx, dy, dz, tri, tmin):
    """Moller-Trumbore with inclusive boundaries; returns t or -1.

    Inclusive u/v bounds make rays through shared edges hit both incident
    faces at equal t; the caller's lower-id tie-break then yields exactly
    one winner, which is the watertight rule the tests assert.
    """
    e1x = tri[1, 0] - tri[0, 0]
    e1y = tri[1, 1] - tri[0, 1]
    e1z = tri[1, 2] - tri[0, 2]
    e2x = tri[2, 0] - tri[0, 0]
    e2y = tri[2, 1] - tri[0, 1]
    e2z = tri[2, 2] - tri[0, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return -1.0
    inv = 1.0 / det
    tx = ox - tri[0, 0]
    ty = oy - tri[0, 1]
    tz = oz - tri[0, 2]
    u = (tx * px + ty * py + tz * pz) * inv
    if not (0.0 <= u <= 1.0):
        return -1.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if not (v >= 0.0 and u + v <= 1.0):
        return -1.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if not (t > tmin):
        return -1.0
    return t


@nb.njit(cache=True, fastmath=False)
def _box_tnear(bmin, bmax, ox, oy, oz, dx, dy, dz):
    """Slab test; returns entry t or inf when the ray misses the box."""
    tlo = -np.inf
    thi = np.inf
    for axis in range(3):
        if axis == 0:
            o, d, lo, hi = ox, dx, bmin[0], bmax[0]
        elif axis == 1:
            o, d, lo, hi = oy, dy, bmin[1], bmax[1]
        else:
            o, d, lo, hi = oz, dz, bmin[2], bmax[2]
        if d == 0.0:
            if o < lo or o > hi:
                return np.inf
        else:
            t1 = (lo - o) / d
            t2 = (hi - o) / d
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tlo:
                tlo = t1
            if t2 < thi:
                thi = t2
            if tlo > thi:
                return np.inf
    if thi < 0.0:
        return np.inf
    return tlo if tlo > 0.0 else 0.0


@nb.njit(cache=True, fastmath=False)
def _raycast_one(nmin, nmax, nleft, nright, nstart, ncount, order, tris,
                 ox, oy, oz, dx, dy, dz, tmin):
    stack = np.empty(128, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    best_t = np.inf
    best_f = np.int64(-1)
    while sp > 0:
        sp -= 1
        node = stack[sp]
        tnear = _box_tnear(nmin[node], nmax[node], ox, oy, oz, dx, dy, dz)
        # equality kept: an equal-t hit with a lower face id may live here
        if tnear == np.inf or tnear > best_t:
            continue
        cnt = ncount[node]
        if cnt > 0:
            s = nstart[node]
            for k in range(cnt):
                fid = order[s + k]
                t = _tri_hit(ox, oy, oz, dx, dy, dz, tris[fid], tmin)
                if t > 0.0 and (t < best_t
                                or (t == best_t and fid < best_f)):
                    best_t = t
                    best_f = fid
        else:
            stack[sp] = nleft[node]
            sp += 1
            stack[sp] = nright[node]
            sp += 1
    return best_f, best_t


@nb.njit(cache=True, parallel=True, fastmath=False)
def _raycast_many(nmin, nmax, nleft, nright, nstart, ncount, order, tris,
                  origins, dirs, tmin, out_f, out_t):
    for i in nb.prange(origins.shape[0]):
        f, t = _raycast_one(nmin, nmax, nleft, nright, nstart, ncount,
                            order, tris,
                            origins[i, 0], origins[i, 1], origins[i, 2],
                            dirs[i, 0], dirs[i, 1], dirs[i, 2], tmin)
        out_f[i] = f
        out_t[i] = t


def raycast(bvh: Bvh, origin, direction,
            tmin: float = RAY_TMIN) -> RayHit | None:
    """Nearest intersection along a unit direction, or None."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    f, t = _raycast_one(*bvh._kernel_args(),
                        o[0], o[1], o[2], d[0], d[1], d[2], tmin)
    if f < 0:
        return None
    return RayHit(int(f), float(t), o + t * d)


def raycast_many(bvh: Bvh, origins: np.ndarray, dirs: np.ndarray,
                 tmin: float = RAY_TMIN) -> tuple[np.ndarray, np.ndarray]:
    """Batched raycast; returns (face ids, ts) with -1/inf for misses."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = len(origins)
    out_f = np.empty(n, dtype=np.int64)
    out_t = np.empty(n, dtype=np.float64)
    _raycast_many(*bvh._kernel_args(), origins, dirs, tmin, out_f, out_t)
    return out_f, out_t

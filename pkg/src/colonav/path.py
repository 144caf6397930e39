"""Smooth, arc-length-parameterized centerlines with twist-free frames.

The moving frame is a rotation-minimizing frame propagated by the
double-reflection method, which stays defined on straight segments and
through inflections where a Frenet frame would flip or vanish. Frames are
right-handed (tangent, normal, binormal) triples.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .rotations import matrix_to_quat, quat_slerp, quat_to_matrix

DEFAULT_DS = 0.005  # m
DEFAULT_SMOOTH_ITERATIONS = 25
DEFAULT_SMOOTH_LAMBDA = 0.5

PATH_FORMAT_VERSION = 1


class PathError(Exception):
    pass


@dataclass(frozen=True)
class CenterlinePath:
    """Sampled centerline.

    positions: (n,3); s: (n,) strictly increasing arc length from 0 to
    ``length``; tangents/normals/binormals: (n,3) unit vectors, present
    after ``attach_frames``. ``radii`` is an optional per-sample lumen
    radius estimate (m) carried along from skeleton extraction or phantom
    ground truth; offset clamping falls back to it where a ray escapes
    through an open end.
    """
    positions: np.ndarray
    s: np.ndarray
    tangents: np.ndarray | None = None
    normals: np.ndarray | None = None
    binormals: np.ndarray | None = None
    radii: np.ndarray | None = field(default=None)

    def __post_init__(self):
        for name in ("positions", "s", "tangents", "normals", "binormals",
                     "radii"):
            a = getattr(self, name)
            if a is not None:
                a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
                a.setflags(write=False)
                object.__setattr__(self, name, a)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise PathError("positions must be (n,3)")
        if len(self.s) != len(self.positions):
            raise PathError("s and positions length mismatch")
        ds = np.diff(self.s)
        if len(self.s) and (self.s[0] != 0.0 or np.any(ds <= 0)):
            raise PathError("s must start at 0 and increase strictly")

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def n_samples(self) -> int:
        return len(self.s)

    @property
    def has_frames(self) -> bool:
        return self.tangents is not None

    def frame_matrix(self, i: int) -> np.ndarray:
        """Columns (tangent, normal, binormal) at sample i."""
        return np.column_stack(
            (self.tangents[i], self.normals[i], self.binormals[i]))


@dataclass(frozen=True)
class PathPoint:
    position: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    binormal: np.ndarray

    def frame_matrix(self) -> np.ndarray:
        return np.column_stack((self.tangent, self.normal, self.binormal))


def polyline_length(points: np.ndarray) -> float:
    p = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def smooth(points: np.ndarray, iterations: int = DEFAULT_SMOOTH_ITERATIONS,
           lam: float = DEFAULT_SMOOTH_LAMBDA) -> np.ndarray:
    """Endpoint-preserving Laplacian smoothing of a polyline.

    Each pass moves interior point i by lam toward the midpoint of its
    neighbors. Total length never increases.
    """
    p = np.array(points, dtype=np.float64)
    if len(p) < 3:
        return p
    if not (0.0 < lam <= 1.0):
        raise PathError(f"lambda must be in (0,1], got {lam}")
    for _ in range(iterations):
        mid = 0.5 * (p[:-2] + p[2:])
        p[1:-1] += lam * (mid - p[1:-1])
    return p


def reparameterize(points: np.ndarray, ds: float = DEFAULT_DS,
                   radii: np.ndarray | None = None) -> CenterlinePath:
    """Resample a polyline at uniform arc-length spacing ds.

    The final sample always lands exactly on the total length, so the last
    interval may be shorter than ds.
    """
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 2:
        raise PathError("need at least 2 points")
    if ds <= 0:
        raise PathError("ds must be positive")
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    if total <= 0:
        raise PathError("degenerate polyline (zero length)")
    if ds > total:
        raise PathError(f"ds={ds} exceeds polyline length {total}")
    n_whole = int(math.floor(total / ds + 1e-9))
    svals = [i * ds for i in range(n_whole + 1)]
    if total - svals[-1] > 1e-9 * max(1.0, total):
        svals.append(total)
    else:
        svals[-1] = total
    svals = np.array(svals, dtype=np.float64)
    out = np.column_stack([np.interp(svals, cum, p[:, k]) for k in range(3)])
    r = None
    if radii is not None:
        r = np.interp(svals, cum, np.asarray(radii, dtype=np.float64))
    return CenterlinePath(out, svals, radii=r)


def _normalize_rows(v: np.ndarray, what: str) -> np.ndarray:
    n = np.linalg.norm(v, axis=1)
    bad = np.nonzero(n < 1e-15)[0]
    if bad.size:
        raise PathError(f"zero-length {what} at sample {int(bad[0])}")
    return v / n[:, None]


def _initial_normal(t0: np.ndarray) -> np.ndarray:
    # world axis least aligned with the first tangent, projected into the
    # plane perpendicular to it
    axis = np.eye(3)[int(np.argmin(np.abs(t0)))]
    n0 = axis - np.dot(axis, t0) * t0
    return n0 / np.linalg.norm(n0)


def rmf_normals(positions: np.ndarray, tangents: np.ndarray,
                n0: np.ndarray | None = None) -> np.ndarray:
    """Propagate a normal field with the double-reflection method.

    Fourth-order accurate rotation-minimizing frames: reflect the previous
    frame across the bisecting plane of the step, then across the plane
    bisecting the reflected and next tangents.
    """
    x = np.asarray(positions, dtype=np.float64)
    t = np.asarray(tangents, dtype=np.float64)
    n = np.empty_like(x)
    n[0] = _initial_normal(t[0]) if n0 is None else n0
    for i in range(len(x) - 1):
        v1 = x[i + 1] - x[i]
        c1 = np.dot(v1, v1)
        if c1 < 1e-30:
            raise PathError(f"duplicate sample point at index {i}")
        rl = n[i] - (2.0 / c1) * np.dot(v1, n[i]) * v1
        tl = t[i] - (2.0 / c1) * np.dot(v1, t[i]) * v1
        v2 = t[i + 1] - tl
        c2 = np.dot(v2, v2)
        if c2 < 1e-30:
            nn = rl
        else:
            nn = rl - (2.0 / c2) * np.dot(v2, rl) * v2
        # re-orthogonalize against the tangent to stop drift accumulating
        nn = nn - np.dot(nn, t[i + 1]) * t[i + 1]
        n[i + 1] = nn / np.linalg.norm(nn)
    return n


def attach_frames(path: CenterlinePath) -> CenterlinePath:
    """Compute tangents (central differences) and rotation-minimizing
    normal/binormal fields for a sampled path."""
    p = path.positions
    if len(p) < 2:
        raise PathError("need at least 2 samples for frames")
    t = np.empty_like(p)
    t[0] = p[1] - p[0]
    t[-1] = p[-1] - p[-2]
    if len(p) > 2:
        t[1:-1] = p[2:] - p[:-2]
    t = _normalize_rows(t, "tangent")
    n = rmf_normals(p, t)
    b = np.cross(t, n)
    b = _normalize_rows(b, "binormal")
    return CenterlinePath(p, path.s, t, n, b, radii=path.radii)


def eval_path(path: CenterlinePath, s: float) -> PathPoint:
    """Position and frame at arc length s.

    Positions interpolate linearly; frames rotate at constant angular
    velocity between the bracketing samples. Exact at sample points.
    """
    if not path.has_frames:
        raise PathError("path has no frames; call attach_frames first")
    if s < 0.0 or s > path.length:
        raise PathError(f"s={s} outside [0, {path.length}]")
    sv = path.s
    i = int(np.searchsorted(sv, s, side="right")) - 1
    i = min(max(i, 0), len(sv) - 2)
    if s == sv[i]:
        return PathPoint(path.positions[i], path.tangents[i],
                         path.normals[i], path.binormals[i])
    if s == sv[i + 1]:
        j = i + 1
        return PathPoint(path.positions[j], path.tangents[j],
                         path.normals[j], path.binormals[j])
    u = (s - sv[i]) / (sv[i + 1] - sv[i])
    pos = (1.0 - u) * path.positions[i] + u * path.positions[i + 1]
    qa = matrix_to_quat(path.frame_matrix(i))
    qb = matrix_to_quat(path.frame_matrix(i + 1))
    m = quat_to_matrix(quat_slerp(qa, qb, u))
    return PathPoint(pos, m[:, 0], m[:, 1], m[:, 2])


def local_radius(path: CenterlinePath, s: float) -> float | None:
    if path.radii is None:
        return None
    return float(np.interp(s, path.s, path.radii))


def make_centerline(points: np.ndarray, *, radii=None,
                    smooth_iterations: int = DEFAULT_SMOOTH_ITERATIONS,
                    smooth_lambda: float = DEFAULT_SMOOTH_LAMBDA,
                    ds: float = DEFAULT_DS) -> CenterlinePath:
    """smooth -> reparameterize -> attach_frames in one call."""
    pts = smooth(points, smooth_iterations, smooth_lambda)
    if radii is not None:
        radii = np.asarray(radii, dtype=np.float64)
    cp = reparameterize(pts, ds, radii=radii)
    return attach_frames(cp)


# ------------------------------------------------------------- file I/O
#
# Path documents are JSON: {version, length_m, samples:[{s,pos,t,n,b[,r]}]}.
# Floats are emitted with repr, so load(dump(p)) -> dump is byte-identical.

def dump_path(path: CenterlinePath) -> str:
    if not path.has_frames:
        raise PathError("refusing to serialize a frameless path")
    samples = []
    for i in range(path.n_samples):
        rec = {
            "s": float(path.s[i]),
            "pos": [float(c) for c in path.positions[i]],
            "t": [float(c) for c in path.tangents[i]],
            "n": [float(c) for c in path.normals[i]],
            "b": [float(c) for c in path.binormals[i]],
        }
        if path.radii is not None:
            rec["r"] = float(path.radii[i])
        samples.append(rec)
    doc = {
        "version": PATH_FORMAT_VERSION,
        "length_m": path.length,
        "samples": samples,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def parse_path(text: str) -> CenterlinePath:
    doc = json.loads(text)
    if doc.get("version") != PATH_FORMAT_VERSION:
        raise PathError(f"unsupported path format version "
                        f"{doc.get('version')!r}")
    samples = doc["samples"]
    if not samples:
        raise PathError("empty path document")
    pos = np.array([r["pos"] for r in samples], dtype=np.float64)
    s = np.array([r["s"] for r in samples], dtype=np.float64)
    t = np.array([r["t"] for r in samples], dtype=np.float64)
    n = np.array([r["n"] for r in samples], dtype=np.float64)
    b = np.array([r["b"] for r in samples], dtype=np.float64)
    radii = None
    if all("r" in r for r in samples):
        radii = np.array([r["r"] for r in samples], dtype=np.float64)
    return CenterlinePath(pos, s, t, n, b, radii=radii)


def save_path(path: CenterlinePath, filename) -> None:
    with open(filename, "w") as fh:
        fh.write(dump_path(path))


def load_path(filename) -> CenterlinePath:
    with open(filename) as fh:
        return parse_path(fh.read())

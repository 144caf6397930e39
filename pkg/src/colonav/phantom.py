"""Synthetic tubular phantoms with analytic ground-truth centerlines.

Four kinds: straight-tube, torus-arc, s-curve, haustral-tube. All are
watertight capped tubes built as `rings` circles of `segments` vertices
plus two cap apices, so vertex count is rings*segments + 2.

The haustral tube modulates the wall radius as
    r(s) = R - A*(1 + cos(2*pi*s/lambda))/2
which leaves deep ring folds (inner radius R - A) at multiples of the
fold wavelength. Default fold depth/spacing are deliberately pronounced:
they are chosen so that wall regions on the fold flanks are genuinely
invisible to an axis-bound camera at 110 deg field of view, the scenario
the coverage sweeps exist to measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, TriMesh
from .path import rmf_normals

STRAIGHT_TUBE = "straight-tube"
TORUS_ARC = "torus-arc"
S_CURVE = "s-curve"
HAUSTRAL_TUBE = "haustral-tube"

KINDS = (STRAIGHT_TUBE, TORUS_ARC, S_CURVE, HAUSTRAL_TUBE)


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters for one synthetic tube.

    radius/length are meters; arc_angle radians (torus-arc); amplitude is
    the lateral excursion of the s-curve axis; fold_amplitude and
    fold_wavelength shape the haustral wall. seed is reserved for future
    randomized variants and keeps generation deterministic today.
    """
    kind: str = STRAIGHT_TUBE
    radius: float = 0.025
    length: float = 0.5
    arc_radius: float = 0.2
    arc_angle: float = math.pi
    amplitude: float = 0.06
    fold_amplitude: float = 0.02
    fold_wavelength: float = 0.008
    rings: int = 64
    segments: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MeshError(f"unknown phantom kind {self.kind!r}")
        if self.radius <= 0:
            raise MeshError("radius must be positive")
        if self.rings < 8 or self.segments < 8:
            raise MeshError("rings and segments must be >= 8")
        if self.kind == HAUSTRAL_TUBE:
            if not (0 < self.fold_amplitude < self.radius):
                raise MeshError("fold amplitude must be in (0, radius)")
            if self.fold_wavelength <= 0:
                raise MeshError("fold wavelength must be positive")


def default_spec(kind: str, **overrides) -> PhantomSpec:
    """Per-kind defaults sized for desk-scale runtime."""
    base: dict = {"kind": kind}
    if kind == HAUSTRAL_TUBE:
        base.update(length=0.2, rings=250, segments=48)
    elif kind == TORUS_ARC:
        base.update(rings=96)
    elif kind == S_CURVE:
        base.update(rings=96)
    base.update(overrides)
    return PhantomSpec(**base)


def _axis_samples(spec: PhantomSpec):
    """Centerline points, per-ring wall radii for the phantom kind."""
    n = spec.rings
    if spec.kind in (STRAIGHT_TUBE, HAUSTRAL_TUBE):
        s = np.linspace(0.0, spec.length, n)
        pts = np.column_stack([s, np.zeros(n), np.zeros(n)])
        if spec.kind == HAUSTRAL_TUBE:
            radii = spec.radius - spec.fold_amplitude * 0.5 * (
                1.0 + np.cos(2.0 * math.pi * s / spec.fold_wavelength))
        else:
            radii = np.full(n, spec.radius)
        return pts, radii
    if spec.kind == TORUS_ARC:
        u = np.linspace(0.0, spec.arc_angle, n)
        pts = np.column_stack([spec.arc_radius * np.cos(u),
                               spec.arc_radius * np.sin(u),
                               np.zeros(n)])
        return pts, np.full(n, spec.radius)
    if spec.kind == S_CURVE:
        t = np.linspace(0.0, 1.0, n)
        pts = np.column_stack([spec.length * t,
                               spec.amplitude * np.sin(2.0 * math.pi * t),
                               np.zeros(n)])
        return pts, np.full(n, spec.radius)
    raise MeshError(f"unknown phantom kind {spec.kind!r}")


def generate_phantom(spec: PhantomSpec) -> tuple[TriMesh, np.ndarray]:
    """Build the capped tube mesh and return it with the analytic
    centerline sampled at ring resolution.

    Raises MeshError when the tessellation is too coarse to produce a
    valid watertight surface.
    """
    centers, radii = _axis_samples(spec)
    n_rings, n_seg = spec.rings, spec.segments

    # twist-free ring frames along the axis
    tangents = np.empty_like(centers)
    tangents[0] = centers[1] - centers[0]
    tangents[-1] = centers[-1] - centers[-2]
    tangents[1:-1] = centers[2:] - centers[:-2]
    tangents /= np.linalg.norm(tangents, axis=1)[:, None]
    normals = rmf_normals(centers, tangents)
    binormals = np.cross(tangents, normals)

    theta = 2.0 * math.pi * np.arange(n_seg) / n_seg
    cos_t, sin_t = np.cos(theta), np.sin(theta)

    verts = np.empty((n_rings * n_seg + 2, 3))
    for i in range(n_rings):
        ring_dirs = np.outer(cos_t, normals[i]) + np.outer(sin_t,
                                                           binormals[i])
        verts[i * n_seg:(i + 1) * n_seg] = centers[i] + radii[i] * ring_dirs
    apex0 = n_rings * n_seg
    apex1 = apex0 + 1
    verts[apex0] = centers[0]
    verts[apex1] = centers[-1]

    faces = []
    for i in range(n_rings - 1):
        for j in range(n_seg):
            a = i * n_seg + j
            b = i * n_seg + (j + 1) % n_seg
            c = (i + 1) * n_seg + (j + 1) % n_seg
            d = (i + 1) * n_seg + j
            faces.append((a, b, c))
            faces.append((a, c, d))
    for j in range(n_seg):
        faces.append((apex0, (j + 1) % n_seg, j))
        base = (n_rings - 1) * n_seg
        faces.append((apex1, base + j, base + (j + 1) % n_seg))

    try:
        mesh = TriMesh(verts, np.array(faces, dtype=np.int64))
    except MeshError as exc:
        raise MeshError(f"tessellation too coarse for a valid surface: "
                        f"{exc}") from exc
    if not mesh.is_watertight:
        raise MeshError("tessellation too coarse: surface not watertight")
    return mesh, centers


def ground_truth_path_points(spec: PhantomSpec,
                             oversample: int = 4) -> tuple[np.ndarray,
                                                           np.ndarray]:
    """Densified analytic centerline and wall radii (for reference paths
    that skip skeletonization)."""
    dense = PhantomSpec(**{**spec.__dict__,
                           "rings": spec.rings * oversample})
    return _axis_samples(dense)

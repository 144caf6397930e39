"""Surface coverage and marker detectability under camera sweeps.

A sweep walks the centerline at fixed arc-length steps, optionally in both
directions and with a discretized head-yaw model standing in for a human
looking around. Every pose casts one ray through each pixel center of a
square-aspect perspective frustum; a face counts as seen when it is the
nearest hit of at least one ray over the whole sweep.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bvh import Bvh, raycast_many
from .mesh import TriMesh
from .oracle import NaiveRaycaster, point_inside
from .path import CenterlinePath
from .rotations import quat_from_axis_angle
from .travel import (ANTEGRADE, DEFAULT_FOV_DEG, RETROGRADE, TravelPolicy,
                     TravelState, pose)

DEFAULT_GRID = 256
DEFAULT_DS = 0.005
DEFAULT_HEAD_HALF_ANGLE = math.pi / 2
DEFAULT_HEAD_STOPS = 5
CAPSULE_SAMPLES = 26


class VisibilityError(Exception):
    pass


@dataclass(frozen=True)
class Marker:
    """Capsule lesion stand-in: segment between p0 and p1 plus a radius.
    Defaults match the 3 cm x 1 cm capsules used for the detection task."""
    id: str
    p0: np.ndarray
    p1: np.ndarray
    radius: float = 0.005

    def __post_init__(self):
        for name in ("p0", "p1"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.radius <= 0:
            raise VisibilityError("marker radius must be positive")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.p0 + self.p1)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    def to_payload(self) -> dict:
        return {"id": self.id, "p0": [float(c) for c in self.p0],
                "p1": [float(c) for c in self.p1], "radius": self.radius}

    @classmethod
    def from_payload(cls, d: dict):
        return cls(d["id"], np.array(d["p0"]), np.array(d["p1"]),
                   d.get("radius", 0.005))


def make_marker(id: str, center, axis, length: float = 0.03,
                radius: float = 0.005) -> Marker:
    c = np.asarray(center, dtype=np.float64)
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    h = 0.5 * max(length - 2.0 * radius, 0.0)
    return Marker(id, c - h * a, c + h * a, radius)


def capsule_surface_points(marker: Marker) -> np.ndarray:
    """26 deterministic samples: two apex points plus three rings of eight
    around the body (both cap junctions and the mid-section)."""
    axis = marker.p1 - marker.p0
    ln = np.linalg.norm(axis)
    if ln < 1e-15:
        axis = np.array([0.0, 0.0, 1.0])
    else:
        axis = axis / ln
    ref = np.eye(3)[int(np.argmin(np.abs(axis)))]
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    pts = [marker.p0 - marker.radius * axis,
           marker.p1 + marker.radius * axis]
    centers = [marker.p0, 0.5 * (marker.p0 + marker.p1), marker.p1]
    for c in centers:
        for k in range(8):
            ang = 2.0 * math.pi * k / 8.0
            pts.append(c + marker.radius * (math.cos(ang) * u
                                            + math.sin(ang) * v))
    return np.array(pts)


def save_markers(markers, filename) -> None:
    with open(filename, "w") as fh:
        json.dump({"markers": [m.to_payload() for m in markers]}, fh,
                  indent=1, sort_keys=True)


def load_markers(filename) -> list[Marker]:
    with open(filename) as fh:
        doc = json.load(fh)
    return [Marker.from_payload(d) for d in doc["markers"]]


# ------------------------------------------------------------- frustum

def frustum_directions(pose_, grid: int) -> np.ndarray:
    """Unit directions through the pixel centers of a grid x grid square
    frustum with the pose's vertical FOV."""
    if grid < 2:
        raise VisibilityError("grid must be >= 2")
    tan_half = math.tan(math.radians(pose_.fov_deg) / 2.0)
    lin = (2.0 * (np.arange(grid) + 0.5) / grid - 1.0) * tan_half
    uu, vv = np.meshgrid(lin, lin)
    dirs = (pose_.view[None, :]
            + uu.reshape(-1, 1) * pose_.right[None, :]
            + vv.reshape(-1, 1) * pose_.up[None, :])
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def in_frustum(pose_, points: np.ndarray) -> np.ndarray:
    """Square-frustum membership for points (k,3)."""
    tan_half = math.tan(math.radians(pose_.fov_deg) / 2.0)
    rel = np.atleast_2d(points) - pose_.position
    z = rel @ pose_.view
    x = rel @ pose_.right
    y = rel @ pose_.up
    with np.errstate(invalid="ignore"):
        ok = (z > 0) & (np.abs(x) <= tan_half * z) & (np.abs(y)
                                                      <= tan_half * z)
    return ok


def visible_set(pose_, bvh: Bvh, grid: int = DEFAULT_GRID) -> np.ndarray:
    """Face ids that are the nearest hit of at least one frustum ray."""
    dirs = frustum_directions(pose_, grid)
    origins = np.broadcast_to(pose_.position, dirs.shape)
    fids, _ = raycast_many(bvh, origins, dirs)
    hit = fids[fids >= 0]
    return np.unique(hit)


# --------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class HeadModel:
    """fixed, or a symmetric yaw sweep of `stops` evenly spaced stops
    across [-half_angle, +half_angle] about the pose's up axis."""
    kind: str = "fixed"
    half_angle: float = DEFAULT_HEAD_HALF_ANGLE
    stops: int = DEFAULT_HEAD_STOPS

    def __post_init__(self):
        if self.kind not in ("fixed", "yaw-sweep"):
            raise VisibilityError(f"unknown head model {self.kind!r}")
        if self.kind == "yaw-sweep" and self.stops < 2:
            raise VisibilityError("yaw sweep needs >= 2 stops")

    def yaw_angles(self) -> list[float]:
        if self.kind == "fixed":
            return [0.0]
        return list(np.linspace(-self.half_angle, self.half_angle,
                                self.stops))

    def label(self) -> str:
        if self.kind == "fixed":
            return "fixed"
        return (f"yaw-sweep +-{math.degrees(self.half_angle):.0f}deg "
                f"x{self.stops}")


def station_values(length: float, ds: float) -> np.ndarray:
    """{0, ds, 2ds, ...} plus the exact endpoint. Halving ds yields a
    superset, which is what makes coverage monotone under refinement."""
    if ds <= 0:
        raise VisibilityError("ds must be positive")
    n = int(math.floor(length / ds + 1e-9))
    vals = [i * ds for i in range(n + 1)]
    if length - vals[-1] > 1e-12:
        vals.append(length)
    else:
        vals[-1] = length
    return np.array(vals)


def sweep_poses(cpath: CenterlinePath, policy: TravelPolicy,
                head: HeadModel = HeadModel(),
                ds: float = DEFAULT_DS,
                directions=(ANTEGRADE,),
                fov_deg: float = DEFAULT_FOV_DEG):
    """Yield every camera pose of a sweep, deterministically ordered."""
    for direction in directions:
        if direction not in (ANTEGRADE, RETROGRADE):
            raise VisibilityError(f"bad direction {direction!r}")
        for yaw in head.yaw_angles():
            quat = (quat_from_axis_angle((0.0, 1.0, 0.0), yaw)
                    if yaw != 0.0 else (1.0, 0.0, 0.0, 0.0))
            for s in station_values(cpath.length, ds):
                state = TravelState(s=float(s), direction=direction,
                                    policy=policy, head=quat)
                yield pose(cpath, state, fov_deg)


@dataclass
class MarkerVisibility:
    id: str
    ever_visible: bool
    fraction: float  # of capsule surface samples ever visible
    excluded: bool = False

    def to_payload(self) -> dict:
        return {"id": self.id, "ever_visible": self.ever_visible,
                "fraction": self.fraction, "excluded": self.excluded}


@dataclass
class CoverageReport:
    policy: dict
    params: dict
    seen: np.ndarray            # per-face bool
    face_areas: np.ndarray
    markers: list[MarkerVisibility] = field(default_factory=list)

    @property
    def coverage(self) -> float:
        total = float(self.face_areas.sum())
        if total == 0:
            return 0.0
        return float(self.face_areas[self.seen].sum()) / total

    def to_json(self) -> str:
        doc = {
            "policy": self.policy,
            "params": self.params,
            "coverage": self.coverage,
            "n_faces": int(len(self.seen)),
            "seen_rle": _rle_encode(self.seen),
            "markers": [m.to_payload() for m in self.markers],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, face_areas: np.ndarray):
        doc = json.loads(text)
        seen = _rle_decode(doc["seen_rle"], doc["n_faces"])
        rep = cls(doc["policy"], doc["params"], seen, face_areas)
        rep.markers = [MarkerVisibility(m["id"], m["ever_visible"],
                                        m["fraction"], m["excluded"])
                       for m in doc["markers"]]
        return rep


def _rle_encode(flags: np.ndarray) -> dict:
    flags = np.asarray(flags, dtype=bool)
    if len(flags) == 0:
        return {"first": False, "runs": []}
    change = np.nonzero(np.diff(flags))[0] + 1
    bounds = np.concatenate([[0], change, [len(flags)]])
    return {"first": bool(flags[0]),
            "runs": np.diff(bounds).astype(int).tolist()}


def _rle_decode(rle: dict, n: int) -> np.ndarray:
    out = np.empty(n, dtype=bool)
    val = rle["first"]
    pos = 0
    for run in rle["runs"]:
        out[pos:pos + run] = val
        pos += run
        val = not val
    if pos != n:
        raise VisibilityError("run-length data does not cover all faces")
    return out


def sweep_coverage(mesh: TriMesh, bvh: Bvh, cpath: CenterlinePath,
                   policy: TravelPolicy,
                   head: HeadModel = HeadModel(),
                   ds: float = DEFAULT_DS,
                   directions=(ANTEGRADE,),
                   fov_deg: float = DEFAULT_FOV_DEG,
                   grid: int = DEFAULT_GRID,
                   markers=()) -> CoverageReport:
    """Union of visible sets over all sweep poses, with per-marker
    detectability when markers are supplied."""
    seen = np.zeros(mesh.n_faces, dtype=bool)
    marker_seen = None
    sample_pts = None
    inside_flags = None
    if markers:
        caster = NaiveRaycaster(mesh)
        inside_flags = [point_inside(mesh, m.center, caster)
                        for m in markers]
        sample_pts = [capsule_surface_points(m) for m in markers]
        marker_seen = [np.zeros(len(p), dtype=bool) for p in sample_pts]

    for pose_ in sweep_poses(cpath, policy, head, ds, directions, fov_deg):
        dirs = frustum_directions(pose_, grid)
        origins = np.broadcast_to(pose_.position, dirs.shape)
        fids, _ = raycast_many(bvh, origins, dirs)
        hit = fids[fids >= 0]
        seen[hit] = True
        if markers:
            for k, pts in enumerate(sample_pts):
                if not inside_flags[k]:
                    continue
                _accumulate_marker(pose_, bvh, pts, marker_seen[k])

    report = CoverageReport(
        policy=policy.to_payload(),
        params={
            "ds": ds,
            "grid": grid,
            "fov_deg": fov_deg,
            "directions": list(directions),
            "head": head.label(),
        },
        seen=seen,
        face_areas=mesh.face_areas,
    )
    if markers:
        for k, m in enumerate(markers):
            if not inside_flags[k]:
                report.markers.append(
                    MarkerVisibility(m.id, False, 0.0, excluded=True))
                continue
            frac = float(marker_seen[k].mean())
            report.markers.append(
                MarkerVisibility(m.id, bool(marker_seen[k].any()), frac))
    return report


def _accumulate_marker(pose_, raycaster, pts: np.ndarray,
                       seen: np.ndarray) -> None:
    """Mark capsule samples that are unoccluded and inside the frustum
    from this pose. `raycaster` is a Bvh or a NaiveRaycaster."""
    todo = np.nonzero(~seen)[0]
    if len(todo) == 0:
        return
    rel = pts[todo] - pose_.position
    dist = np.linalg.norm(rel, axis=1)
    ok = dist > 1e-12
    infr = in_frustum(pose_, pts[todo])
    cand = todo[ok & infr]
    if len(cand) == 0:
        return
    rel = pts[cand] - pose_.position
    dist = np.linalg.norm(rel, axis=1)
    dirs = rel / dist[:, None]
    origins = np.broadcast_to(pose_.position, dirs.shape)
    if isinstance(raycaster, Bvh):
        _, ts = raycast_many(raycaster, origins, dirs)
    else:
        _, ts = raycaster.cast_many(origins, dirs)
    unoccluded = ts >= dist * (1.0 - 1e-9)
    seen[cand[unoccluded]] = True


def marker_visibility(mesh: TriMesh, bvh, cpath: CenterlinePath,
                      policy: TravelPolicy,
                      markers,
                      head: HeadModel = HeadModel(),
                      ds: float = DEFAULT_DS,
                      directions=(ANTEGRADE,),
                      fov_deg: float = DEFAULT_FOV_DEG
                      ) -> list[MarkerVisibility]:
    """Per-marker ever-visible flag and sample fraction under a sweep.

    `bvh` may be a Bvh or a NaiveRaycaster; passing the latter reruns the
    exact same question through the brute-force reference.
    """
    caster = NaiveRaycaster(mesh)
    out = []
    sample_sets = []
    for m in markers:
        if not point_inside(mesh, m.center, caster):
            out.append(MarkerVisibility(m.id, False, 0.0, excluded=True))
            sample_sets.append(None)
        else:
            out.append(MarkerVisibility(m.id, False, 0.0))
            sample_sets.append(capsule_surface_points(m))
    seen_sets = [None if p is None else np.zeros(len(p), dtype=bool)
                 for p in sample_sets]
    for pose_ in sweep_poses(cpath, policy, head, ds, directions, fov_deg):
        for k, pts in enumerate(sample_sets):
            if pts is not None:
                _accumulate_marker(pose_, bvh, pts, seen_sets[k])
    for k, mv in enumerate(out):
        if seen_sets[k] is not None:
            mv.ever_visible = bool(seen_sets[k].any())
            mv.fraction = float(seen_sets[k].mean())
    return out


def predict_taggable(mesh: TriMesh, bvh, markers, station_positions,
                     max_distance: float = 0.5) -> dict[str, bool]:
    """Which markers an aim-anywhere client can tag from the given eye
    positions: center within range and center-ray unoccluded. This is the
    ground truth the scripted end-to-end session is compared against.
    """
    caster = NaiveRaycaster(mesh)
    result: dict[str, bool] = {}
    stations = np.asarray(station_positions, dtype=np.float64)
    for m in markers:
        if not point_inside(mesh, m.center, caster):
            result[m.id] = False
            continue
        ok = False
        for eye in stations:
            delta = m.center - eye
            d = float(np.linalg.norm(delta))
            if d < 1e-12 or d > max_distance:
                continue
            direction = delta / d
            if isinstance(bvh, Bvh):
                fids, ts = raycast_many(bvh, eye[None, :],
                                        direction[None, :])
                t = ts[0]
            else:
                _, t = bvh.cast(eye, direction)
            if t >= d * (1.0 - 1e-9):
                ok = True
                break
        result[m.id] = ok
    return result

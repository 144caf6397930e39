"""Navigation along a centerline: constant-speed stepping, per-policy
camera orientation, lumen-clamped lateral offsets, guidance arrows, and
marker tagging.

Three orientation policies:
  fly-through  view locked to the path tangent (sign follows direction of
               travel), up = frame binormal.
  fly-over     view perpendicular to the tangent, aimed at the wall at a
               configurable azimuth; up = -travel tangent so the wall
               scrolls bottom-to-top while advancing.
  elevator     orientation fixed in world coordinates regardless of s.

User head rotation composes on the right of the policy basis, so
pose(head=h) == pose(head=identity) @ h by construction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .path import CenterlinePath, eval_path, local_radius
from .rotations import IDENTITY_QUAT, quat_to_matrix

FLY_THROUGH = "fly-through"
FLY_OVER = "fly-over"
ELEVATOR = "elevator"
POLICY_KINDS = (FLY_THROUGH, FLY_OVER, ELEVATOR)

ANTEGRADE = "antegrade"
RETROGRADE = "retrograde"

FORWARD = "forward"
BACKWARD = "backward"
IDLE = "idle"

DEFAULT_SPEED = 0.5          # m/s
DEFAULT_FOV_DEG = 110.0      # vertical, square aspect
ARROW_LOOKAHEAD = 0.1        # m
TAG_CONE_DEG = 5.0
TAG_MAX_DISTANCE = 0.5       # m

_ELEVATOR_BASIS = np.array([[0.0, 0.0, 1.0],
                            [0.0, 1.0, 0.0],
                            [-1.0, 0.0, 0.0]], dtype=np.float64)
# columns (view, up, right): view = -z, up = +y, right = +x
_ELEVATOR_BASIS.setflags(write=False)


class TravelError(Exception):
    pass


@dataclass(frozen=True)
class TravelPolicy:
    kind: str
    phi: float = 0.0  # wall azimuth, fly-over only

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise TravelError(f"unknown policy {self.kind!r}")
        if self.kind == FLY_OVER and not (0.0 <= self.phi < 2.0 * math.pi):
            raise TravelError(f"phi must be in [0, 2pi), got {self.phi}")

    @classmethod
    def fly_through(cls):
        return cls(FLY_THROUGH)

    @classmethod
    def fly_over(cls, phi: float = 0.0):
        return cls(FLY_OVER, phi)

    @classmethod
    def elevator(cls):
        return cls(ELEVATOR)

    def to_payload(self) -> dict:
        return {"kind": self.kind, "phi": self.phi}

    @classmethod
    def from_payload(cls, payload: dict):
        return cls(payload["kind"], payload.get("phi", 0.0))


@dataclass(frozen=True)
class TravelState:
    s: float = 0.0
    direction: str = ANTEGRADE
    policy: TravelPolicy = TravelPolicy(FLY_THROUGH)
    head: tuple[float, float, float, float] = IDENTITY_QUAT
    offset: tuple[float, float] = (0.0, 0.0)  # (normal, binormal) meters
    speed: float = DEFAULT_SPEED

    def __post_init__(self):
        if self.direction not in (ANTEGRADE, RETROGRADE):
            raise TravelError(f"bad direction {self.direction!r}")
        if self.speed <= 0:
            raise TravelError("speed must be positive")

    @property
    def motion_sign(self) -> float:
        return 1.0 if self.direction == ANTEGRADE else -1.0


@dataclass(frozen=True)
class CameraPose:
    position: np.ndarray
    view: np.ndarray
    up: np.ndarray
    right: np.ndarray
    fov_deg: float = DEFAULT_FOV_DEG

    def __post_init__(self):
        for name in ("position", "view", "up", "right"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def orientation(self) -> np.ndarray:
        """Columns (view, up, right)."""
        return np.column_stack((self.view, self.up, self.right))

    def to_payload(self) -> dict:
        return {
            "position": [float(c) for c in self.position],
            "view": [float(c) for c in self.view],
            "up": [float(c) for c in self.up],
            "right": [float(c) for c in self.right],
            "fov_deg": float(self.fov_deg),
        }


@dataclass(frozen=True)
class TagEvent:
    t: float
    pose: CameraPose
    marker_id: str | None


def step(state: TravelState, inp: str, dt: float,
         length: float) -> TravelState:
    """Advance s at constant speed; forward means +s under the antegrade
    convention fixed at session start. Clamps to [0, length]."""
    if dt < 0:
        raise TravelError("dt must be >= 0")
    if inp == IDLE or dt == 0.0:
        return state
    if inp not in (FORWARD, BACKWARD):
        raise TravelError(f"bad input {inp!r}")
    sign = state.motion_sign if inp == FORWARD else -state.motion_sign
    s = state.s + sign * state.speed * dt
    s = min(max(s, 0.0), length)
    return replace(state, s=s)


def _orthonormal_pose(position, view, up, fov_deg) -> CameraPose:
    view = np.asarray(view, dtype=np.float64)
    view = view / np.linalg.norm(view)
    right = np.cross(view, up)
    right = right / np.linalg.norm(right)
    up = np.cross(right, view)
    return CameraPose(position, view, up, right, fov_deg)


def base_orientation(path: CenterlinePath, state: TravelState,
                     s: float | None = None) -> np.ndarray:
    """Policy basis before head composition, columns (view, up, right)."""
    if state.policy.kind == ELEVATOR:
        return _ELEVATOR_BASIS
    pt = eval_path(path, state.s if s is None else s)
    sign = state.motion_sign
    if state.policy.kind == FLY_THROUGH:
        view = sign * pt.tangent
        up = pt.binormal - np.dot(pt.binormal, view) * view
        up = up / np.linalg.norm(up)
    else:  # fly-over
        phi = state.policy.phi
        view = math.cos(phi) * pt.normal + math.sin(phi) * pt.binormal
        up = -sign * pt.tangent
    right = np.cross(view, up)
    return np.column_stack((view, up, right))


def pose(path: CenterlinePath, state: TravelState,
         fov_deg: float = DEFAULT_FOV_DEG) -> CameraPose:
    """Authoritative camera pose: policy basis, then head rotation, at the
    offset position in the local (normal, binormal) plane."""
    if not (0.0 <= state.s <= path.length):
        raise TravelError(f"s={state.s} outside path")
    pt = eval_path(path, state.s)
    basis = base_orientation(path, state)
    o = basis @ quat_to_matrix(state.head)
    position = (pt.position + state.offset[0] * pt.normal
                + state.offset[1] * pt.binormal)
    return _orthonormal_pose(position, o[:, 0], o[:, 1], fov_deg)


def clamp_offset(state: TravelState, path: CenterlinePath, bvh,
                 requested: tuple[float, float]) -> TravelState:
    """Clamp a lateral offset request against the lumen wall.

    Casts a ray from the on-path position along the requested direction
    and keeps at most 90% of the wall distance. Where the ray escapes
    (an open cap), the limit is twice the local lumen radius estimate.
    """
    from .bvh import raycast  # deferred: travel does not need bvh otherwise

    u, v = float(requested[0]), float(requested[1])
    mag = math.hypot(u, v)
    if mag < 1e-15:
        return replace(state, offset=(0.0, 0.0))
    pt = eval_path(path, state.s)
    direction = (u * pt.normal + v * pt.binormal) / mag
    hit = raycast(bvh, pt.position, direction)
    if hit is not None:
        limit = 0.9 * hit.t
    else:
        r = local_radius(path, state.s)
        limit = 2.0 * r if r is not None else mag
    if mag <= limit:
        return replace(state, offset=(u, v))
    scale = limit / mag
    return replace(state, offset=(u * scale, v * scale))


@dataclass(frozen=True)
class ArrowPlacement:
    position: np.ndarray
    direction: np.ndarray

    def to_payload(self) -> dict:
        return {"position": [float(c) for c in self.position],
                "direction": [float(c) for c in self.direction]}


@dataclass(frozen=True)
class GuidanceArrows:
    green: ArrowPlacement  # antegrade, ahead
    red: ArrowPlacement    # retrograde, behind

    def to_payload(self) -> dict:
        return {"green": self.green.to_payload(),
                "red": self.red.to_payload()}


def guidance_arrows(path: CenterlinePath, state: TravelState,
                    lookahead: float = ARROW_LOOKAHEAD) -> GuidanceArrows:
    ahead = eval_path(path, min(state.s + lookahead, path.length))
    behind = eval_path(path, max(state.s - lookahead, 0.0))
    return GuidanceArrows(
        green=ArrowPlacement(ahead.position, ahead.tangent),
        red=ArrowPlacement(behind.position, -behind.tangent))


def tag(state: TravelState, pose_: CameraPose, markers, bvh,
        t: float = 0.0) -> TagEvent:
    """Match the nearest marker whose center sits inside the tag cone
    (half-angle 5 deg about the view, within 0.5 m) and is unoccluded."""
    from .bvh import raycast

    cos_limit = math.cos(math.radians(TAG_CONE_DEG))
    best_id = None
    best_d = math.inf
    for m in markers:
        c = m.center
        delta = c - pose_.position
        d = float(np.linalg.norm(delta))
        if d < 1e-12 or d > TAG_MAX_DISTANCE or d >= best_d:
            continue
        direction = delta / d
        if float(np.dot(direction, pose_.view)) < cos_limit:
            continue
        hit = raycast(bvh, pose_.position, direction)
        if hit is not None and hit.t < d * (1.0 - 1e-9):
            continue
        best_id = m.id
        best_d = d
    return TagEvent(t, pose_, best_id)


# ----------------------------------------------------------- session log
#
# One JSON record per line: {"t": float, "kind": str, "payload": {...}}.
# Kinds: start, move, head, policy, offset, tag, end. Floats are emitted
# with repr and parse back bit-exactly, which is what makes log replay a
# meaningful determinism check.

def event_record(t: float, kind: str, payload: dict) -> str:
    return json.dumps({"t": t, "kind": kind, "payload": payload},
                      sort_keys=True)


def parse_log(text: str) -> list[dict]:
    events = []
    for line in text.splitlines():
        line = line.strip()
        if line:
            events.append(json.loads(line))
    return events


def state_snapshot(state: TravelState) -> dict:
    return {
        "s": state.s,
        "direction": state.direction,
        "policy": state.policy.to_payload(),
        "head": list(state.head),
        "offset": list(state.offset),
        "speed": state.speed,
    }


def state_from_snapshot(payload: dict) -> TravelState:
    return TravelState(
        s=float(payload.get("s", 0.0)),
        direction=payload.get("direction", ANTEGRADE),
        policy=TravelPolicy.from_payload(payload["policy"]),
        head=tuple(payload.get("head", IDENTITY_QUAT)),
        offset=tuple(payload.get("offset", (0.0, 0.0))),
        speed=float(payload.get("speed", DEFAULT_SPEED)),
    )


def replay(events: list[dict], path: CenterlinePath,
           bvh=None) -> TravelState:
    """Re-run a session log through the state machine.

    The result must equal the final state recorded in the 'end' event
    bit for bit; any divergence means the server and the state machine
    disagree. Offset events need the scene bvh.
    """
    state = None
    for ev in events:
        kind, payload = ev["kind"], ev["payload"]
        if kind == "start":
            state = state_from_snapshot(payload["state"])
            continue
        if state is None:
            raise TravelError("log does not begin with a start event")
        if kind == "move":
            state = step(state, payload["input"], float(payload["dt"]),
                         path.length)
        elif kind == "head":
            # logged quats are already normalized; renormalizing here would
            # perturb bits and break exact replay
            state = replace(state, head=tuple(payload["quat"]))
        elif kind == "policy":
            state = replace(state,
                            policy=TravelPolicy.from_payload(payload))
        elif kind == "offset":
            if bvh is None:
                raise TravelError("offset event in log but no bvh supplied")
            state = clamp_offset(state, path, bvh,
                                 tuple(payload["request"]))
        elif kind in ("tag", "end"):
            pass
        else:
            raise TravelError(f"unknown event kind {kind!r}")
    if state is None:
        raise TravelError("empty log")
    return state

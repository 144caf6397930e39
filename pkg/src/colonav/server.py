"""Session service: serves scene assets, owns the authoritative travel
state per session, applies client intents, and streams poses.

Clients send intents (move/head/offset/tag), never poses; the server is
the single writer of each session's state and its append-only log, which
is what makes the logs trustworthy inputs for the analysis stage.

Binary mesh framing (GET /scenes/{id}/mesh?format=bin), little-endian:

    bytes 0..3    magic "CMSH"
    u32           version (1)
    u32           vertex count V
    u32           face count F
    f32 * 3V      vertex xyz, interleaved
    u32 * 3F      triangle indices
"""
from __future__ import annotations

import asyncio
import json
import struct
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse, Response
from fastapi.staticfiles import StaticFiles

from . import analytics, travel
from .bvh import Bvh
from .mesh import TriMesh
from .meshio import load_mesh, write_mesh
from .path import CenterlinePath, load_path, save_path
from .rotations import quat_normalize
from .travel import TravelPolicy, TravelState
from .visibility import Marker, load_markers, save_markers

MESH_MAGIC = b"CMSH"
MESH_VERSION = 1
DEFAULT_TICK_HZ = 60.0

TECHNIQUES = {
    travel.FLY_THROUGH: TravelPolicy.fly_through,
    travel.FLY_OVER: TravelPolicy.fly_over,
    travel.ELEVATOR: TravelPolicy.elevator,
}


class ServerError(Exception):
    pass


def pack_mesh_binary(mesh: TriMesh) -> bytes:
    head = MESH_MAGIC + struct.pack("<III", MESH_VERSION,
                                    mesh.n_vertices, mesh.n_faces)
    verts = mesh.vertices.astype("<f4").tobytes()
    faces = mesh.faces.astype("<u4").tobytes()
    return head + verts + faces


def unpack_mesh_binary(buf: bytes) -> tuple[np.ndarray, np.ndarray]:
    if buf[:4] != MESH_MAGIC:
        raise ServerError("bad mesh frame magic")
    version, nv, nf = struct.unpack("<III", buf[4:16])
    if version != MESH_VERSION:
        raise ServerError(f"unsupported mesh frame version {version}")
    off = 16
    verts = np.frombuffer(buf, "<f4", nv * 3, off).reshape(nv, 3)
    off += nv * 12
    faces = np.frombuffer(buf, "<u4", nf * 3, off).reshape(nf, 3)
    return verts.astype(np.float64), faces.astype(np.int64)


# ---------------------------------------------------------------- scenes

@dataclass
class Scene:
    id: str
    mesh: TriMesh
    path: CenterlinePath
    markers: list[Marker]
    _bvh: Bvh | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def bvh(self) -> Bvh:
        with self._lock:
            if self._bvh is None:
                self._bvh = Bvh(self.mesh)
            return self._bvh


class SceneStore:
    """Directory of scenes: <dir>/<scene-id>/{mesh.ply,path.json,
    markers.json}; markers.json optional."""

    def __init__(self, root):
        self.root = Path(root)
        self._scenes: dict[str, Scene] = {}

    def ids(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir()
                      if (p / "mesh.ply").is_file()
                      and (p / "path.json").is_file())

    def get(self, scene_id: str) -> Scene:
        if scene_id in self._scenes:
            return self._scenes[scene_id]
        d = self.root / scene_id
        if not (d / "mesh.ply").is_file() or not (d / "path.json").is_file():
            raise KeyError(scene_id)
        markers = []
        if (d / "markers.json").is_file():
            markers = load_markers(d / "markers.json")
        scene = Scene(scene_id, load_mesh(d / "mesh.ply"),
                      load_path(d / "path.json"), markers)
        self._scenes[scene_id] = scene
        return scene


def write_scene(root, scene_id: str, mesh: TriMesh, path: CenterlinePath,
                markers=()) -> Path:
    d = Path(root) / scene_id
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "mesh.ply", "wb") as fh:
        fh.write(write_mesh(mesh, "ply"))
    save_path(path, d / "path.json")
    if markers:
        save_markers(markers, d / "markers.json")
    return d


# --------------------------------------------------------------- sessions

@dataclass
class Session:
    id: str
    subject: str
    technique: str
    scene: Scene
    state: TravelState
    log_path: Path
    created_at: float
    status: str = "active"
    tag_count: int = 0
    tagged_ids: set = field(default_factory=set)
    lock: threading.Lock = field(default_factory=threading.Lock)
    _log_lines: list[str] = field(default_factory=list)

    def append_log(self, t: float, kind: str, payload: dict) -> None:
        line = travel.event_record(t, kind, payload)
        self._log_lines.append(line)
        with open(self.log_path, "a") as fh:
            fh.write(line + "\n")

    def log_text(self) -> str:
        return "".join(ln + "\n" for ln in self._log_lines)


class SessionManager:
    """One serialized writer per session; scenes shared read-only."""

    def __init__(self, scenes: SceneStore, log_dir, clock=None,
                 tick_hz: float = DEFAULT_TICK_HZ):
        self.scenes = scenes
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock or time.monotonic
        self.tick_hz = tick_hz
        self.sessions: dict[str, Session] = {}
        self._create_lock = threading.Lock()

    def create(self, subject: str, technique: str, scene_id: str,
               speed: float = travel.DEFAULT_SPEED,
               phi: float = 0.0) -> Session:
        if technique not in TECHNIQUES:
            raise ServerError(f"unknown technique {technique!r}")
        try:
            scene = self.scenes.get(scene_id)
        except KeyError:
            raise ServerError(f"unknown scene {scene_id!r}")
        policy = (TravelPolicy.fly_over(phi)
                  if technique == travel.FLY_OVER
                  else TECHNIQUES[technique]())
        with self._create_lock:
            for s in self.sessions.values():
                if (s.status == "active" and s.subject == subject
                        and s.technique == technique):
                    raise ServerError(
                        f"active session already exists for {subject!r} "
                        f"with {technique!r}")
            sid = uuid.uuid4().hex[:12]
            state = TravelState(s=0.0, policy=policy, speed=speed)
            t = self.clock()
            session = Session(sid, subject, technique, scene, state,
                              self.log_dir / f"{sid}.log", t)
            self.sessions[sid] = session
        session.append_log(t, "start", {
            "subject": subject,
            "technique": technique,
            "scene": scene_id,
            "marker_set": scene.id,
            "state": travel.state_snapshot(state),
        })
        return session

    def get(self, sid: str) -> Session:
        s = self.sessions.get(sid)
        if s is None:
            raise ServerError(f"unknown session {sid!r}")
        return s

    def get_active(self, sid: str) -> Session:
        s = self.get(sid)
        if s.status != "active":
            raise ServerError(f"session {sid!r} is closed")
        return s

    def apply_input(self, sid: str, message: dict) -> dict:
        """Apply one intent bundle: policy and head updates first, then
        step, offset clamp, and tag, logging each part."""
        session = self.get_active(sid)
        scene = session.scene
        with session.lock:
            t = self.clock()
            state = session.state
            ack: dict = {"t": t}
            if "policy" in message:
                policy = TravelPolicy.from_payload(message["policy"])
                state = replace(state, policy=policy)
                session.append_log(t, "policy", policy.to_payload())
            if "head" in message:
                head = quat_normalize(message["head"])
                state = replace(state, head=head)
                session.append_log(t, "head", {"quat": list(head)})
            if "move" in message:
                mv = message["move"]
                state = travel.step(state, mv["input"], float(mv["dt"]),
                                    scene.path.length)
                session.append_log(t, "move", {"input": mv["input"],
                                               "dt": float(mv["dt"])})
            if "offset" in message:
                req = tuple(float(x) for x in message["offset"])
                state = travel.clamp_offset(state, scene.path, scene.bvh,
                                            req)
                session.append_log(t, "offset", {
                    "request": list(req),
                    "applied": list(state.offset)})
            if message.get("tag"):
                p = travel.pose(scene.path, state)
                event = travel.tag(state, p, scene.markers, scene.bvh, t)
                session.tag_count += 1
                if event.marker_id is not None:
                    session.tagged_ids.add(event.marker_id)
                session.append_log(t, "tag", {"marker": event.marker_id})
                ack["tag"] = {"marker": event.marker_id}
            session.state = state
            ack["s"] = state.s
            return ack

    def pose_payload(self, session: Session) -> dict:
        p = travel.pose(session.scene.path, session.state)
        arrows = travel.guidance_arrows(session.scene.path, session.state)
        return {"t": self.clock(), "s": session.state.s,
                "pose": p.to_payload(), "arrows": arrows.to_payload()}

    def close(self, sid: str) -> dict:
        session = self.get(sid)
        with session.lock:
            if session.status != "active":
                raise ServerError(f"session {sid!r} already closed")
            t = self.clock()
            summary = {
                "duration": t - session.created_at,
                "tag_count": session.tag_count,
                "distinct_markers": len(session.tagged_ids),
            }
            session.append_log(t, "end", {
                "state": travel.state_snapshot(session.state),
                "summary": summary,
            })
            session.status = "closed"
            return summary


# ------------------------------------------------------------------- app

def create_app(scenes_dir, logs_dir, clock=None,
               tick_hz: float = DEFAULT_TICK_HZ,
               viewer_dir=None) -> FastAPI:
    app = FastAPI(title="colonav session service")
    store = SceneStore(scenes_dir)
    manager = SessionManager(store, logs_dir, clock, tick_hz)
    app.state.manager = manager

    def scene_or_404(scene_id: str) -> Scene:
        try:
            return store.get(scene_id)
        except KeyError:
            raise HTTPException(404, f"unknown scene {scene_id!r}")

    @app.get("/scenes")
    def scenes():
        out = []
        for sid in store.ids():
            sc = store.get(sid)
            out.append({
                "id": sid,
                "vertices": sc.mesh.n_vertices,
                "faces": sc.mesh.n_faces,
                "length_m": sc.path.length,
                "markers": len(sc.markers),
            })
        return {"scenes": out}

    @app.get("/scenes/{scene_id}/mesh")
    def scene_mesh(scene_id: str, format: str = "ply"):
        sc = scene_or_404(scene_id)
        if format == "bin":
            return Response(pack_mesh_binary(sc.mesh),
                            media_type="application/octet-stream")
        if format == "ply":
            return Response(write_mesh(sc.mesh, "ply"),
                            media_type="text/plain")
        raise HTTPException(400, f"unknown mesh format {format!r}")

    @app.get("/scenes/{scene_id}/path")
    def scene_path(scene_id: str):
        sc = scene_or_404(scene_id)
        from .path import dump_path
        return Response(dump_path(sc.path), media_type="application/json")

    @app.get("/scenes/{scene_id}/markers")
    def scene_markers(scene_id: str):
        sc = scene_or_404(scene_id)
        return {"markers": [m.to_payload() for m in sc.markers]}

    @app.get("/latin-square/{k}")
    def latin(k: int):
        try:
            return {"rows": analytics.latin_square(k)}
        except analytics.AnalyticsError as exc:
            raise HTTPException(400, str(exc))

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        try:
            session = manager.create(
                body["subject"], body["technique"], body["scene"],
                speed=float(body.get("speed", travel.DEFAULT_SPEED)),
                phi=float(body.get("phi", 0.0)))
        except KeyError as exc:
            raise HTTPException(400, f"missing field {exc}")
        except ServerError as exc:
            code = 409 if "already exists" in str(exc) else 404 \
                if "unknown scene" in str(exc) else 400
            raise HTTPException(code, str(exc))
        return {"session": session.id, "technique": session.technique,
                "scene": session.scene.id}

    @app.post("/sessions/{sid}/input")
    def session_input(sid: str, body: dict):
        try:
            return manager.apply_input(sid, body)
        except ServerError as exc:
            raise HTTPException(409 if "closed" in str(exc) else 404,
                                str(exc))
        except travel.TravelError as exc:
            raise HTTPException(400, str(exc))

    @app.post("/sessions/{sid}/close")
    def session_close(sid: str):
        try:
            return manager.close(sid)
        except ServerError as exc:
            raise HTTPException(
                409 if "already closed" in str(exc) else 404, str(exc))

    @app.get("/sessions/{sid}/log", response_class=PlainTextResponse)
    def session_log(sid: str):
        try:
            return manager.get(sid).log_text()
        except ServerError as exc:
            raise HTTPException(404, str(exc))

    @app.websocket("/sessions/{sid}/stream")
    async def session_stream(ws: WebSocket):
        sid = ws.path_params["sid"]
        try:
            session = manager.get_active(sid)
        except ServerError:
            await ws.close(code=4404)
            return
        await ws.accept()
        interval = 1.0 / manager.tick_hz
        try:
            while session.status == "active":
                await ws.send_text(json.dumps(
                    manager.pose_payload(session), sort_keys=True))
                # bidirectional: drain any intents that arrived this tick
                try:
                    raw = await asyncio.wait_for(ws.receive_text(),
                                                 timeout=interval)
                    manager.apply_input(sid, json.loads(raw))
                except asyncio.TimeoutError:
                    pass
        except (WebSocketDisconnect, ServerError, RuntimeError):
            return
        try:
            await ws.close()
        except RuntimeError:
            pass

    if viewer_dir is not None and Path(viewer_dir).is_dir():
        app.mount("/viewer", StaticFiles(directory=str(viewer_dir),
                                         html=True), name="viewer")

    return app

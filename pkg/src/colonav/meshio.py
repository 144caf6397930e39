"""ASCII PLY and OBJ reading/writing.

Binary PLY is rejected outright: the parsers stay small enough to audit,
and every file they emit can be diffed by eye. Quads are fan-triangulated;
anything with more than four sides is an error.
"""
from __future__ import annotations

import logging

import numpy as np

from .mesh import MeshError, TriMesh

log = logging.getLogger(__name__)

PLY = "ply"
OBJ = "obj"


def parse_mesh(data: bytes | str, fmt: str | None = None,
               name: str = "<mesh>") -> TriMesh:
    """Parse an ASCII PLY or OBJ byte stream into a validated TriMesh.

    ``fmt`` may be omitted when ``name`` carries a .ply/.obj extension or
    the payload starts with the PLY magic line.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MeshError(f"{name}: not an ASCII mesh file ({exc})")
    else:
        text = data
    if fmt is None:
        fmt = _sniff_format(text, name)
    if fmt == PLY:
        mesh = _parse_ply(text, name)
    elif fmt == OBJ:
        mesh = _parse_obj(text, name)
    else:
        raise MeshError(f"unknown mesh format {fmt!r}")
    if len(mesh.winding_violations):
        log.warning("%s: %d edge(s) with inconsistent winding (kept as-is)",
                    name, len(mesh.winding_violations))
    return mesh


def write_mesh(mesh: TriMesh, fmt: str = PLY) -> bytes:
    if fmt == PLY:
        return _write_ply(mesh)
    if fmt == OBJ:
        return _write_obj(mesh)
    raise MeshError(f"unknown mesh format {fmt!r}")


def load_mesh(path) -> TriMesh:
    path = str(path)
    fmt = PLY if path.lower().endswith(".ply") else (
        OBJ if path.lower().endswith(".obj") else None)
    with open(path, "rb") as fh:
        return parse_mesh(fh.read(), fmt, name=path)


def save_mesh(mesh: TriMesh, path) -> None:
    path = str(path)
    fmt = OBJ if path.lower().endswith(".obj") else PLY
    with open(path, "wb") as fh:
        fh.write(write_mesh(mesh, fmt))


def _sniff_format(text: str, name: str) -> str:
    lower = name.lower()
    if lower.endswith(".ply"):
        return PLY
    if lower.endswith(".obj"):
        return OBJ
    if text.lstrip().startswith("ply"):
        return PLY
    for line in text.splitlines():
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s.split()[0] in ("v", "f", "vn", "vt", "o", "g", "mtllib"):
            return OBJ
        break
    raise MeshError(f"{name}: cannot infer mesh format; pass fmt explicitly")


# ---------------------------------------------------------------- PLY

def _parse_ply(text: str, name: str) -> TriMesh:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshError(f"{name}: missing 'ply' magic line")

    n_vertices = n_faces = None
    vertex_props: list[str] = []
    current_element = None
    fmt_seen = False
    i = 1
    while i < len(lines):
        parts = lines[i].strip().split()
        i += 1
        if not parts or parts[0] == "comment":
            continue
        kw = parts[0]
        if kw == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                raise MeshError(
                    f"{name}: binary PLY not supported, ASCII only")
            fmt_seen = True
        elif kw == "element":
            if len(parts) != 3:
                raise MeshError(f"{name}: malformed element line")
            current_element = parts[1]
            if parts[1] == "vertex":
                n_vertices = int(parts[2])
            elif parts[1] == "face":
                n_faces = int(parts[2])
            else:
                raise MeshError(
                    f"{name}: unsupported element {parts[1]!r}")
        elif kw == "property":
            if current_element == "vertex":
                if parts[1] == "list":
                    raise MeshError(
                        f"{name}: list property on vertex element")
                vertex_props.append(parts[-1])
            # face list property accepted as-is
        elif kw == "end_header":
            break
        else:
            raise MeshError(f"{name}: unexpected header keyword {kw!r}")
    else:
        raise MeshError(f"{name}: header missing end_header")

    if not fmt_seen:
        raise MeshError(f"{name}: header missing format line")
    if n_vertices is None or n_faces is None:
        raise MeshError(f"{name}: header missing vertex or face element")
    try:
        cols = [vertex_props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise MeshError(f"{name}: vertex element lacks x/y/z properties")

    body = [ln for ln in lines[i:] if ln.strip()]
    if len(body) < n_vertices:
        raise MeshError(f"{name}: truncated vertex block "
                        f"({len(body)} of {n_vertices} rows)")
    vertices = np.empty((n_vertices, 3), dtype=np.float64)
    for r in range(n_vertices):
        fields = body[r].split()
        if len(fields) < len(vertex_props):
            raise MeshError(f"{name}: truncated vertex row {r}")
        try:
            for k, c in enumerate(cols):
                vertices[r, k] = float(fields[c])
        except ValueError as exc:
            raise MeshError(f"{name}: bad vertex row {r}: {exc}")

    face_rows = body[n_vertices:]
    if len(face_rows) < n_faces:
        raise MeshError(f"{name}: truncated face block "
                        f"({len(face_rows)} of {n_faces} rows)")
    if len(face_rows) > n_faces:
        raise MeshError(f"{name}: trailing data after face block")
    faces = _triangulate_rows(
        (_parse_ply_face(row, r, name) for r, row in enumerate(face_rows)))
    mesh = TriMesh(vertices, faces)
    return mesh


def _parse_ply_face(row: str, r: int, name: str) -> list[int]:
    fields = row.split()
    try:
        arity = int(fields[0])
        idx = [int(x) for x in fields[1:1 + arity]]
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{name}: bad face row {r}: {exc}")
    if len(idx) != arity:
        raise MeshError(f"{name}: face row {r} shorter than declared arity")
    return idx


def _triangulate_rows(rows) -> np.ndarray:
    tris: list[tuple[int, int, int]] = []
    for poly in rows:
        if len(poly) == 3:
            tris.append(tuple(poly))
        elif len(poly) == 4:
            a, b, c, d = poly
            tris.append((a, b, c))
            tris.append((a, c, d))
        else:
            raise MeshError(
                f"face with {len(poly)} sides: only triangles and quads "
                "are supported")
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def _fmt(x: float) -> str:
    # repr round-trips exactly, so parse(write(m)) preserves geometry bit
    # for bit, not merely to tolerance.
    return repr(float(x))


def _write_ply(mesh: TriMesh) -> bytes:
    out = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for v in mesh.vertices:
        out.append(f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    for f in mesh.faces:
        out.append(f"3 {f[0]} {f[1]} {f[2]}")
    return ("\n".join(out) + "\n").encode()


# ---------------------------------------------------------------- OBJ

def _parse_obj(text: str, name: str) -> TriMesh:
    vertices: list[tuple[float, float, float]] = []
    polys: list[list[int]] = []
    for ln, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError(f"{name}: line {ln}: short vertex record")
            try:
                vertices.append(tuple(float(x) for x in parts[1:4]))
            except ValueError as exc:
                raise MeshError(f"{name}: line {ln}: {exc}")
        elif tag == "f":
            idx = []
            for ref in parts[1:]:
                head = ref.split("/")[0]
                try:
                    k = int(head)
                except ValueError as exc:
                    raise MeshError(f"{name}: line {ln}: {exc}")
                if k <= 0:
                    raise MeshError(
                        f"{name}: line {ln}: non-positive face index")
                idx.append(k - 1)
            polys.append(idx)
        # normals, texcoords, groups, materials: irrelevant here
    faces = _triangulate_rows(polys)
    return TriMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                   faces)


def _write_obj(mesh: TriMesh) -> bytes:
    out = []
    for v in mesh.vertices:
        out.append(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    for f in mesh.faces:
        out.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return ("\n".join(out) + "\n").encode()

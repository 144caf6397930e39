"""Minimal quaternion/rotation-matrix helpers.

Quaternions are (w, x, y, z) tuples or arrays, unit length. Matrices are
3x3, columns map local axes to world.
"""
from __future__ import annotations

import math

import numpy as np

IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)


def quat_normalize(q) -> tuple[float, float, float, float]:
    w, x, y, z = (float(c) for c in q)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n == 0.0:
        raise ValueError("zero quaternion")
    return (w / n, x / n, y / n, z / n)


def quat_from_axis_angle(axis, angle: float):
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise ValueError("zero rotation axis")
    a = a / n
    h = 0.5 * angle
    s = math.sin(h)
    return (math.cos(h), a[0] * s, a[1] * s, a[2] * s)


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ], dtype=np.float64)


def matrix_to_quat(m: np.ndarray):
    """Shepperd's method; robust for all proper rotations."""
    m = np.asarray(m, dtype=np.float64)
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0:
        r = math.sqrt(1.0 + t)
        s = 0.5 / r
        return quat_normalize((0.5 * r,
                               (m[2, 1] - m[1, 2]) * s,
                               (m[0, 2] - m[2, 0]) * s,
                               (m[1, 0] - m[0, 1]) * s))
    i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
    j, k = (i + 1) % 3, (i + 2) % 3
    r = math.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
    s = 0.5 / r
    q = [0.0, 0.0, 0.0, 0.0]
    q[0] = (m[k, j] - m[j, k]) * s
    q[i + 1] = 0.5 * r
    q[j + 1] = (m[j, i] + m[i, j]) * s
    q[k + 1] = (m[k, i] + m[i, k]) * s
    return quat_normalize(tuple(q))


def quat_slerp(qa, qb, u: float):
    """Constant-angular-velocity interpolation; u in [0, 1]."""
    qa = quat_normalize(qa)
    qb = quat_normalize(qb)
    dot = sum(a * b for a, b in zip(qa, qb))
    if dot < 0.0:
        qb = tuple(-c for c in qb)
        dot = -dot
    if dot > 1.0 - 1e-12:
        mixed = tuple(a + u * (b - a) for a, b in zip(qa, qb))
        return quat_normalize(mixed)
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    wa = math.sin((1.0 - u) * theta) / s
    wb = math.sin(u * theta) / s
    return quat_normalize(tuple(wa * a + wb * b for a, b in zip(qa, qb)))


def rotation_angle_between(ma: np.ndarray, mb: np.ndarray) -> float:
    """Angle of the relative rotation ma^T mb, radians."""
    r = ma.T @ mb
    c = (np.trace(r) - 1.0) * 0.5
    return math.acos(max(-1.0, min(1.0, c)))

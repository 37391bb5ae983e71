"""Pinhole cameras, axis-angle poses, and ray generation.

Conventions: world-to-camera transform p_cam = R p + t with R from the
exponential map of an axis-angle vector; camera center c = -R^T t; image x
right, y down, z forward; pixel (i, j) casts through its center
(i + 0.5, j + 0.5). Coarse levels reuse the full-resolution intrinsics and
sample the centers of the downsampled grid.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

_F = npt.NDArray[np.float64]

CAMERA_FORMAT = "sdftrace-camera/1"


@dataclass(frozen=True)
class Intrinsics:
    """Physical pinhole: focal length and sensor width in mm, square pixels."""

    focal_mm: float = 60.0
    sensor_mm: float = 32.0
    width: int = 512
    height: int = 512
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if self.focal_mm <= 0 or self.sensor_mm <= 0:
            raise ValueError("focal and sensor sizes must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("resolution must be positive")

    @property
    def fx(self) -> float:
        return self.focal_mm / self.sensor_mm * self.width

    @property
    def fy(self) -> float:
        return self.fx

    @property
    def center(self) -> tuple[float, float]:
        cx = self.width / 2.0 if self.cx is None else self.cx
        cy = self.height / 2.0 if self.cy is None else self.cy
        return cx, cy

    def matrix(self) -> _F:
        cx, cy = self.center
        return np.array([[self.fx, 0.0, cx], [0.0, self.fy, cy], [0.0, 0.0, 1.0]])

    def with_resolution(self, width: int, height: int) -> "Intrinsics":
        return Intrinsics(self.focal_mm, self.sensor_mm, width, height)


# === rotations ===========================================================


def _skew(w: _F) -> _F:
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def rotation_matrix(omega) -> _F:
    """Exponential map of an axis-angle vector (Rodrigues)."""
    w = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = _skew(w)
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def rotation_derivatives(omega) -> tuple[_F, list[_F]]:
    """R and its three partials dR/d omega_i.

    Closed form for the exponential map; at the identity the partials reduce
    to the basis skew matrices.
    """
    w = np.asarray(omega, dtype=np.float64)
    R = rotation_matrix(w)
    theta2 = float(w @ w)
    if theta2 < 1e-16:
        return R, [_skew(e) for e in np.eye(3)]
    derivs = []
    I = np.eye(3)
    for i in range(3):
        v = w[i] * w + np.cross(w, (I - R) @ I[:, i])
        derivs.append(_skew(v / theta2) @ R)
    return R, derivs


def log_rotation(R) -> _F:
    """Axis-angle of a rotation matrix (inverse of rotation_matrix)."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(tr)
    if theta < 1e-8:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - theta < 1e-6:
        # near half-turn the skew part vanishes; recover the axis from R + I
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        k = int(np.argmax(axis))
        axis = A[:, k] / axis[k]
        axis /= np.linalg.norm(axis)
        return theta * axis
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * axis


# === poses ===============================================================


@dataclass
class Pose:
    """World-to-camera rotation (axis-angle) and translation."""

    omega: _F = field(default_factory=lambda: np.zeros(3))
    t: _F = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64).reshape(3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    def rotation(self) -> _F:
        return rotation_matrix(self.omega)

    def center(self) -> _F:
        return -self.rotation().T @ self.t

    def params(self) -> _F:
        return np.concatenate([self.omega, self.t])

    @classmethod
    def from_params(cls, p) -> "Pose":
        p = np.asarray(p, dtype=np.float64).reshape(6)
        return cls(p[:3], p[3:])


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> Pose:
    """Pose looking from eye toward target (image y runs against world up)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise ValueError("view direction parallel to up")
    x /= nx
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=0)
    return Pose(log_rotation(R), -R @ eye)


class Camera(NamedTuple):
    intrinsics: Intrinsics
    pose: Pose


# === rays ================================================================


@dataclass
class RayBundle:
    """One ray per pixel of a (possibly downsampled) grid, row-major."""

    origin: _F              # [3] shared camera center
    dirs: _F                # [n,3] unit directions, world frame
    pixels: npt.NDArray[np.int64]   # [n,2] (i, j) at this level
    scale: _F               # [n] ray-distance -> camera-z factor
    width: int
    height: int
    level: int = 1


def generate_rays(intr: Intrinsics, pose: Pose, level: int = 1) -> RayBundle:
    """Pixel-center rays at full or 1/level-per-dimension resolution."""
    if level not in (1, 2, 4):
        raise ValueError(f"level must be 1, 2, or 4, got {level}")
    if intr.width % level or intr.height % level:
        raise ValueError("resolution not divisible by level")
    w, h = intr.width // level, intr.height // level
    cx, cy = intr.center
    i, j = np.meshgrid(np.arange(w), np.arange(h))
    i = i.ravel()
    j = j.ravel()
    x = ((i + 0.5) * level - cx) / intr.fx
    y = ((j + 0.5) * level - cy) / intr.fy
    d_cam = np.stack([x, y, np.ones_like(x)], axis=1)
    norm = np.linalg.norm(d_cam, axis=1)
    R = pose.rotation()
    dirs = (d_cam / norm[:, None]) @ R          # rows @ R == R^T applied per row
    origin = pose.center()
    if np.linalg.norm(origin) <= 1.0:
        warnings.warn("camera center inside the unit sphere", RuntimeWarning)
    return RayBundle(origin=origin, dirs=dirs,
                     pixels=np.stack([i, j], axis=1).astype(np.int64),
                     scale=1.0 / norm, width=w, height=h, level=level)


def pixel_dirs_cam(intr: Intrinsics, pixels, level: int = 1) -> _F:
    """Unit camera-frame directions for integer pixel indices."""
    px = np.asarray(pixels, dtype=np.float64)
    cx, cy = intr.center
    x = ((px[:, 0] + 0.5) * level - cx) / intr.fx
    y = ((px[:, 1] + 0.5) * level - cy) / intr.fy
    d = np.stack([x, y, np.ones_like(x)], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


# === projection ==========================================================


def project(points, intr: Intrinsics, pose: Pose) -> tuple[_F, _F]:
    """World points to continuous pixel coordinates and camera depth."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    R = pose.rotation()
    pc = p @ R.T + pose.t
    z = pc[:, 2]
    cx, cy = intr.center
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * pc[:, 0] / z + cx
        v = intr.fy * pc[:, 1] / z + cy
    return np.stack([u, v], axis=1), z


def unproject(uv, z, intr: Intrinsics, pose: Pose) -> _F:
    """Continuous pixel coordinates plus camera depth back to world points."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    cx, cy = intr.center
    x = (uv[:, 0] - cx) / intr.fx * z
    y = (uv[:, 1] - cy) / intr.fy * z
    pc = np.stack([x, y, z], axis=1)
    return (pc - pose.t) @ pose.rotation()


# === pose gradient =======================================================


def pose_gradient(intr: Intrinsics, pose: Pose, pixels, distances, grads,
                  level: int = 1) -> tuple[_F, _F]:
    """Chain per-sample point gradients into the 6 pose parameters.

    Samples sit at p_m = c + d_m * v_m with the marched distances d_m held
    fixed; gradients flow only through the camera center c and the ray
    directions v_m. grads is [m,3] = dL/dp_m.

    Returns (dL/d omega, dL/d t).
    """
    g = np.atleast_2d(np.asarray(grads, dtype=np.float64))
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    u_cam = pixel_dirs_cam(intr, pixels, level=level)
    if g.shape[0] != d.shape[0] or g.shape[0] != u_cam.shape[0]:
        raise ValueError("pixels, distances, grads must align")
    R, dRs = rotation_derivatives(pose.omega)
    g_sum = g.sum(axis=0)
    g_t = -(R @ g_sum)
    g_w = np.empty(3)
    for i, dR in enumerate(dRs):
        dc = -(dR.T @ pose.t)
        dv = u_cam @ dR             # rows are dR^T u_m
        g_w[i] = g_sum @ dc + np.einsum("m,mk,mk->", d, g, dv)
    return g_w, g_t


# === serialization =======================================================


def save_camera(intr: Intrinsics, pose: Pose, path) -> None:
    R = pose.rotation()
    ext = np.concatenate([R, pose.t[:, None]], axis=1)
    cx, cy = intr.center
    doc = {
        "format": CAMERA_FORMAT,
        "focal_mm": intr.focal_mm,
        "sensor_mm": intr.sensor_mm,
        "resolution": [intr.width, intr.height],
        "principal": [cx, cy],
        "extrinsic": ext.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_camera(path) -> Camera:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CAMERA_FORMAT:
        raise ValueError(f"not a camera file: format={doc.get('format')!r}")
    w, h = doc["resolution"]
    cx, cy = doc["principal"]
    intr = Intrinsics(doc["focal_mm"], doc["sensor_mm"], w, h, cx=cx, cy=cy)
    ext = np.asarray(doc["extrinsic"], dtype=np.float64)
    if ext.shape != (3, 4):
        raise ValueError("extrinsic must be 3x4")
    pose = Pose(log_rotation(ext[:, :3]), ext[:, 3])
    return Camera(intr, pose)

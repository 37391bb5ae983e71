"""Loss terms over the differentiable heads and their analytic gradients.

Each loss returns (scalar, gradient w.r.t. its surrogate inputs); the
surrogates' own gradients then come from HeadBundle.backward. Background
and invalid pixels contribute nothing, by construction of the masks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .camera import Intrinsics, Pose, project, unproject

_F = npt.NDArray[np.float64]


@dataclass
class Observation:
    """One per-view measurement: depth, silhouette, normal, or color image.

    mask marks trusted pixels (None trusts every finite pixel); sparse depth
    is just a depth observation with a sparse mask.
    """

    kind: str
    image: _F
    mask: npt.NDArray[np.bool_] | None = None

    def __post_init__(self):
        if self.kind not in ("depth", "silhouette", "normal", "color"):
            raise ValueError(f"unknown observation kind {self.kind!r}")
        self.image = np.asarray(self.image, dtype=np.float64)

    def valid(self) -> npt.NDArray[np.bool_]:
        finite = np.isfinite(self.image)
        if finite.ndim == 3:
            finite = finite.all(axis=2)
        return finite if self.mask is None else (finite & self.mask)


@dataclass
class LossWeights:
    depth: float = 10.0
    silhouette: float = 1.0
    normal: float = 1.0
    photometric: float = 5.0
    latent: float = 1.0


def depth_loss(heads, obs: Observation) -> tuple[float, _F]:
    """Mean L1 in camera-z space over observed-and-rendered foreground.

    Each pixel's selected samples share its unit of weight equally. Returns
    the per-sample seeds for the d-hat surrogates (zero off the overlap).
    """
    m = heads.sample_d.shape[0]
    valid_px = heads.converged & obs.valid()[heads.pixels[:, 1], heads.pixels[:, 0]]
    n_px = int(valid_px.sum())
    if n_px == 0:
        warnings.warn("depth loss: no overlap between observation and render",
                      RuntimeWarning)
        return 0.0, np.zeros(m)
    sample_ok = valid_px[heads.sample_pixel]
    z_obs = obs.image[heads.pixels[heads.sample_pixel, 1],
                      heads.pixels[heads.sample_pixel, 0]]
    # background z_obs is +inf; masked residuals must not touch the sum
    r = np.where(sample_ok, heads.depth_z - z_obs, 0.0)
    w = np.where(sample_ok, heads.sample_weight / n_px, 0.0)
    loss = float(np.sum(w * np.abs(r)))
    seed = w * np.sign(r) * heads.scale[heads.sample_pixel]
    return loss, seed


def silhouette_loss(soft: _F, target: _F) -> tuple[float, _F]:
    """Hinge on the signed soft silhouette against a binary target.

    Foreground pixels penalize positive soft values, background pixels
    negative ones; the mean runs over the whole image.
    """
    t = np.asarray(target, dtype=np.float64)
    if t.shape != soft.shape:
        raise ValueError("silhouette shapes differ")
    n = soft.size
    loss = float(np.sum(t * np.maximum(soft, 0.0)
                        + (1.0 - t) * np.maximum(-soft, 0.0))) / n
    grad = (t * (soft > 0.0) - (1.0 - t) * (soft < 0.0)) / n
    return loss, grad


def normal_loss(heads, obs: Observation) -> tuple[float, _F]:
    """Mean negative dot product against observed unit normals.

    Skips background, invalid observations, and degenerate rendered normals
    (zero difference vectors).
    """
    p = heads.pixels.shape[0]
    rendered_ok = np.linalg.norm(heads.normal_value, axis=1) > 0.0
    n_obs = obs.image[heads.pixels[:, 1], heads.pixels[:, 0]]
    valid = heads.converged & rendered_ok & \
        obs.valid()[heads.pixels[:, 1], heads.pixels[:, 0]]
    n = int(valid.sum())
    if n == 0:
        return 0.0, np.zeros((p, 3))
    loss = -float(np.einsum("ij,ij->", heads.normal_value[valid], n_obs[valid])) / n
    seed = np.zeros((p, 3))
    seed[valid] = -n_obs[valid] / n
    return loss, seed


def latent_reg(code) -> tuple[float, _F]:
    """Squared norm of the latent code."""
    z = np.asarray(code, dtype=np.float64)
    return float(z @ z), 2.0 * z


# === photometric consistency =============================================


def to_gray(img: _F) -> _F:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def bilinear_sample(img: _F, u: _F, v: _F) -> tuple[_F, _F, _F]:
    """Sample at continuous pixel-center coords; also d/du and d/dv.

    Coordinates clamp to the border, matching the sampling used for warps;
    out-of-frame rejection happens in the caller's mask.
    """
    h, w = img.shape
    xs = np.clip(u - 0.5, 0.0, w - 1.0)
    ys = np.clip(v - 0.5, 0.0, h - 1.0)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 2) if w > 1 else \
        np.zeros_like(xs, dtype=np.int64)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 2) if h > 1 else \
        np.zeros_like(ys, dtype=np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    v00, v10 = img[y0, x0], img[y0, x1]
    v01, v11 = img[y1, x0], img[y1, x1]
    val = (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy
    gu = (v10 - v00) * (1 - fy) + (v11 - v01) * fy
    gv = (v01 - v00) * (1 - fx) + (v11 - v10) * fx
    return val, gu, gv


def _pixel_centers(h: int, w: int) -> tuple[_F, _F]:
    i, j = np.meshgrid(np.arange(w, dtype=np.float64),
                       np.arange(h, dtype=np.float64))
    return i + 0.5, j + 0.5


def visibility_mask(z_i: _F, intr_i: Intrinsics, pose_i: Pose,
                    z_j: _F, intr_j: Intrinsics, pose_j: Pose,
                    thresh: float = 0.001) -> npt.NDArray[np.bool_]:
    """Pixels of view i whose surface point view j also sees.

    Reprojects view i's depth into j and accepts squared depth differences
    below thresh; pixels projecting out of j's frame are invisible. The mask
    is recomputed per iteration and carries no gradient.
    """
    h, w = z_i.shape
    fg = np.isfinite(z_i)
    u, v = _pixel_centers(h, w)
    pts = unproject(np.stack([u[fg], v[fg]], axis=1), z_i[fg], intr_i, pose_i)
    uv_j, z_in_j = project(pts, intr_j, pose_j)
    sx, sy = uv_j[:, 0] - 0.5, uv_j[:, 1] - 0.5
    hj, wj = z_j.shape
    inb = (sx >= 0.0) & (sx <= wj - 1.0) & (sy >= 0.0) & (sy <= hj - 1.0) & \
        (z_in_j > 0.0)
    xi = np.clip(np.rint(sx).astype(np.int64), 0, wj - 1)
    yi = np.clip(np.rint(sy).astype(np.int64), 0, hj - 1)
    z_seen = z_j[yi, xi]
    ok = inb & np.isfinite(z_seen) & ((z_in_j - z_seen) ** 2 < thresh)
    out = np.zeros((h, w), dtype=bool)
    out[fg] = ok
    return out


def photometric_loss(z_i: _F, gray_i: _F, intr_i: Intrinsics, pose_i: Pose,
                     gray_j: _F, intr_j: Intrinsics, pose_j: Pose,
                     z_j: _F, thresh: float = 0.001) -> tuple[float, _F]:
    """Mean L1 between view i and view j warped into it through i's depth.

    Gradients flow only through the warp coordinates, i.e. into the depth
    of view i; returns that dL/dz image. Pixels failing the visibility
    check contribute nothing.
    """
    h, w = z_i.shape
    vis = visibility_mask(z_i, intr_i, pose_i, z_j, intr_j, pose_j, thresh=thresh)
    dz = np.zeros((h, w))
    n = int(vis.sum())
    if n == 0:
        return 0.0, dz
    u, v = _pixel_centers(h, w)
    uv = np.stack([u[vis], v[vis]], axis=1)
    z = z_i[vis]
    pts = unproject(uv, z, intr_i, pose_i)
    uv_j, _ = project(pts, intr_j, pose_j)
    val, gu, gv = bilinear_sample(gray_j, uv_j[:, 0], uv_j[:, 1])
    r = gray_i[vis] - val
    loss = float(np.abs(r).sum()) / n

    # d(warp uv)/dz: the unprojected point moves along the pixel's camera ray
    cx, cy = intr_i.center
    ray = np.stack([(uv[:, 0] - cx) / intr_i.fx,
                    (uv[:, 1] - cy) / intr_i.fy,
                    np.ones(n)], axis=1) @ pose_i.rotation()   # rows R_i^T u
    Rj = pose_j.rotation()
    dXc = ray @ Rj.T
    pc = pts @ Rj.T + pose_j.t
    Z = pc[:, 2]
    du_dz = intr_j.fx * (dXc[:, 0] / Z - pc[:, 0] * dXc[:, 2] / Z**2)
    dv_dz = intr_j.fy * (dXc[:, 1] / Z - pc[:, 1] * dXc[:, 2] / Z**2)
    dz[vis] = -np.sign(r) * (gu * du_dz + gv * dv_dz) / n
    return loss, dz

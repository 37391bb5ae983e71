"""Render maps from a trace, and differentiable heads over its record.

The forward maps (depth, normal, soft silhouette, attributes) are plain
numpy reads of the marching record. diff_heads re-evaluates only the
selected lowest-|f| samples per pixel on an autodiff tape, with the sample
positions frozen at their marched locations, and exposes the surrogate
heads whose gradients drive the inverse problems:

    depth      d_k + f(p_k, z)        per selected sample
    silhouette f(p_best, z) - eps     per recorded pixel
    normal     central differences of six taped queries around the surface
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from . import autodiff as ad
from .fields import eval_field, eval_field_taped
from .tracer import CONVERGED, RayState, TraceConfig, TraceResult, \
    ray_sphere_miss_distance

_F = npt.NDArray[np.float64]


def ray_distance(state: RayState, i: int, alpha: float) -> float:
    """Marched surface distance of ray i with the overshoot residual undone."""
    if state.status[i] != CONVERGED:
        raise ValueError(f"ray {i} has not converged (status {state.status[i]})")
    return float(state.d[i] + (1.0 - alpha) * state.b[i])


def _distances(state: RayState, alpha: float) -> _F:
    return state.d + (1.0 - alpha) * state.b


def _grid(result: TraceResult, values: _F, fill, channels: int = 0):
    b = result.state.bundle
    shape = (b.height, b.width) if channels == 0 else (b.height, b.width, channels)
    img = np.full(shape, fill, dtype=np.float64)
    img[b.pixels[:, 1], b.pixels[:, 0]] = values
    return img


def hard_mask(result: TraceResult) -> npt.NDArray[np.bool_]:
    b = result.state.bundle
    img = np.zeros((b.height, b.width), dtype=bool)
    img[b.pixels[:, 1], b.pixels[:, 0]] = result.state.status == CONVERGED
    return img


def depth_map(result: TraceResult) -> _F:
    """Camera-space z per pixel; background is +inf."""
    state = result.state
    conv = state.status == CONVERGED
    d = _distances(state, result.config.alpha)
    z = np.where(conv, d * state.bundle.scale, np.inf)
    return _grid(result, z, np.inf)


def surface_points(result: TraceResult) -> tuple[_F, npt.NDArray[np.int64]]:
    """World-space hit points and their ray indices, converged rays only."""
    state = result.state
    idx = np.nonzero(state.status == CONVERGED)[0]
    d = _distances(state, result.config.alpha)[idx]
    pts = state.bundle.origin + d[:, None] * state.bundle.dirs[idx]
    return pts, idx


def normal_map(result: TraceResult, field, code=None) -> _F:
    """Unit surface normals by 6-query central differences; background zero.

    Pixels whose difference vector has zero norm are left zero (degenerate,
    excluded from normal losses).
    """
    pts, idx = surface_points(result)
    img = _grid(result, np.zeros((result.state.n, 3)), 0.0, channels=3)
    if idx.size == 0:
        return img
    delta = result.config.normal_delta
    offsets = np.concatenate([np.eye(3), -np.eye(3)], axis=0) * delta
    probes = (pts[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    f = eval_field(field, probes, code).reshape(-1, 6)
    raw = (f[:, :3] - f[:, 3:]) / (2.0 * delta)
    norm = np.linalg.norm(raw, axis=1, keepdims=True)
    ok = norm[:, 0] > 0.0
    unit = np.zeros_like(raw)
    unit[ok] = raw[ok] / norm[ok]
    b = result.state.bundle
    img[b.pixels[idx, 1], b.pixels[idx, 0]] = unit
    return img


def soft_silhouette(result: TraceResult) -> _F:
    """Signed soft occupancy: negative inside the rendered silhouette.

    Rays that touched the unit sphere score min |f| - eps over their
    queries; rays that missed it score their perpendicular distance to the
    origin minus 1. Miss values are computed from each full-resolution
    pixel's own ray, regardless of any coarse-level history.
    """
    state = result.state
    recorded = np.isfinite(state.topk_absf[:, 0])
    vals = np.empty(state.n)
    vals[recorded] = state.topk_absf[recorded, 0] - result.config.epsilon
    miss = ~recorded
    if np.any(miss):
        perp = ray_sphere_miss_distance(state.bundle)
        vals[miss] = perp[miss] - 1.0
    return _grid(result, vals, np.nan)


def attribute_map(result: TraceResult, attr_field, code=None) -> _F:
    """Surface attributes (color) per converged pixel; background zero."""
    pts, idx = surface_points(result)
    m = getattr(attr_field, "out_dim", 3)
    img = _grid(result, np.zeros((result.state.n, m)), 0.0, channels=m)
    if idx.size == 0:
        return img
    vals = attr_field.evaluate(pts, code)
    b = result.state.bundle
    img[b.pixels[idx, 1], b.pixels[idx, 0]] = vals
    return img


@dataclass
class RenderMaps:
    depth: _F
    normal: _F
    silhouette: _F
    mask: npt.NDArray[np.bool_]
    attribute: _F | None = None


def render(field, code, intr, pose, cfg: TraceConfig | None = None,
           attr_field=None, attr_code=None, with_normals: bool = True) -> RenderMaps:
    """Trace and assemble every map in one call."""
    from .tracer import trace
    result = trace(field, code, intr, pose, cfg)
    normal = normal_map(result, field, code) if with_normals else \
        np.zeros((result.state.bundle.height, result.state.bundle.width, 3))
    attr = None
    if attr_field is not None:
        attr = attribute_map(result, attr_field, attr_code)
    return RenderMaps(depth=depth_map(result), normal=normal,
                      silhouette=soft_silhouette(result),
                      mask=hard_mask(result), attribute=attr)


# === differentiable heads ================================================


class HeadBundle:
    """Taped surrogates over the frozen marching record of one trace.

    Pixel arrays cover every ray with at least one recorded sample; sample
    arrays hold each pixel's up-to-K record entries in ascending |f| order.
    backward() turns per-surrogate seeds into gradients for the latent code,
    the network weights (optional), and the frozen sample positions (for the
    pose chain).
    """

    def __init__(self, result: TraceResult, field, code=None,
                 want_normals: bool = False, want_weights: bool = False):
        state = result.state
        cfg = result.config
        self._field, self._code, self._cfg = field, code, cfg
        recorded = np.nonzero(np.isfinite(state.topk_absf[:, 0]))[0]
        self.ray_index = recorded
        self.pixels = state.bundle.pixels[recorded]
        self.converged = state.status[recorded] == CONVERGED
        self.scale = state.bundle.scale[recorded]

        counts = np.isfinite(state.topk_absf[recorded]).sum(axis=1)
        self.sample_pixel = np.repeat(np.arange(recorded.size), counts)
        self.sample_weight = 1.0 / counts[self.sample_pixel]
        slot = np.concatenate([np.arange(c) for c in counts]) if counts.size else \
            np.zeros(0, dtype=np.int64)
        self.sample_d = state.topk_d[recorded[self.sample_pixel], slot]
        self.best_sample = np.searchsorted(self.sample_pixel, np.arange(recorded.size))

        dirs = state.bundle.dirs[recorded]
        origin = state.bundle.origin
        sample_pts = origin + self.sample_d[:, None] * dirs[self.sample_pixel]
        self._m = sample_pts.shape[0]

        self._conv_rows = np.nonzero(self.converged)[0]
        if want_normals and self._conv_rows.size:
            d_conv = _distances(state, cfg.alpha)[recorded[self._conv_rows]]
            surf = origin + d_conv[:, None] * dirs[self._conv_rows]
            offs = np.concatenate([np.eye(3), -np.eye(3)], axis=0) * cfg.normal_delta
            probe = (surf[:, None, :] + offs[None, :, :]).reshape(-1, 3)
            self._surf_d = d_conv
            pts_all = np.concatenate([sample_pts, probe], axis=0)
        else:
            want_normals = False
            pts_all = sample_pts
        self._want_normals = want_normals

        vals, tape, out = eval_field_taped(field, pts_all, code,
                                           want_weights=want_weights)
        self._tape, self._out = tape, out
        self._assemble(vals)

    def _assemble(self, vals: _F) -> None:
        cfg = self._cfg
        self.sample_f = vals[:self._m]
        self.depth_value = self.sample_d + self.sample_f
        self.depth_z = self.depth_value * self.scale[self.sample_pixel]
        self.sil_value = self.sample_f[self.best_sample] - cfg.epsilon
        n_px = self.pixels.shape[0]
        self.normal_value = np.zeros((n_px, 3))
        self._raw_norm = np.zeros(self._conv_rows.size)
        if self._want_normals:
            f6 = vals[self._m:].reshape(-1, 6)
            raw = (f6[:, :3] - f6[:, 3:]) / (2.0 * cfg.normal_delta)
            nrm = np.linalg.norm(raw, axis=1)
            ok = nrm > 0.0
            unit = np.zeros_like(raw)
            unit[ok] = raw[ok] / nrm[ok, None]
            self.normal_value[self._conv_rows] = unit
            self._raw_norm = nrm

    def depth_image(self, height: int, width: int) -> _F:
        """Best-sample surrogate depth per converged pixel, +inf background."""
        img = np.full((height, width), np.inf)
        rows = self._conv_rows
        img[self.pixels[rows, 1], self.pixels[rows, 0]] = \
            self.depth_z[self.best_sample[rows]]
        return img

    def evaluate_at(self, code) -> tuple[_F, _F, _F]:
        """Replay the surrogates at another code, same frozen positions."""
        fresh = HeadBundle.__new__(HeadBundle)
        fresh.__dict__.update(self.__dict__)
        pts = self._tape._leaf_values["points"]
        vals = eval_field(self._field, pts, code)
        fresh._assemble(vals)
        return fresh.depth_value, fresh.sil_value, fresh.normal_value

    def backward(self, depth_seed=None, sil_seed=None, normal_seed=None,
                 ) -> dict[str, _F]:
        """Seeded gradients of the surrogate heads.

        depth_seed [m] multiplies d-hat per sample, sil_seed [p] the per-pixel
        silhouette surrogate, normal_seed [p,3] the normalized normals.
        Returns leaf gradients plus "sample_point_grads" [m,3] and, when
        normals were taped, "surface_point_grads" per converged pixel.
        """
        n_out = self._out.value.shape[0]
        seed = np.zeros(n_out)
        if depth_seed is not None:
            seed[:self._m] += np.asarray(depth_seed, dtype=np.float64)
        if sil_seed is not None:
            np.add.at(seed, self.best_sample, np.asarray(sil_seed, dtype=np.float64))
        if normal_seed is not None and self._want_normals:
            ns = np.asarray(normal_seed, dtype=np.float64)[self._conv_rows]
            raw_seed = np.zeros_like(ns)
            ok = self._raw_norm > 0.0
            unit = self.normal_value[self._conv_rows][ok]
            proj = ns[ok] - unit * np.einsum("ij,ij->i", unit, ns[ok])[:, None]
            raw_seed[ok] = proj / self._raw_norm[ok, None]
            per_probe = np.zeros((raw_seed.shape[0], 6))
            per_probe[:, :3] = raw_seed / (2.0 * self._cfg.normal_delta)
            per_probe[:, 3:] = -raw_seed / (2.0 * self._cfg.normal_delta)
            seed[self._m:] = per_probe.reshape(-1)
        if self._out.value.ndim == 2:
            seed = seed[:, None]
        grads = ad.backward(self._tape, self._out, seed)
        pts_g = grads.pop("points")
        out = {"sample_point_grads": pts_g[:self._m]}
        if self._want_normals:
            out["surface_point_grads"] = pts_g[self._m:].reshape(-1, 6, 3).sum(axis=1)
        if "code" in grads:
            out["code"] = grads.pop("code")
        if grads:
            out["weights"] = grads
        return out


def diff_heads(result: TraceResult, field, code=None, want_normals: bool = False,
               want_weights: bool = False) -> HeadBundle:
    """Build the taped surrogate heads for a completed trace."""
    return HeadBundle(result, field, code, want_normals=want_normals,
                      want_weights=want_weights)

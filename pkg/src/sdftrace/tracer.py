"""Sphere tracing over a unit-sphere scene bound, batched per pixel grid.

The marcher advances every live ray by alpha times its queried SDF value
and keeps a per-ray record of the lowest-|f| samples seen so far. Rays
start on the unit sphere (misses are background immediately), can march at
a coarse grid that splits 4-way toward full resolution, and drop out of the
batch the moment they converge or escape, so dead rays are never queried
again. Query counts are audited per step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dfield

import numpy as np
import numpy.typing as npt

from .camera import Intrinsics, Pose, RayBundle, generate_rays

_F = npt.NDArray[np.float64]

MARCHING, CONVERGED, ESCAPED, EXHAUSTED = 0, 1, 2, 3


@dataclass
class TraceConfig:
    alpha: float = 1.5              # marching step scale; >1 overshoots on purpose
    epsilon: float = 5e-5           # |f| convergence threshold
    max_steps: int = 100            # global budget across coarse levels
    k_samples: int = 1              # lowest-|f| samples kept per ray
    coarse_start_scale: int = 4     # 1 disables coarse-to-fine
    split_interval: int = 3         # steps between 4-way splits
    normal_delta: float = 1e-3      # central-difference offset for normals
    use_dynamic_mask: bool = True   # False = ablation row, dead rays still queried

    def __post_init__(self):
        if not (0.0 < self.alpha < 2.0):
            raise ValueError("alpha must be in (0, 2)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.k_samples < 1:
            raise ValueError("k_samples must be at least 1")
        if self.coarse_start_scale not in (1, 2, 4):
            raise ValueError("coarse_start_scale must be 1, 2, or 4")
        if self.split_interval < 1:
            raise ValueError("split_interval must be at least 1")


@dataclass
class RayState:
    """Struct-of-arrays marching state for one grid of rays."""

    bundle: RayBundle
    d: _F                   # accumulated distance, includes alpha * last step
    b: _F                   # last queried SDF value (nan before any query)
    status: npt.NDArray[np.uint8]
    steps: npt.NDArray[np.int64]    # queries made along this ray's history
    topk_d: _F              # [n,K] distances at which the best samples were taken
    topk_f: _F              # [n,K] their signed SDF values
    topk_absf: _F           # [n,K] sorted ascending; +inf marks empty slots

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def live(self) -> npt.NDArray[np.bool_]:
        return self.status == MARCHING


@dataclass
class TraceResult:
    state: RayState
    config: TraceConfig
    intrinsics: Intrinsics
    pose: Pose
    live_counts: list[int] = dfield(default_factory=list)
    total_queries: int = 0
    nan_count: int = 0


# === initialization ======================================================


def init_rays(bundle: RayBundle, cfg: TraceConfig) -> RayState:
    """Seed marching at the near unit-sphere intersection of each ray.

    Rays that miss the sphere are escaped immediately; their soft silhouette
    value comes from the perpendicular ray-origin distance later. A camera
    inside the sphere degenerates to d = 0 for every ray.
    """
    n = bundle.dirs.shape[0]
    c = bundle.origin
    c2 = float(c @ c)
    d0 = np.zeros(n)
    status = np.full(n, MARCHING, dtype=np.uint8)
    if c2 <= 1.0:
        warnings.warn("camera center inside the unit sphere; rays start at d=0",
                      RuntimeWarning)
    else:
        m = bundle.dirs @ c
        disc = m * m - (c2 - 1.0)
        hit = (disc >= 0.0) & (m < 0.0)     # tangent rays (disc == 0) count as hits
        d0[hit] = -m[hit] - np.sqrt(disc[hit])
        status[~hit] = ESCAPED
    k = cfg.k_samples
    return RayState(
        bundle=bundle,
        d=d0,
        b=np.full(n, np.nan),
        status=status,
        steps=np.zeros(n, dtype=np.int64),
        topk_d=np.zeros((n, k)),
        topk_f=np.zeros((n, k)),
        topk_absf=np.full((n, k), np.inf),
    )


def ray_sphere_miss_distance(bundle: RayBundle) -> _F:
    """Perpendicular distance from the scene origin to each ray's line."""
    c = bundle.origin
    m = bundle.dirs @ c
    return np.sqrt(np.maximum(float(c @ c) - m * m, 0.0))


# === marching ============================================================


def _record_topk(state: RayState, rows: npt.NDArray[np.int64], d_at: _F, f: _F) -> None:
    absf = np.abs(f)
    better = absf < state.topk_absf[rows, -1]   # strict: earliest query wins ties
    if not np.any(better):
        return
    r = rows[better]
    state.topk_absf[r, -1] = absf[better]
    state.topk_f[r, -1] = f[better]
    state.topk_d[r, -1] = d_at[better]
    order = np.argsort(state.topk_absf[r], axis=1, kind="stable")
    state.topk_absf[r] = np.take_along_axis(state.topk_absf[r], order, axis=1)
    state.topk_f[r] = np.take_along_axis(state.topk_f[r], order, axis=1)
    state.topk_d[r] = np.take_along_axis(state.topk_d[r], order, axis=1)


def march_step(state: RayState, field, code, cfg: TraceConfig) -> tuple[int, int]:
    """Advance every marching ray by one query.

    Returns (queries counted, NaN queries seen). With the dynamic mask
    disabled the whole grid is queried (the cost of the unmasked baseline)
    but dead rays' results are discarded, so the marched values are
    identical either way. A non-finite SDF value exhausts that ray.
    """
    live = state.live()
    if not np.any(live):
        raise ValueError("march_step called with no marching rays")
    if cfg.use_dynamic_mask:
        rows = np.nonzero(live)[0]
        queried = rows.size
    else:
        rows = np.arange(state.n)
        queried = state.n
    p = state.bundle.origin + state.d[rows, None] * state.bundle.dirs[rows]
    b = np.asarray(field.evaluate(p, code), dtype=np.float64)
    if not cfg.use_dynamic_mask:
        keep = live[rows]
        rows, b = rows[keep], b[keep]

    bad = ~np.isfinite(b)
    nan_count = int(bad.sum())
    if nan_count:
        state.status[rows[bad]] = EXHAUSTED
        state.b[rows[bad]] = np.nan
        state.steps[rows[bad]] += 1
        rows, b = rows[~bad], b[~bad]

    d_at = state.d[rows]
    _record_topk(state, rows, d_at, b)
    state.steps[rows] += 1
    state.b[rows] = b
    state.d[rows] = d_at + cfg.alpha * b

    conv = np.abs(b) < cfg.epsilon
    state.status[rows[conv]] = CONVERGED
    moving = rows[~conv]
    if moving.size:
        p_new = state.bundle.origin + state.d[moving, None] * state.bundle.dirs[moving]
        outside = np.einsum("ij,ij->i", p_new, p_new) > 1.0
        outward = np.einsum("ij,ij->i", state.bundle.dirs[moving], p_new) > 0.0
        esc = outside & (b[~conv] > 0.0) & outward
        state.status[moving[esc]] = ESCAPED
    return queried, nan_count


def _split(state: RayState, fine: RayBundle, cfg: TraceConfig) -> RayState:
    """4-way split: children inherit the parent's d, status, and record.

    Children of converged parents resume marching: the parent's |b| < eps
    held along the parent's direction, and freezing the children there would
    bake a pixel-footprint depth error into edge-on surfaces. Re-arming
    costs those rays a couple of queries and restores agreement with plain
    tracing.
    """
    pw = state.bundle.width
    parent = (fine.pixels[:, 1] // 2) * pw + (fine.pixels[:, 0] // 2)
    status = state.status[parent].copy()
    status[status == CONVERGED] = MARCHING
    return RayState(
        bundle=fine,
        d=state.d[parent].copy(),
        b=state.b[parent].copy(),
        status=status,
        steps=state.steps[parent].copy(),
        topk_d=state.topk_d[parent].copy(),
        topk_f=state.topk_f[parent].copy(),
        topk_absf=state.topk_absf[parent].copy(),
    )


def trace(field, code, intr: Intrinsics, pose: Pose,
          cfg: TraceConfig | None = None) -> TraceResult:
    """Full render-tracing pass: init, coarse-to-fine marching, cleanup."""
    cfg = cfg or TraceConfig()
    scale = cfg.coarse_start_scale
    if intr.width % scale or intr.height % scale:
        raise ValueError(
            f"resolution {intr.width}x{intr.height} not divisible by "
            f"coarse_start_scale {scale}")
    levels = []
    s = scale
    while s >= 1:
        levels.append(s)
        s //= 2
    state = init_rays(generate_rays(intr, pose, levels[0]), cfg)
    result = TraceResult(state=state, config=cfg, intrinsics=intr, pose=pose)
    steps_done = 0
    for li, level in enumerate(levels):
        if li > 0:
            state = _split(state, generate_rays(intr, pose, level), cfg)
            result.state = state
        budget = cfg.split_interval if level > 1 else cfg.max_steps - steps_done
        for _ in range(budget):
            if steps_done >= cfg.max_steps or not np.any(state.live()):
                break
            queried, nans = march_step(state, field, code, cfg)
            result.live_counts.append(queried)
            result.total_queries += queried
            result.nan_count += nans
            steps_done += 1
    state.status[state.live()] = EXHAUSTED
    return result


# === closed-form bounds ==================================================


def min_steps_bound(d: float, alpha: float, theta: float, epsilon: float) -> int:
    """Steps to shrink an initial surface distance d below epsilon.

    theta is the grazing angle between ray and surface, in radians; each
    step contracts the distance by |1 - alpha sin theta|. Raises in the
    divergent regime where that factor reaches 1.
    """
    if d <= 0 or epsilon <= 0:
        raise ValueError("d and epsilon must be positive")
    r = abs(1.0 - alpha * math.sin(theta))
    if r >= 1.0:
        raise ValueError(f"divergent marching: |1 - alpha sin theta| = {r:.3f} >= 1")
    if r == 0.0:
        return 1
    k = (math.log(epsilon) - math.log(d)) / math.log(r)
    return max(1, math.ceil(k))


def epsilon_bound(intr: Intrinsics, d_min: float, theta: float = 0.0) -> float:
    """Largest epsilon whose surface error stays under half a pixel.

    d_min is the closest scene distance and theta the off-axis view angle
    (radians, 0 = principal ray); the pixel footprint at distance d is
    d * S / (f * R), shrunk by cos^2 theta away from the axis.
    """
    if d_min <= 0:
        raise ValueError("d_min must be positive")
    c = math.cos(theta)
    return d_min * intr.sensor_mm * c * c / (2.0 * intr.focal_mm * intr.width)

"""Marching arithmetic, acceleration behavior, and the two bound formulas."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst
from scipy import ndimage

import oracles
import sdftrace as st
from sdftrace.camera import Pose, RayBundle, generate_rays
from sdftrace.tracer import (CONVERGED, ESCAPED, EXHAUSTED, MARCHING,
                             TraceConfig, epsilon_bound, init_rays, march_step,
                             min_steps_bound, ray_sphere_miss_distance, trace)

PLAIN = TraceConfig(alpha=1.0, coarse_start_scale=1)


def _one_ray_cam():
    """Single +z ray from (0,0,-2); cx = 0.5 so the lone pixel is on-axis."""
    intr = st.Intrinsics(focal_mm=1.0, sensor_mm=1.0, width=1, height=1)
    return intr, Pose(np.zeros(3), np.array([0.0, 0.0, 2.0]))


def _bundle(dirs):
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(dirs)
    return RayBundle(origin=np.array([0.0, 0.0, -2.0]), dirs=dirs,
                     pixels=np.stack([np.arange(n), np.zeros(n, dtype=np.int64)],
                                     axis=1),
                     scale=np.ones(n), width=n, height=1)


# camera plane at z = 0.3, normal toward the camera
FRONT_PLANE = st.PlaneField(normal=(0.0, 0.0, -1.0), offset=-0.3)


# === initialization ======================================================


def test_init_center_ray_enters_unit_sphere_at_one():
    intr, pose = _one_ray_cam()
    state = init_rays(generate_rays(intr, pose), TraceConfig())
    assert state.d[0] == 1.0
    assert state.status[0] == MARCHING
    assert np.isnan(state.b[0])
    assert state.steps[0] == 0


def test_init_marks_wide_angle_misses_escaped():
    # short lens from two units out: corner rays clear the unit sphere
    intr = st.Intrinsics(focal_mm=20.0, sensor_mm=32.0, width=32, height=32)
    pose = st.look_at((0.0, 0.0, -2.0))
    bundle = generate_rays(intr, pose)
    state = init_rays(bundle, TraceConfig())
    perp = ray_sphere_miss_distance(bundle)
    assert np.array_equal(state.status == ESCAPED, perp > 1.0)
    assert (state.status == ESCAPED).any() and (state.status == MARCHING).any()
    assert np.all(state.d[state.status == ESCAPED] == 0.0)


def test_tangent_ray_counts_as_hit():
    # origin (1,0,-2), direction +z: touches the unit sphere at (1,0,0) with
    # a float-exact zero discriminant
    b = RayBundle(origin=np.array([1.0, 0.0, -2.0]),
                  dirs=np.array([[0.0, 0.0, 1.0]]),
                  pixels=np.array([[0, 0]]), scale=np.ones(1), width=1, height=1)
    state = init_rays(b, TraceConfig())
    assert state.status[0] == MARCHING
    assert state.d[0] == 2.0


def test_backward_ray_escapes_at_init():
    state = init_rays(_bundle([0.0, 0.0, -1.0]), TraceConfig())
    assert state.status[0] == ESCAPED


def test_miss_distance_matches_point_line_formula():
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    bundle = _bundle(dirs)
    perp = ray_sphere_miss_distance(bundle)
    c = bundle.origin
    ref = np.linalg.norm(c[None, :] - (dirs @ c)[:, None] * dirs, axis=1)
    assert np.max(np.abs(perp - ref)) < 1e-12


def test_inside_camera_starts_at_zero():
    b = RayBundle(origin=np.array([0.0, 0.0, -0.5]),
                  dirs=np.array([[0.0, 0.0, 1.0]]),
                  pixels=np.array([[0, 0]]), scale=np.ones(1), width=1, height=1)
    with pytest.warns(RuntimeWarning):
        state = init_rays(b, TraceConfig())
    assert state.d[0] == 0.0 and state.status[0] == MARCHING


# === single-step arithmetic ==============================================


def test_march_step_update_rule_exact():
    intr, pose = _one_ray_cam()
    cfg = TraceConfig(alpha=1.5, coarse_start_scale=1)
    state = init_rays(generate_rays(intr, pose), cfg)
    queried, nans = march_step(state, FRONT_PLANE, None, cfg)
    # init point z = -1 sits 1.3 in front of the plane
    assert (queried, nans) == (1, 0)
    assert state.b[0] == 1.3
    assert state.d[0] == 1.0 + 1.5 * 1.3
    assert state.steps[0] == 1
    assert state.status[0] == MARCHING


def test_unit_alpha_head_on_plane_converges_in_two_queries():
    intr, pose = _one_ray_cam()
    cfg = TraceConfig(alpha=1.0, coarse_start_scale=1)
    state = init_rays(generate_rays(intr, pose), cfg)
    march_step(state, FRONT_PLANE, None, cfg)
    assert state.d[0] == pytest.approx(2.3, abs=1e-15)
    assert state.status[0] == MARCHING       # |1.3| >= eps at the first query
    march_step(state, FRONT_PLANE, None, cfg)
    assert state.status[0] == CONVERGED
    assert state.b[0] == pytest.approx(0.0, abs=1e-15)
    assert state.d[0] == pytest.approx(2.3, abs=1e-15)
    assert state.steps[0] == 2


def test_convergence_check_runs_after_the_advance():
    # the converging query still moves the ray by alpha * b
    intr, pose = _one_ray_cam()
    cfg = TraceConfig(alpha=1.5, epsilon=1e-2, coarse_start_scale=1)
    state = init_rays(generate_rays(intr, pose), cfg)
    for _ in range(40):
        if state.status[0] != MARCHING:
            break
        d_before = state.d[0]
        march_step(state, FRONT_PLANE, None, cfg)
    assert state.status[0] == CONVERGED
    assert state.d[0] == d_before + 1.5 * state.b[0]
    assert state.b[0] != 0.0


def test_march_step_requires_live_rays():
    state = init_rays(_bundle([0.0, 0.0, -1.0]), TraceConfig())
    with pytest.raises(ValueError):
        march_step(state, FRONT_PLANE, None, TraceConfig())


def test_dead_rays_stay_frozen():
    # one ray converges on the small sphere, one passes it and escapes
    v_graze = np.array([0.4, 0.0, 1.0])
    v_graze /= np.linalg.norm(v_graze)
    bundle = _bundle(np.stack([np.array([0.0, 0.0, 1.0]), v_graze]))
    field = st.SphereField(radius=0.5)
    cfg = TraceConfig(alpha=1.0, coarse_start_scale=1)
    state = init_rays(bundle, cfg)
    snapshots = {}
    for _ in range(100):
        if not state.live().any():
            break
        march_step(state, field, None, cfg)
        for i in range(2):
            if state.status[i] != MARCHING and i not in snapshots:
                snapshots[i] = (state.d[i], state.steps[i])
    assert state.status[0] == CONVERGED and state.status[1] == ESCAPED
    for i, (d, steps) in snapshots.items():
        assert state.d[i] == d and state.steps[i] == steps


def test_nan_field_exhausts_rays():
    class NanField:
        latent_dim = 0

        def evaluate(self, points, code=None):
            return np.full(len(np.atleast_2d(points)), np.nan)

    intr, pose = _one_ray_cam()
    cfg = TraceConfig(coarse_start_scale=1)
    result = trace(NanField(), None, intr, pose, cfg)
    assert result.nan_count > 0
    assert result.state.status[0] == EXHAUSTED
    assert np.isnan(result.state.b[0])


# === full traces against the closed form =================================


def test_sphere_depth_matches_quadratic_oracle(small_camera):
    intr, pose = small_camera
    result = trace(st.SphereField(radius=0.5), None, intr, pose, PLAIN)
    depth = st.depth_map(result)
    ref = oracles.sphere_depth_image(intr, pose, 0.5)
    both = np.isfinite(depth) & np.isfinite(ref)
    assert both.sum() > 100
    err = np.abs(depth[both] - ref[both])
    # a stop at |f| < eps leaves a gap of about eps / cos(incidence)
    assert np.median(err) < PLAIN.epsilon
    c = np.asarray(pose.center())
    pts, rows = st.surface_points(result)
    vn = np.abs(np.einsum("ij,ij->i", pts / np.linalg.norm(pts, axis=1,
                                                           keepdims=True),
                          result.state.bundle.dirs[rows]))
    flat = np.zeros(intr.height * intr.width)
    flat[result.state.bundle.pixels[rows, 1] * intr.width
         + result.state.bundle.pixels[rows, 0]] = vn
    assert np.all(err * flat.reshape(depth.shape)[both] < 3 * PLAIN.epsilon)


def test_mask_agrees_with_oracle_away_from_limb(small_camera):
    intr, pose = small_camera
    result = trace(st.SphereField(radius=0.5), None, intr, pose, PLAIN)
    depth = st.depth_map(result)
    ref = oracles.sphere_depth_image(intr, pose, 0.5)
    disagree = np.isfinite(depth) != np.isfinite(ref)
    assert disagree.mean() < 0.02


def test_recorded_samples_replay_bitwise(small_camera):
    # the recorded (d, f) pairs must reproduce under a fresh field call
    intr, pose = small_camera
    field = st.SphereField(radius=0.5)
    cfg = TraceConfig(alpha=1.5, coarse_start_scale=1, k_samples=3)
    result = trace(field, None, intr, pose, cfg)
    state = result.state
    conv = state.status == CONVERGED
    rows = np.nonzero(conv)[0][:50]
    for i in rows:
        for k in range(3):
            if not np.isfinite(state.topk_absf[i, k]):
                continue
            p = state.bundle.origin + state.topk_d[i, k] * state.bundle.dirs[i]
            assert field.evaluate(p[None, :])[0] == state.topk_f[i, k]
    assert np.all(np.diff(state.topk_absf[rows], axis=1) >= 0.0)
    assert np.all(state.topk_absf[rows, 0] < cfg.epsilon)


def test_query_audit_totals(small_camera):
    intr, pose = small_camera
    result = trace(st.SphereField(radius=0.5), None, intr, pose,
                   TraceConfig(alpha=1.0))
    assert sum(result.live_counts) == result.total_queries
    assert result.total_queries > 0


def test_max_steps_one_exhausts_hit_rays(small_camera):
    intr, pose = small_camera
    cfg = TraceConfig(alpha=1.0, max_steps=1, coarse_start_scale=1)
    result = trace(st.SphereField(radius=0.5), None, intr, pose, cfg)
    s = result.state.status
    assert not (s == CONVERGED).any()
    assert (s == EXHAUSTED).any()
    assert np.all(result.state.steps[s == EXHAUSTED] == 1)


# === acceleration ========================================================


def test_dynamic_mask_changes_cost_not_values(small_camera):
    intr, pose = small_camera
    field = st.SphereField(radius=0.5)
    on = trace(field, None, intr, pose,
               TraceConfig(alpha=1.0, coarse_start_scale=1))
    off = trace(field, None, intr, pose,
                TraceConfig(alpha=1.0, coarse_start_scale=1,
                            use_dynamic_mask=False))
    assert np.array_equal(on.state.d, off.state.d)
    assert np.array_equal(on.state.status, off.state.status)
    assert off.total_queries > on.total_queries


def test_coarse_to_fine_saves_queries(small_camera):
    intr, pose = small_camera
    field = st.SphereField(radius=0.5)
    plain = trace(field, None, intr, pose, PLAIN)
    coarse = trace(field, None, intr, pose,
                   TraceConfig(alpha=1.0, coarse_start_scale=4))
    assert coarse.total_queries < plain.total_queries
    dp, dc = st.depth_map(plain), st.depth_map(coarse)
    both = np.isfinite(dp) & np.isfinite(dc)
    # the outermost ring sees the sphere nearly edge-on, where any pair of
    # eps-stopped runs can disagree by eps / |v.n|; compare inside it
    interior = ndimage.binary_erosion(both)
    assert interior.sum() > 50
    assert np.max(np.abs(dp[interior] - dc[interior])) < 5 * PLAIN.epsilon
    assert (np.isfinite(dp) != np.isfinite(dc)).mean() < 0.02


def test_overshoot_records_negative_samples(small_camera):
    intr, pose = small_camera
    field = st.SphereField(radius=0.5)

    def neg_frac(alpha):
        r = trace(field, None, intr, pose,
                  TraceConfig(alpha=alpha, coarse_start_scale=1))
        conv = r.state.status == CONVERGED
        return float((r.state.topk_f[conv, 0] < 0.0).mean())

    f15, f10 = neg_frac(1.5), neg_frac(1.0)
    assert f15 >= 0.10
    assert f15 > f10


def test_trace_rejects_indivisible_resolution():
    intr = st.Intrinsics(width=30, height=30)
    pose = st.look_at((0.0, 0.0, -2.0))
    with pytest.raises(ValueError):
        trace(st.SphereField(), None, intr, pose, TraceConfig(coarse_start_scale=4))


@pytest.mark.parametrize("kw", [
    {"alpha": 0.0}, {"alpha": 2.0}, {"epsilon": 0.0}, {"max_steps": 0},
    {"k_samples": 0}, {"coarse_start_scale": 3}, {"split_interval": 0},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TraceConfig(**kw)


# === bound formulas ======================================================


def test_step_bound_reference_values():
    # frozen from the simulation oracle: d=1, 10 degree grazing, eps=5e-5
    assert min_steps_bound(1.0, 1.0, np.radians(10.0), 5e-5) == 52
    assert min_steps_bound(1.0, 1.5, np.radians(10.0), 5e-5) == 33


def test_step_bound_agrees_with_simulation():
    for d, alpha, theta in [(1.0, 1.0, 0.5), (2.0, 1.5, 0.4), (0.7, 0.8, 1.0)]:
        closed = min_steps_bound(d, alpha, theta, 5e-5)
        assert closed == oracles.contraction_steps(d, alpha, theta, 5e-5)


@settings(max_examples=60, deadline=None)
@given(hst.floats(0.1, 3.0), hst.floats(0.3, 1.9), hst.floats(0.2, 1.4))
def test_step_bound_simulation_property(d, alpha, theta):
    r = abs(1.0 - alpha * np.sin(theta))
    if r >= 0.98:    # keep runtimes and float-edge cases out
        return
    assert min_steps_bound(d, alpha, theta, 1e-4) == \
        oracles.contraction_steps(d, alpha, theta, 1e-4)


def test_step_bound_perpendicular_unit_alpha_is_one_step():
    assert min_steps_bound(1.0, 1.0, np.pi / 2.0, 1e-6) == 1


def test_step_bound_divergent_raises():
    with pytest.raises(ValueError):
        min_steps_bound(1.0, 1.0, 0.0, 1e-4)     # parallel ray never closes in
    with pytest.raises(ValueError):
        min_steps_bound(0.0, 1.0, 0.5, 1e-4)


def test_epsilon_bound_reference_value():
    # default lens, nearest surface a tenth of a unit away
    eps = epsilon_bound(st.Intrinsics(), 0.1)
    assert eps == pytest.approx(0.1 * 32.0 / (2.0 * 60.0 * 512.0), rel=1e-12)
    assert 5.0e-5 < eps < 5.4e-5


def test_epsilon_bound_scalings():
    intr = st.Intrinsics()
    base = epsilon_bound(intr, 1.0)
    assert epsilon_bound(intr.with_resolution(1024, 1024), 1.0) == \
        pytest.approx(base / 2.0, rel=1e-12)
    assert epsilon_bound(st.Intrinsics(focal_mm=30.0), 1.0) == \
        pytest.approx(2.0 * base, rel=1e-12)
    assert epsilon_bound(intr, 2.0) == pytest.approx(2.0 * base, rel=1e-12)
    assert epsilon_bound(intr, 1.0, theta=np.pi / 3.0) == \
        pytest.approx(base / 4.0, rel=1e-12)


def test_epsilon_bound_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        epsilon_bound(st.Intrinsics(), 0.0)

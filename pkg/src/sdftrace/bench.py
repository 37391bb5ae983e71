"""Acceleration ladder: the same scene traced with features switched on
cumulatively, so the query counts read as an ablation table."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, Pose, look_at
from .fields import BoxField, SphereField, UnionField
from .tracer import CONVERGED, TraceConfig, trace


def default_scene():
    """Sphere-box union inside the unit ball, camera two units out."""
    field = UnionField([
        SphereField(center=(-0.25, 0.0, 0.0), radius=0.4),
        BoxField(center=(0.3, 0.1, 0.0), half_extents=(0.25, 0.25, 0.25)),
    ])
    pose = look_at((0.0, 0.0, -2.0), (0.0, 0.0, 0.0))
    return field, pose


def asymmetric_scene():
    """Three blobs spread in depth, for pose experiments.

    Pose recovery needs first-order parallax: with every surface at the same
    depth, a camera rotation about the object's center is compensated by a
    translation to second order and the optimizer crawls along that valley.
    Separating the shapes in z turns the valley into a bowl.
    """
    field = UnionField([
        SphereField(center=(-0.25, 0.0, 0.25), radius=0.35),
        BoxField(center=(0.3, 0.1, -0.2), half_extents=(0.18, 0.28, 0.22)),
        SphereField(center=(0.05, -0.4, -0.1), radius=0.15),
    ])
    pose = look_at((0.0, 0.0, -2.0), (0.0, 0.0, 0.0))
    return field, pose


def benchmark_field(seed: int = 0):
    """The default scene distilled into a small MLP, plus its camera pose.

    The ladder's aggressive row only pays off on learned fields: their
    bounded head underestimates distance away from the surface, which is
    exactly what over-relaxation compensates for. Exact analytic SDFs land
    head-on rays in one unit step, so alpha > 1 can only add oscillation
    there.
    """
    from .fitting import fit_to_analytic
    target, pose = default_scene()
    net, _ = fit_to_analytic(target, hidden=(48, 48, 48), n_samples=20_000,
                             epochs=12, seed=seed)
    return net, pose


def strategy_ladder(max_steps: int = 50) -> list[tuple[str, TraceConfig]]:
    """Cumulative feature stack, weakest first."""
    return [
        ("parallel", TraceConfig(alpha=1.0, max_steps=max_steps,
                                 coarse_start_scale=1, use_dynamic_mask=False)),
        ("+dynamic", TraceConfig(alpha=1.0, max_steps=max_steps,
                                 coarse_start_scale=1)),
        ("+aggressive", TraceConfig(alpha=1.5, max_steps=max_steps,
                                    coarse_start_scale=1)),
        ("+coarse", TraceConfig(alpha=1.5, max_steps=max_steps,
                                coarse_start_scale=4)),
    ]


@dataclass
class BenchRow:
    name: str
    total_queries: int
    converged: int
    rays: int
    elapsed: float


def run_bench(field=None, code=None, intr: Intrinsics | None = None,
              pose: Pose | None = None, max_steps: int = 50) -> list[BenchRow]:
    if field is None:
        field, default_pose = benchmark_field()
        pose = pose or default_pose
    if pose is None:
        raise ValueError("pose required when field is given")
    intr = intr or Intrinsics(width=128, height=128)
    rows = []
    for name, cfg in strategy_ladder(max_steps):
        t0 = time.perf_counter()
        result = trace(field, code, intr, pose, cfg)
        rows.append(BenchRow(
            name=name,
            total_queries=result.total_queries,
            converged=int(np.sum(result.state.status == CONVERGED)),
            rays=result.state.n,
            elapsed=time.perf_counter() - t0,
        ))
    return rows


def format_bench(rows: list[BenchRow]) -> str:
    head = f"{'strategy':<12} {'queries':>10} {'converged':>10} {'rays':>8} {'sec':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.name:<12} {r.total_queries:>10} {r.converged:>10} "
                     f"{r.rays:>8} {r.elapsed:>8.3f}")
    return "\n".join(lines)

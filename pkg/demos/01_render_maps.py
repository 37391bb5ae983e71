"""
Rendering depth, normal, and silhouette maps
============================================

Sphere-trace an analytic two-shape scene and write every map the renderer
produces. The PFM file keeps exact float depth (background +inf becomes the
0.0 sentinel on disk); the PNGs are for looking at.
"""

from pathlib import Path

import numpy as np

from sdftrace import (Intrinsics, TraceConfig, look_at, render)
from sdftrace.bench import default_scene
from sdftrace.imageio import (depth_to_png, normal_to_png, write_pfm,
                              write_pgm, write_png)

out = Path(__file__).parent / "out" / "render"
out.mkdir(parents=True, exist_ok=True)

field, pose = default_scene()
intr = Intrinsics(width=256, height=256)

maps = render(field, None, intr, pose, TraceConfig(alpha=1.5), with_normals=True)

write_pfm(out / "depth.pfm", maps.depth)
write_pgm(out / "mask.pgm", maps.mask)
depth_to_png(out / "depth.png", maps.depth)
normal_to_png(out / "normal.png", maps.normal)
# squash the signed silhouette field into [0,1] for viewing; the sign is
# what matters downstream (negative = covered)
write_png(out / "silhouette.png", 1.0 / (1.0 + np.exp(-50.0 * maps.silhouette)))

fg = maps.mask.sum()
print(f"rendered {intr.width}x{intr.height}, {fg} foreground pixels")
print(f"depth range on surface: {maps.depth[maps.mask].min():.4f}"
      f" .. {maps.depth[maps.mask].max():.4f}")
print(f"wrote maps to {out}")

"""
Acceleration strategies as an ablation ladder
=============================================

Trace the benchmark scene four times, enabling one speedup per row:

    parallel      every ray queried every step, alpha = 1
    +dynamic      finished rays drop out of the field batch
    +aggressive   alpha = 1.5 over-relaxation
    +coarse       start at 1/4 resolution, split rays 4-way as they settle

Query counts fall monotonically. The scene is a small MLP distilled from
the analytic union on purpose: a learned field underestimates distance away
from the surface, which is exactly the slack over-relaxation converts into
progress. On an exact SDF the aggressive row would only oscillate.
"""

from sdftrace.bench import benchmark_field, format_bench, run_bench
from sdftrace import Intrinsics

print("distilling the benchmark field (once, a few seconds) ...")
field, pose = benchmark_field()

rows = run_bench(field=field, intr=Intrinsics(width=128, height=128), pose=pose)
print()
print(format_bench(rows))

base = rows[0].total_queries
print()
for r in rows:
    print(f"{r.name:<12} {r.total_queries / base:6.1%} of the parallel baseline")

"""Command line front end.

Thin argparse wrappers over the library calls; each handler loads inputs,
runs one driver, and writes the artifacts. Exit codes: 2 bad configuration
or input format, 3 numeric failure, 4 file system trouble.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fields as flds
from .bench import format_bench, run_bench
from .camera import Camera, Intrinsics, Pose, load_camera, look_at, save_camera
from .fitting import fit_to_analytic
from .imageio import depth_to_png, normal_to_png, read_pfm, read_pgm, \
    write_pfm, write_pgm, write_png
from .losses import Observation
from .optimize import OptimizationError, complete_shape, recover_pose, \
    reconstruct_multiview
from .shading import diff_heads, render
from .tracer import TraceConfig, trace

REPORT_FORMAT = "sdftrace-report/1"

_BUILTINS = {
    "sphere": lambda: flds.SphereField(radius=0.5),
    "box": lambda: flds.BoxField(half_extents=(0.3, 0.3, 0.3)),
    "plane": lambda: flds.PlaneField(normal=(0.0, 0.0, 1.0), offset=0.0),
}


def _load_field(spec: str):
    if spec in _BUILTINS:
        return _BUILTINS[spec](), None
    return flds.load_field(spec)


def _camera(args) -> Camera:
    if args.camera:
        intr, pose = load_camera(args.camera)
        if args.res:
            intr = intr.with_resolution(args.res, args.res)
        return Camera(intr, pose)
    res = args.res or 128
    return Camera(Intrinsics(width=res, height=res),
                  look_at((0.0, 0.0, -2.0), (0.0, 0.0, 0.0)))


def _write_report(path, command: str, payload: dict) -> None:
    doc = {"format": REPORT_FORMAT, "command": command, **payload}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _report_payload(report) -> dict:
    return {
        "losses": report.losses,
        "grad_norms": report.grad_norms,
        "best_iter": report.best_iter,
        "best_loss": report.best_loss,
        "total_queries": report.total_queries,
        "elapsed": report.elapsed,
        "skipped_steps": report.skipped_steps,
        "non_identifiable": report.non_identifiable,
    }


def _cmd_render(args) -> int:
    field, codes = _load_field(args.field)
    code = codes[args.code_index] if codes is not None else None
    cam = _camera(args)
    maps = render(field, code, cam.intrinsics, cam.pose,
                  TraceConfig(alpha=args.alpha), with_normals=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "depth.pfm", maps.depth)
    write_pgm(out / "mask.pgm", maps.mask)
    depth_to_png(out / "depth.png", maps.depth)
    normal_to_png(out / "normal.png", maps.normal)
    write_png(out / "silhouette.png", 1.0 / (1.0 + np.exp(-50.0 * maps.silhouette)))
    print(f"wrote depth/mask/normal/silhouette to {out}")
    return 0


def _cmd_complete_depth(args) -> int:
    field, codes = _load_field(args.field)
    cam = _camera(args)
    obs = [Observation("depth", read_pfm(args.depth))]
    if args.silhouette:
        obs.append(Observation("silhouette", read_pgm(args.silhouette) > 127))
    code, report = complete_shape(field, obs, cam.intrinsics, cam.pose,
                                  iters=args.iters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "code.txt", code)
    _write_report(out / "report.json", "complete-depth", _report_payload(report))
    print(f"best loss {report.best_loss:.6g} at iteration {report.best_iter}")
    return 0


def _cmd_recover_pose(args) -> int:
    field, codes = _load_field(args.field)
    code = codes[args.code_index] if codes is not None else None
    intr, pose0 = load_camera(args.camera_init)
    obs = [Observation("depth", read_pfm(args.depth))]
    if args.silhouette:
        obs.append(Observation("silhouette", read_pgm(args.silhouette) > 127))
    pose, report = recover_pose(field, code, obs, intr, pose0, iters=args.iters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_camera(intr, pose, out / "camera.json")
    _write_report(out / "report.json", "recover-pose", _report_payload(report))
    print(f"best loss {report.best_loss:.6g} at iteration {report.best_iter}")
    return 0


def _cmd_mvs(args) -> int:
    field, codes = _load_field(args.field)
    scene = Path(args.scene)
    views = sorted(scene.glob("view*.json"))
    if len(views) < 2:
        raise ValueError(f"need at least two view*.json cameras in {scene}")
    cams, images = [], []
    for v in views:
        cams.append(load_camera(v))
        img = read_pfm(v.with_suffix(".pfm"))
        images.append(np.where(np.isfinite(img), img, 0.0))
    code, report = reconstruct_multiview(field, images, cams, iters=args.iters,
                                         seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "code.txt", code)
    _write_report(out / "report.json", "mvs", _report_payload(report))
    print(f"best loss {report.best_loss:.6g} at iteration {report.best_iter}")
    return 0


def _cmd_fit_toy(args) -> int:
    target = _BUILTINS[args.shape]()
    net, report = fit_to_analytic(target, epochs=args.epochs, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flds.save_field(net, out / "field.json")
    _write_report(out / "report.json", "fit-toy", {
        "val_mae": report.val_mae,
        "converged": report.converged,
        "train_losses": report.train_losses,
        "elapsed": report.elapsed,
    })
    print(f"val MAE {report.val_mae:.5f} ({'ok' if report.converged else 'poor fit'})")
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    net = flds.NeuralField.init(latent_dim=2, hidden=(16, 16), rng=rng)
    code = rng.normal(0.0, 0.3, 2)
    cam = Camera(Intrinsics(width=24, height=24),
                 look_at((0.0, 0.0, -2.0), (0.0, 0.0, 0.0)))
    result = trace(net, code, cam.intrinsics, cam.pose,
                   TraceConfig(coarse_start_scale=1))
    heads = diff_heads(result, net, code)
    g = heads.backward(depth_seed=np.ones(heads.sample_d.shape[0]))["code"]
    fd = np.empty_like(code)
    for a in range(code.size):
        e = np.zeros_like(code)
        e[a] = 1e-6
        fd[a] = (np.sum(heads.evaluate_at(code + e)[0]) -
                 np.sum(heads.evaluate_at(code - e)[0])) / 2e-6
    rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-12)
    print(f"depth head code gradient: max rel err {rel.max():.3e}")
    if rel.max() > 1e-4:
        raise OptimizationError("gradient check failed")
    return 0


def _cmd_bench(args) -> int:
    res = args.res or 128
    field = code = pose = None
    if args.scene:
        field, codes = _load_field(args.scene)
        code = codes[0] if codes is not None else None
        pose = load_camera(args.camera).pose if args.camera else \
            look_at((0.0, 0.0, -2.0), (0.0, 0.0, 0.0))
    rows = run_bench(field=field, code=code,
                     intr=Intrinsics(width=res, height=res), pose=pose)
    print(format_bench(rows))
    if args.out:
        _write_report(args.out, "bench", {"rows": [vars(r) for r in rows]})
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdftrace",
                                description="sphere tracing for implicit SDFs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--res", type=int, default=None)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render depth/normal/silhouette maps")
    r.add_argument("--field", required=True, help="field JSON or builtin name")
    r.add_argument("--camera", default=None)
    r.add_argument("--code-index", type=int, default=0)
    r.add_argument("--alpha", type=float, default=1.5)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=_cmd_render)

    c = sub.add_parser("complete-depth", help="recover a shape code from depth")
    c.add_argument("--field", required=True)
    c.add_argument("--depth", required=True)
    c.add_argument("--silhouette", default=None)
    c.add_argument("--camera", default=None)
    c.add_argument("--iters", type=int, default=100)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=_cmd_complete_depth)

    g = sub.add_parser("recover-pose", help="recover camera pose from depth")
    g.add_argument("--field", required=True)
    g.add_argument("--depth", required=True)
    g.add_argument("--silhouette", default=None)
    g.add_argument("--camera-init", required=True)
    g.add_argument("--code-index", type=int, default=0)
    g.add_argument("--iters", type=int, default=200)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_recover_pose)

    m = sub.add_parser("mvs", help="multi-view photometric reconstruction")
    m.add_argument("--field", required=True)
    m.add_argument("--scene", required=True,
                   help="directory of view*.json cameras with view*.pfm images")
    m.add_argument("--iters", type=int, default=60)
    m.add_argument("--out", required=True)
    m.set_defaults(fn=_cmd_mvs)

    f = sub.add_parser("fit-toy", help="distill an analytic shape into an MLP")
    f.add_argument("--shape", choices=sorted(_BUILTINS), default="sphere")
    f.add_argument("--epochs", type=int, default=40)
    f.add_argument("--out", required=True)
    f.set_defaults(fn=_cmd_fit_toy)

    k = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    k.set_defaults(fn=_cmd_gradcheck)

    b = sub.add_parser("bench", help="acceleration ladder query counts")
    b.add_argument("--scene", default=None, help="field JSON (default: built-in)")
    b.add_argument("--camera", default=None)
    b.add_argument("--out", default=None)
    b.set_defaults(fn=_cmd_bench)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads > 1:
        flds.set_eval_threads(args.threads)
    try:
        return args.fn(args)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OptimizationError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Distillation of analytic SDFs into the neural fields the tracer consumes.

Single shapes are plain regressions. Shape families train one decoder
jointly with one latent code per target, so the codes live in the same
space the completion and multi-view drivers later search.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dfield

import numpy as np
import numpy.typing as npt

from . import autodiff as ad
from .fields import AttributeField, NeuralField
from .optimize import AdamState, adam_step

_F = npt.NDArray[np.float64]


def _field_grad(field, points: _F, code=None) -> _F:
    if hasattr(field, "spatial_gradient"):
        return field.spatial_gradient(points)
    # central differences for fields that only expose evaluate
    g = np.empty_like(points)
    h = 1e-4
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        g[:, a] = (field.evaluate(points + e, code) -
                   field.evaluate(points - e, code)) / (2.0 * h)
    return g


def sample_sdf_points(field, n: int, rng, code=None, near_fraction: float = 0.5,
                      noise: float = 0.05, radius: float = 1.2) -> tuple[_F, _F]:
    """Training points: uniform ball fill plus a noisy near-surface band.

    Near-surface points come from Newton-projecting uniform candidates onto
    the zero set and jittering along the sample normal distribution.
    """
    def uniform(m):
        d = rng.standard_normal((m, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * radius * rng.random((m, 1)) ** (1.0 / 3.0)

    n_near = int(round(n * near_fraction))
    pts = uniform(n - n_near)
    near = uniform(n_near)
    for _ in range(3):
        f = field.evaluate(near, code)
        g = _field_grad(field, near, code)
        gn = np.maximum(np.sum(g * g, axis=1), 1e-12)
        near -= (f / gn)[:, None] * g
    near += rng.normal(0.0, noise, near.shape)
    pts = np.concatenate([pts, near], axis=0)
    return pts, field.evaluate(pts, code)


@dataclass
class FitReport:
    train_losses: list[float] = dfield(default_factory=list)
    val_mae: float = np.inf
    converged: bool = False
    elapsed: float = 0.0


def _step_leaves(states: dict[str, AdamState], lr: float, params: dict[str, _F],
                 grads: dict[str, _F]) -> None:
    for name, p in params.items():
        if name not in states:
            states[name] = AdamState(lr=lr)
        params[name] = adam_step(states[name], p, grads[name])


def _weights_as_dict(weights) -> dict[str, _F]:
    out = {}
    for i, (W, b) in enumerate(weights):
        out[f"W{i}"] = W
        out[f"b{i}"] = b
    return out


def _dict_as_weights(d: dict[str, _F], n_layers: int):
    return [(d[f"W{i}"], d[f"b{i}"]) for i in range(n_layers)]


def fit_to_analytic(target, net: NeuralField | None = None, hidden=(64, 64, 64, 64),
                    n_samples: int = 50_000, epochs: int = 40, batch: int = 512,
                    lr: float = 1e-3, val_fraction: float = 0.05, tol: float = 0.05,
                    seed: int = 0) -> tuple[NeuralField, FitReport]:
    """L1-fit a fresh MLP to an analytic field.

    converged only reports whether the validation MAE beat tol; a miss is a
    quality flag for the caller, not an error.
    """
    rng = np.random.default_rng(seed)
    net = net or NeuralField.init(latent_dim=0, hidden=hidden, rng=rng)
    pts, vals = sample_sdf_points(target, n_samples, rng)
    n_val = max(1, int(n_samples * val_fraction))
    val_pts, val_vals = pts[:n_val], vals[:n_val]
    pts, vals = pts[n_val:], vals[n_val:]
    report = FitReport()
    states: dict[str, AdamState] = {}
    t0 = time.perf_counter()
    n_layers = len(net.weights)
    for _ in range(epochs):
        perm = rng.permutation(pts.shape[0])
        losses = []
        for lo in range(0, perm.size, batch):
            b = perm[lo:lo + batch]
            pred, tape, out = net.evaluate_taped(pts[b], want_weights=True)
            r = pred - vals[b]
            losses.append(float(np.mean(np.abs(r))))
            seed_vec = (np.sign(r) / b.size)[:, None]
            grads = ad.backward(tape, out, seed_vec)
            params = _weights_as_dict(net.weights)
            _step_leaves(states, lr, params, grads)
            net.weights = _dict_as_weights(params, n_layers)
        report.train_losses.append(float(np.mean(losses)))
    report.val_mae = float(np.mean(np.abs(net.evaluate(val_pts) - val_vals)))
    report.converged = report.val_mae <= tol
    report.elapsed = time.perf_counter() - t0
    return net, report


@dataclass
class FamilyFitReport:
    train_losses: list[float] = dfield(default_factory=list)
    val_mae: list[float] = dfield(default_factory=list)
    converged: bool = False
    elapsed: float = 0.0


def fit_family(targets, latent_dim: int, net: NeuralField | None = None,
               hidden=(48, 48, 48), n_samples_per: int = 20_000, epochs: int = 40,
               batch: int = 1024, lr: float = 1e-3, code_lr: float = 1e-3,
               val_fraction: float = 0.05, tol: float = 0.05, seed: int = 0,
               ) -> tuple[NeuralField, _F, FamilyFitReport]:
    """Auto-decode a list of analytic shapes into one conditioned field.

    Codes start near zero so unseen shapes can later be completed from the
    mean. The taped forward mirrors NeuralField.evaluate_taped exactly
    (code columns first), so the trained weights drop into the tracer
    unchanged.
    """
    rng = np.random.default_rng(seed)
    net = net or NeuralField.init(latent_dim=latent_dim, hidden=hidden, rng=rng)
    if net.latent_dim != latent_dim:
        raise ValueError("net latent width does not match requested latent_dim")
    codes = rng.normal(0.0, 0.01, (len(targets), latent_dim))
    all_pts, all_vals, all_idx = [], [], []
    val_sets = []
    n_val = max(1, int(n_samples_per * val_fraction))
    for t, target in enumerate(targets):
        pts, vals = sample_sdf_points(target, n_samples_per, rng)
        val_sets.append((pts[:n_val], vals[:n_val]))
        all_pts.append(pts[n_val:])
        all_vals.append(vals[n_val:])
        all_idx.append(np.full(pts.shape[0] - n_val, t, dtype=np.int64))
    pts = np.concatenate(all_pts, axis=0)
    vals = np.concatenate(all_vals)
    idx = np.concatenate(all_idx)
    report = FamilyFitReport()
    states: dict[str, AdamState] = {}
    n_layers = len(net.weights)
    hidden_op = ad.relu if net.hidden_activation == "relu" else ad.tanh
    t0 = time.perf_counter()
    for _ in range(epochs):
        perm = rng.permutation(pts.shape[0])
        losses = []
        for lo in range(0, perm.size, batch):
            b = perm[lo:lo + batch]
            tape = ad.Tape()
            p_leaf = tape.leaf("points", pts[b])
            c_leaf = tape.leaf("codes", codes)
            h = ad.concat_cols(tape, ad.gather_rows(tape, c_leaf, idx[b]), p_leaf)
            wt = [(tape.leaf(f"W{i}", W), tape.leaf(f"b{i}", bb))
                  for i, (W, bb) in enumerate(net.weights)]
            for W, bb in wt[:-1]:
                h = hidden_op(tape, ad.affine(tape, h, W, bb))
            h = ad.affine(tape, h, *wt[-1])
            if net.final_activation == "tanh":
                h = ad.tanh(tape, h)
            r = h.value[:, 0] - vals[b]
            losses.append(float(np.mean(np.abs(r))))
            grads = ad.backward(tape, h, (np.sign(r) / b.size)[:, None])
            params = _weights_as_dict(net.weights)
            _step_leaves(states, lr, params, grads)
            net.weights = _dict_as_weights(params, n_layers)
            if "codes" not in states:
                states["codes"] = AdamState(lr=code_lr)
            codes = adam_step(states["codes"], codes, grads["codes"])
        report.train_losses.append(float(np.mean(losses)))
    for t, (vp, vv) in enumerate(val_sets):
        report.val_mae.append(float(np.mean(np.abs(net.evaluate(vp, codes[t]) - vv))))
    report.converged = all(m <= tol for m in report.val_mae)
    report.elapsed = time.perf_counter() - t0
    return net, codes, report


def fit_attribute(field, color_fn, code=None, attr_net: AttributeField | None = None,
                  hidden=(32, 32, 32), n_samples: int = 20_000, epochs: int = 30,
                  batch: int = 512, lr: float = 1e-3, seed: int = 0,
                  ) -> tuple[AttributeField, FitReport]:
    """Fit a sigmoid-head MLP to color_fn on the near-surface band of field.

    color_fn maps [n,3] points to [n,m] values in [0,1]. The attribute net
    sees raw points only; conditioning codes belong to the shape net.
    """
    rng = np.random.default_rng(seed)
    pts, _ = sample_sdf_points(field, n_samples, rng, code=code,
                               near_fraction=1.0, noise=0.01)
    colors = np.asarray(color_fn(pts), dtype=np.float64)
    if colors.ndim != 2 or colors.shape[0] != pts.shape[0]:
        raise ValueError("color_fn must return one row per point")
    attr_net = attr_net or AttributeField.init(
        hidden=hidden, out_dim=colors.shape[1], rng=rng)
    n_val = max(1, n_samples // 20)
    val_pts, val_colors = pts[:n_val], colors[:n_val]
    pts, colors = pts[n_val:], colors[n_val:]
    report = FitReport()
    states: dict[str, AdamState] = {}
    n_layers = len(attr_net.weights)
    t0 = time.perf_counter()
    for _ in range(epochs):
        perm = rng.permutation(pts.shape[0])
        losses = []
        for lo in range(0, perm.size, batch):
            b = perm[lo:lo + batch]
            tape = ad.Tape()
            h = tape.leaf("points", pts[b])
            wt = [(tape.leaf(f"W{i}", W), tape.leaf(f"b{i}", bb))
                  for i, (W, bb) in enumerate(attr_net.weights)]
            for W, bb in wt[:-1]:
                h = ad.relu(tape, ad.affine(tape, h, W, bb))
            h = ad.sigmoid(tape, ad.affine(tape, h, *wt[-1]))
            r = h.value - colors[b]
            losses.append(float(np.mean(r * r)))
            grads = ad.backward(tape, h, 2.0 * r / r.size)
            params = _weights_as_dict(attr_net.weights)
            _step_leaves(states, lr, params, grads)
            attr_net.weights = _dict_as_weights(params, n_layers)
        report.train_losses.append(float(np.mean(losses)))
    report.val_mae = float(np.mean(np.abs(attr_net.evaluate(val_pts) - val_colors)))
    report.converged = report.val_mae <= 0.1
    report.elapsed = time.perf_counter() - t0
    return attr_net, report

"""Signed-distance fields: analytic primitives and latent-conditioned MLPs.

All fields answer point queries through evaluate(points, code); analytic
variants ignore the code. Scenes are assumed to live inside the unit sphere,
which is what the tracer's initialization relies on. evaluate_taped mirrors
evaluate exactly (bit-identical values) while recording onto an autodiff
tape with leaves for the latent code, the network weights, and the query
points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from . import autodiff as ad

_F = npt.NDArray[np.float64]

FIELD_FORMAT = "sdftrace-field/1"

# Rows per chunk when evaluate() splits work across a thread pool; row-wise
# independence keeps the result identical for any partition.
_threads = 1


def set_eval_threads(n: int) -> None:
    global _threads
    _threads = max(1, int(n))


def _pts(points) -> _F:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"points must be [n,3], got {p.shape}")
    return p


# === analytic primitives =================================================


class SphereField:
    """Exact SDF of a sphere: |p - c| - r."""

    def __init__(self, center=(0.0, 0.0, 0.0), radius: float = 0.5):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    latent_dim = 0

    def evaluate(self, points, code=None) -> _F:
        q = _pts(points) - self.center
        return np.linalg.norm(q, axis=1) - self.radius

    def spatial_gradient(self, points) -> _F:
        q = _pts(points) - self.center
        n = np.linalg.norm(q, axis=1, keepdims=True)
        return np.divide(q, n, out=np.zeros_like(q), where=n > 0)


class PlaneField:
    """Exact SDF of a half-space boundary: n . p - offset, n unit."""

    def __init__(self, normal=(0.0, 0.0, 1.0), offset: float = 0.0):
        n = np.asarray(normal, dtype=np.float64)
        nn = np.linalg.norm(n)
        if nn == 0:
            raise ValueError("zero plane normal")
        self.normal = n / nn
        self.offset = float(offset)

    latent_dim = 0

    def evaluate(self, points, code=None) -> _F:
        return _pts(points) @ self.normal - self.offset

    def spatial_gradient(self, points) -> _F:
        p = _pts(points)
        return np.broadcast_to(self.normal, p.shape).copy()


class BoxField:
    """Axis-aligned box SDF (exact, lower bound at edges after transforms)."""

    def __init__(self, center=(0.0, 0.0, 0.0), half_extents=(0.3, 0.3, 0.3)):
        self.center = np.asarray(center, dtype=np.float64)
        self.half_extents = np.asarray(half_extents, dtype=np.float64)
        if np.any(self.half_extents <= 0):
            raise ValueError("half extents must be positive")

    latent_dim = 0

    def evaluate(self, points, code=None) -> _F:
        q = np.abs(_pts(points) - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def spatial_gradient(self, points) -> _F:
        p = _pts(points)
        rel = p - self.center
        q = np.abs(rel) - self.half_extents
        sign = np.where(rel >= 0, 1.0, -1.0)
        qp = np.maximum(q, 0.0)
        norm = np.linalg.norm(qp, axis=1, keepdims=True)
        grad = np.where(norm > 0, sign * qp / np.where(norm > 0, norm, 1.0), 0.0)
        inside = (norm[:, 0] == 0)
        if np.any(inside):
            ax = q[inside].argmax(axis=1)
            g_in = np.zeros((inside.sum(), 3))
            g_in[np.arange(len(ax)), ax] = sign[inside, ax]
            grad[inside] = g_in
        return grad


class UnionField:
    """Pointwise min over children (exact min rule)."""

    def __init__(self, children):
        if len(children) == 0:
            raise ValueError("union needs at least one child")
        self.children = list(children)

    latent_dim = 0

    def evaluate(self, points, code=None) -> _F:
        vals = np.stack([c.evaluate(points) for c in self.children], axis=0)
        return vals.min(axis=0)

    def spatial_gradient(self, points) -> _F:
        p = _pts(points)
        vals = np.stack([c.evaluate(p) for c in self.children], axis=0)
        best = vals.argmin(axis=0)
        grads = np.stack([c.spatial_gradient(p) for c in self.children], axis=0)
        return grads[best, np.arange(p.shape[0])]


class TranslateField:
    def __init__(self, child, offset):
        self.child = child
        self.offset = np.asarray(offset, dtype=np.float64)

    latent_dim = 0

    def evaluate(self, points, code=None) -> _F:
        return self.child.evaluate(_pts(points) - self.offset)

    def spatial_gradient(self, points) -> _F:
        return self.child.spatial_gradient(_pts(points) - self.offset)


class ScaleField:
    """Uniform scale; f(p) = s * child(p / s) keeps the Lipschitz bound."""

    def __init__(self, child, factor: float):
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        self.child = child
        self.factor = float(factor)

    latent_dim = 0

    def evaluate(self, points, code=None) -> _F:
        return self.factor * self.child.evaluate(_pts(points) / self.factor)

    def spatial_gradient(self, points) -> _F:
        return self.child.spatial_gradient(_pts(points) / self.factor)


ANALYTIC_KINDS = (SphereField, PlaneField, BoxField, UnionField,
                  TranslateField, ScaleField)


# === neural fields =======================================================


class NeuralField:
    """MLP SDF on concat(code, p): dense/relu hidden stack, tanh head.

    weights is a list of (W, b) pairs; the final pair maps to a single
    output. final_activation may be "linear" for plain affine heads (used by
    degenerate test nets); the default bounded head is tanh.
    """

    def __init__(self, weights, latent_dim: int = 0, hidden_activation: str = "relu",
                 final_activation: str = "tanh"):
        self.weights = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64))
                        for W, b in weights]
        self.latent_dim = int(latent_dim)
        if hidden_activation not in ("relu", "tanh"):
            raise ValueError(f"unknown hidden activation {hidden_activation!r}")
        if final_activation not in ("tanh", "linear"):
            raise ValueError(f"unknown final activation {final_activation!r}")
        self.hidden_activation = hidden_activation
        self.final_activation = final_activation
        if self.weights[0][0].shape[0] != self.latent_dim + 3:
            raise ValueError("first layer width must be latent_dim + 3")
        if self.weights[-1][0].shape[1] != 1:
            raise ValueError("final layer must map to one output")

    @classmethod
    def init(cls, latent_dim: int = 0, hidden=(64, 64, 64, 64), rng=None, **kw):
        rng = np.random.default_rng(rng)
        dims = [latent_dim + 3, *hidden, 1]
        weights = []
        for i, (p, q) in enumerate(zip(dims[:-1], dims[1:])):
            scale = np.sqrt(2.0 / p)
            if i == len(dims) - 2:
                scale *= 0.1    # start near zero output, inside tanh's linear range
            weights.append((rng.standard_normal((p, q)) * scale, np.zeros(q)))
        return cls(weights, latent_dim=latent_dim, **kw)

    def _input(self, points: _F, code) -> _F:
        if self.latent_dim == 0:
            return points
        if code is None:
            raise ValueError("field expects a latent code")
        code = np.asarray(code, dtype=np.float64)
        if code.shape != (self.latent_dim,):
            raise ValueError(f"code shape {code.shape} != ({self.latent_dim},)")
        return np.concatenate(
            [np.broadcast_to(code, (points.shape[0], self.latent_dim)), points], axis=1
        )

    def evaluate(self, points, code=None) -> _F:
        p = _pts(points)
        if _threads > 1 and p.shape[0] > 4096:
            return self._evaluate_chunked(p, code)
        return self._forward(self._input(p, code))

    def _forward(self, h: _F) -> _F:
        for W, b in self.weights[:-1]:
            h = h @ W + b
            h = np.maximum(h, 0.0) if self.hidden_activation == "relu" else np.tanh(h)
        W, b = self.weights[-1]
        h = h @ W + b
        if self.final_activation == "tanh":
            h = np.tanh(h)
        return h[:, 0]

    def _evaluate_chunked(self, p: _F, code) -> _F:
        from concurrent.futures import ThreadPoolExecutor
        chunks = np.array_split(np.arange(p.shape[0]), _threads)
        out = np.empty(p.shape[0])
        with ThreadPoolExecutor(max_workers=_threads) as ex:
            futs = [(c, ex.submit(self._forward, self._input(p[c], code)))
                    for c in chunks if c.size]
            for c, f in futs:
                out[c] = f.result()
        return out

    def evaluate_taped(self, points, code=None, want_weights: bool = False):
        """Same forward pass recorded on a fresh tape.

        Leaves: "points" always; "code" when the field is latent-conditioned;
        "W{i}"/"b{i}" when want_weights. Returns (values, tape, output).
        """
        p = _pts(points)
        tape = ad.Tape()
        pt = tape.leaf("points", p)
        if self.latent_dim > 0:
            if code is None:
                raise ValueError("field expects a latent code")
            code = np.asarray(code, dtype=np.float64)
            if code.shape != (self.latent_dim,):
                raise ValueError(f"code shape {code.shape} != ({self.latent_dim},)")
            ct = tape.leaf("code", code)
            h = ad.concat_cols(tape, ad.broadcast_rows(tape, ct, p.shape[0]), pt)
        else:
            h = pt
        wt = []
        for i, (W, b) in enumerate(self.weights):
            if want_weights:
                wt.append((tape.leaf(f"W{i}", W), tape.leaf(f"b{i}", b)))
            else:
                wt.append((tape.constant(W), tape.constant(b)))
        hidden = ad.relu if self.hidden_activation == "relu" else ad.tanh
        for W, b in wt[:-1]:
            h = hidden(tape, ad.affine(tape, h, W, b))
        h = ad.affine(tape, h, *wt[-1])
        if self.final_activation == "tanh":
            h = ad.tanh(tape, h)
        return h.value[:, 0], tape, h


class AttributeField:
    """MLP from concat(shape code, attribute code, p) to an m-vector in [0,1].

    Same dense stack as NeuralField but with a sigmoid head and an arbitrary
    output width (RGB by default).
    """

    def __init__(self, weights, shape_dim: int = 0, attr_dim: int = 0,
                 hidden_activation: str = "relu"):
        self.weights = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64))
                        for W, b in weights]
        self.shape_dim = int(shape_dim)
        self.attr_dim = int(attr_dim)
        self.hidden_activation = hidden_activation
        if self.weights[0][0].shape[0] != self.shape_dim + self.attr_dim + 3:
            raise ValueError("first layer width must be shape_dim + attr_dim + 3")
        self.out_dim = self.weights[-1][0].shape[1]

    @classmethod
    def init(cls, shape_dim: int = 0, attr_dim: int = 0, hidden=(32, 32, 32),
             out_dim: int = 3, rng=None):
        rng = np.random.default_rng(rng)
        dims = [shape_dim + attr_dim + 3, *hidden, out_dim]
        weights = [(rng.standard_normal((p, q)) * np.sqrt(2.0 / p), np.zeros(q))
                   for p, q in zip(dims[:-1], dims[1:])]
        return cls(weights, shape_dim=shape_dim, attr_dim=attr_dim)

    def _input(self, points: _F, code) -> _F:
        d = self.shape_dim + self.attr_dim
        if d == 0:
            return points
        code = np.asarray(code, dtype=np.float64)
        if code.shape != (d,):
            raise ValueError(f"attribute code shape {code.shape} != ({d},)")
        return np.concatenate(
            [np.broadcast_to(code, (points.shape[0], d)), points], axis=1
        )

    def evaluate(self, points, code=None) -> _F:
        h = self._input(_pts(points), code)
        for W, b in self.weights[:-1]:
            h = h @ W + b
            h = np.maximum(h, 0.0) if self.hidden_activation == "relu" else np.tanh(h)
        W, b = self.weights[-1]
        return 1.0 / (1.0 + np.exp(-(h @ W + b)))


# === uniform entry points ================================================


class TapedEval(NamedTuple):
    values: _F
    tape: ad.Tape
    output: ad.Tensor


def eval_field(field, points, code=None) -> _F:
    """Query any field; analytic variants ignore the code."""
    return field.evaluate(points, code)


def eval_field_taped(field, points, code=None, want_weights: bool = False) -> TapedEval:
    """Query a field with the evaluation recorded for backward().

    Analytic fields get a single custom node whose point gradient is the
    exact spatial gradient of the primitive.
    """
    if isinstance(field, NeuralField):
        return TapedEval(*field.evaluate_taped(points, code, want_weights=want_weights))
    p = _pts(points)
    tape = ad.Tape()
    pt = tape.leaf("points", p)
    vals = field.evaluate(p)
    grad = field.spatial_gradient(p)

    def vjp(g):
        return (g[:, None] * grad,)

    out = tape.custom(vals, (pt,), vjp)
    return TapedEval(vals, tape, out)


# === serialization =======================================================


def field_to_dict(field, codes=None) -> dict:
    if isinstance(field, SphereField):
        d = {"kind": "sphere", "center": field.center.tolist(), "radius": field.radius}
    elif isinstance(field, PlaneField):
        d = {"kind": "plane", "normal": field.normal.tolist(), "offset": field.offset}
    elif isinstance(field, BoxField):
        d = {"kind": "box", "center": field.center.tolist(),
             "half_extents": field.half_extents.tolist()}
    elif isinstance(field, UnionField):
        d = {"kind": "union", "children": [field_to_dict(c) for c in field.children]}
    elif isinstance(field, TranslateField):
        d = {"kind": "translate", "offset": field.offset.tolist(),
             "child": field_to_dict(field.child)}
    elif isinstance(field, ScaleField):
        d = {"kind": "scale", "factor": field.factor, "child": field_to_dict(field.child)}
    elif isinstance(field, NeuralField):
        d = {"kind": "neural", "latent_dim": field.latent_dim,
             "hidden_activation": field.hidden_activation,
             "final_activation": field.final_activation,
             "weights": [[W.tolist(), b.tolist()] for W, b in field.weights]}
    elif isinstance(field, AttributeField):
        d = {"kind": "attribute", "shape_dim": field.shape_dim,
             "attr_dim": field.attr_dim,
             "hidden_activation": field.hidden_activation,
             "weights": [[W.tolist(), b.tolist()] for W, b in field.weights]}
    else:
        raise TypeError(f"cannot serialize field of type {type(field).__name__}")
    if codes is not None:
        d["codes"] = np.asarray(codes, dtype=np.float64).tolist()
    return d


def _build_field(d: dict):
    kind = d.get("kind")
    if kind == "sphere":
        return SphereField(d["center"], d["radius"])
    if kind == "plane":
        return PlaneField(d["normal"], d["offset"])
    if kind == "box":
        return BoxField(d["center"], d["half_extents"])
    if kind == "union":
        return UnionField([_build_field(c) for c in d["children"]])
    if kind == "translate":
        return TranslateField(_build_field(d["child"]), d["offset"])
    if kind == "scale":
        return ScaleField(_build_field(d["child"]), d["factor"])
    if kind == "neural":
        return NeuralField(d["weights"], latent_dim=d["latent_dim"],
                           hidden_activation=d["hidden_activation"],
                           final_activation=d["final_activation"])
    if kind == "attribute":
        return AttributeField(d["weights"], shape_dim=d["shape_dim"],
                              attr_dim=d["attr_dim"],
                              hidden_activation=d["hidden_activation"])
    raise ValueError(f"unknown field kind {kind!r}")


def field_from_dict(d: dict):
    f = _build_field(d)
    codes = d.get("codes")
    if codes is not None:
        return f, np.asarray(codes, dtype=np.float64)
    return f, None


def save_field(field, path, codes=None) -> None:
    """Write a field (optionally with a code table) as versioned JSON.

    Floats serialize via repr, so a load-save-load cycle is bit-exact.
    """
    doc = {"format": FIELD_FORMAT, **field_to_dict(field, codes=codes)}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_field(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FIELD_FORMAT:
        raise ValueError(f"not a field file: format={doc.get('format')!r}")
    return field_from_dict(doc)

"""Minimal reverse-mode differentiation on a flat tape.

Everything here is float64 numpy. A Tape records the forward ops needed by
the rest of the library (dense layers, pointwise activations, a couple of
shape utilities) and backward() replays them in reverse, accumulating
vector-Jacobian products into named leaves. Tapes are rebuilt per batched
evaluation; backward never mutates the tape, so it can be called repeatedly
with different seeds.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import numpy.typing as npt

_F = npt.NDArray[np.float64]


def _as64(x) -> _F:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """Value plus its node id on the tape that produced it."""

    __slots__ = ("value", "node", "tape")

    def __init__(self, value: _F, node: int, tape: "Tape"):
        self.value = value
        self.node = node
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


class _Node:
    __slots__ = ("parents", "vjp", "leaf_name")

    def __init__(self, parents: tuple[int, ...], vjp, leaf_name: str | None = None):
        self.parents = parents
        self.vjp = vjp          # grad_out -> tuple of grads aligned with parents
        self.leaf_name = leaf_name


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaf_values: dict[str, _F] = {}
        self.leaves: dict[str, int] = {}

    def _append(self, node: _Node, value: _F) -> Tensor:
        self._nodes.append(node)
        return Tensor(value, len(self._nodes) - 1, self)

    def leaf(self, name: str, value) -> Tensor:
        """Register a named differentiable input."""
        v = _as64(value)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"leaf {name!r} has non-finite entries")
        if name in self.leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        t = self._append(_Node((), None, leaf_name=name), v)
        self.leaves[name] = t.node
        self._leaf_values[name] = v
        return t

    def constant(self, value) -> Tensor:
        """Record a value that receives no gradient."""
        return self._append(_Node((), None), _as64(value))

    def custom(self, value, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
        """Record an externally computed op with an explicit VJP closure."""
        for p in parents:
            _check_tape(self, p)
        return self._append(
            _Node(tuple(p.node for p in parents), vjp), _as64(value)
        )


def _check_tape(tape: Tape, *ts: Tensor) -> None:
    for t in ts:
        if t.tape is not tape:
            raise ValueError("tensor does not belong to this tape")


# === ops =================================================================


def affine(tape: Tape, x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b with x [n,p], W [p,q], b [q]."""
    _check_tape(tape, x, W, b)
    xv, Wv, bv = x.value, W.value, b.value
    if xv.ndim != 2 or Wv.ndim != 2 or xv.shape[1] != Wv.shape[0]:
        raise ValueError(f"affine shape mismatch: x{xv.shape} W{Wv.shape}")
    if bv.shape != (Wv.shape[1],):
        raise ValueError(f"affine bias shape {bv.shape} != ({Wv.shape[1]},)")
    out = xv @ Wv + bv

    def vjp(g):
        return g @ Wv.T, xv.T @ g, g.sum(axis=0)

    return tape._append(_Node((x.node, W.node, b.node), vjp), out)


def relu(tape: Tape, x: Tensor) -> Tensor:
    _check_tape(tape, x)
    out = np.maximum(x.value, 0.0)
    mask = x.value > 0.0          # subgradient 0 at the kink

    def vjp(g):
        return (g * mask,)

    return tape._append(_Node((x.node,), vjp), out)


def tanh(tape: Tape, x: Tensor) -> Tensor:
    _check_tape(tape, x)
    out = np.tanh(x.value)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return tape._append(_Node((x.node,), vjp), out)


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    _check_tape(tape, x)
    out = 1.0 / (1.0 + np.exp(-x.value))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return tape._append(_Node((x.node,), vjp), out)


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _check_tape(tape, a, b)
    if a.value.shape != b.value.shape:
        raise ValueError("add expects equal shapes")

    def vjp(g):
        return g, g

    return tape._append(_Node((a.node, b.node), vjp), a.value + b.value)


def mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _check_tape(tape, a, b)
    if a.value.shape != b.value.shape:
        raise ValueError("mul expects equal shapes")
    av, bv = a.value, b.value

    def vjp(g):
        return g * bv, g * av

    return tape._append(_Node((a.node, b.node), vjp), av * bv)


def sum_all(tape: Tape, x: Tensor) -> Tensor:
    _check_tape(tape, x)
    shape = x.value.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).copy(),)

    return tape._append(_Node((x.node,), vjp), np.asarray(x.value.sum()))


def broadcast_rows(tape: Tape, x: Tensor, n: int) -> Tensor:
    """Tile a vector [p] into [n,p]; gradient sums over rows."""
    _check_tape(tape, x)
    if x.value.ndim != 1:
        raise ValueError("broadcast_rows expects a vector")
    out = np.broadcast_to(x.value, (n, x.value.shape[0])).copy()

    def vjp(g):
        return (g.sum(axis=0),)

    return tape._append(_Node((x.node,), vjp), out)


def concat_cols(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Column-wise [n,p],[n,q] -> [n,p+q]."""
    _check_tape(tape, a, b)
    if a.value.shape[0] != b.value.shape[0]:
        raise ValueError("concat_cols row mismatch")
    p = a.value.shape[1]

    def vjp(g):
        return g[:, :p], g[:, p:]

    return tape._append(
        _Node((a.node, b.node), vjp), np.concatenate([a.value, b.value], axis=1)
    )


def gather_rows(tape: Tape, x: Tensor, idx: npt.NDArray[np.integer]) -> Tensor:
    """Select rows x[idx]; gradient scatter-adds back."""
    _check_tape(tape, x)
    idx = np.asarray(idx)
    shape = x.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return tape._append(_Node((x.node,), vjp), x.value[idx])


# === backward ============================================================


def backward(tape: Tape, output: Tensor, seed) -> dict[str, _F]:
    """Gradient of seed . output w.r.t. every leaf on the tape.

    seed has the shape of output.value. Leaves the output does not depend on
    get zero gradients. The tape is unchanged, so repeated calls are valid
    and bit-identical for identical inputs.
    """
    if output.tape is not tape:
        raise ValueError("output node is not on this tape")
    seed = _as64(seed)
    if seed.shape != output.value.shape:
        raise ValueError(f"seed shape {seed.shape} != output {output.value.shape}")

    grads: dict[int, _F] = {output.node: seed}
    out: dict[str, _F] = {}
    for nid in range(output.node, -1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = tape._nodes[nid]
        if node.leaf_name is not None:
            out[node.leaf_name] = g
            continue
        if node.vjp is None:
            continue
        for pid, pg in zip(node.parents, node.vjp(g)):
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    for name, value in tape._leaf_values.items():
        if name not in out:
            out[name] = np.zeros_like(value)
        elif not np.all(np.isfinite(out[name])):
            raise FloatingPointError(f"non-finite gradient for leaf {name!r}")
    return out


# === finite differences ==================================================


def finite_diff(fn: Callable[[_F], float], x, h: float = 1e-5) -> _F:
    """Central-difference gradient of a scalar function of an array."""
    x = _as64(x).copy()
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(x))
        flat[i] = orig - h
        fm = float(fn(x))
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g

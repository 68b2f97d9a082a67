"""Small reverse-mode differentiation tape over dense numpy arrays.

Only the primitives the outage model needs are provided. Shapes must match
exactly (scalars excepted); there is no broadcasting between tape values.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

LEAKY_SLOPE = 0.2
FD_EPSILON = 1e-4
GRAD_TOL = 1e-5


class ShapeError(ValueError):
    pass


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index", "parents", "backward_fn", "name")

    def __init__(self, value, tape, parents=(), backward_fn=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.shape}, name={self.name})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)


class Tape:
    """Append-only record of primitive applications, in topological order."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: dict[str, Var] = {}

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already on tape")
        v = Var(np.array(value, dtype=float), self, name=name)
        self.params[name] = v
        return v

    def const(self, value) -> Var:
        return Var(np.asarray(value, dtype=float), self)


def _record(tape: Tape, value, parents, backward_fn) -> Var:
    return Var(value, tape, tuple(parents), backward_fn)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one argument must be a tape value")


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("values belong to different tapes")
        return x
    return tape.const(x)


def _same_shape(a: Var, b: Var, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _scalar_operand(x) -> bool:
    return not isinstance(x, Var) and np.ndim(x) == 0


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Var:
    tape = _tape_of(a, b)
    if _scalar_operand(b):
        a = _lift(tape, a)
        return _record(tape, a.value + b, (a,), lambda g: (g,))
    if _scalar_operand(a):
        return add(b, a)
    a, b = _lift(tape, a), _lift(tape, b)
    _same_shape(a, b, "add")
    return _record(tape, a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    if _scalar_operand(b):
        a = _lift(tape, a)
        return _record(tape, a.value - b, (a,), lambda g: (g,))
    if _scalar_operand(a):
        b = _lift(tape, b)
        return _record(tape, a - b.value, (b,), lambda g: (-g,))
    a, b = _lift(tape, a), _lift(tape, b)
    _same_shape(a, b, "sub")
    return _record(tape, a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    if _scalar_operand(b):
        a = _lift(tape, a)
        return _record(tape, a.value * b, (a,), lambda g: (g * b,))
    if _scalar_operand(a):
        return mul(b, a)
    a, b = _lift(tape, a), _lift(tape, b)
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _record(tape, av * bv, (a, b), lambda g: (g * bv, g * av))


def activation(kind: str, x: Var) -> Var:
    """Elementwise ``sigmoid``, ``tanh`` or ``leaky_relu`` (slope 0.2)."""
    xv = x.value
    if not np.all(np.isfinite(xv)):
        raise FloatingPointError(f"{kind}: non-finite input")
    if kind == "sigmoid":
        y = 1.0 / (1.0 + np.exp(-xv))
        d = y * (1.0 - y)
    elif kind == "tanh":
        y = np.tanh(xv)
        d = 1.0 - y * y
    elif kind == "leaky_relu":
        d = np.where(xv > 0, 1.0, LEAKY_SLOPE)
        y = xv * d
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return _record(x.tape, y, (x,), lambda g: (g * d,))


def sigmoid(x: Var) -> Var:
    return activation("sigmoid", x)


def tanh(x: Var) -> Var:
    return activation("tanh", x)


def leaky_relu(x: Var) -> Var:
    return activation("leaky_relu", x)


# ---------------------------------------------------------------- linear algebra

def affine(W: Var, x: Var, b: Var | None = None) -> Var:
    """``W @ x + b`` for an n-vector ``x``; row-wise ``x @ W.T + b`` for an N x n batch."""
    tape = _tape_of(W, x, b)
    W, x = _lift(tape, W), _lift(tape, x)
    Wv, xv = W.value, x.value
    if Wv.ndim != 2 or xv.ndim not in (1, 2) or xv.shape[-1] != Wv.shape[1]:
        raise ShapeError(f"affine: W {Wv.shape} incompatible with x {xv.shape}")
    if b is not None:
        b = _lift(tape, b)
        if b.shape != (Wv.shape[0],):
            raise ShapeError(f"affine: bias {b.shape} expected ({Wv.shape[0]},)")
    if xv.ndim == 1:
        y = Wv @ xv

        def back(g):
            return (np.outer(g, xv), Wv.T @ g) + ((g,) if b is not None else ())
    else:
        y = xv @ Wv.T

        def back(g):
            return (g.T @ xv, g @ Wv) + ((g.sum(axis=0),) if b is not None else ())
    if b is not None:
        y = y + b.value
        parents = (W, x, b)
    else:
        parents = (W, x)
    return _record(tape, y, parents, back)


def rowdot(X: Var, a: Var) -> Var:
    """Per-row inner product of an E x d matrix with a d-vector."""
    Xv, av = X.value, a.value
    if Xv.ndim != 2 or av.shape != (Xv.shape[1],):
        raise ShapeError(f"rowdot: X {Xv.shape} incompatible with a {av.shape}")
    return _record(X.tape, Xv @ av, (X, a), lambda g: (np.outer(g, av), Xv.T @ g))


def concat_cols(A: Var, B: Var) -> Var:
    if A.value.ndim != 2 or B.value.ndim != 2 or A.shape[0] != B.shape[0]:
        raise ShapeError(f"concat_cols: {A.shape} and {B.shape}")
    k = A.shape[1]
    return _record(A.tape, np.concatenate([A.value, B.value], axis=1), (A, B),
                   lambda g: (g[:, :k], g[:, k:]))


def gather_rows(X: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.intp)
    n = X.shape[0]

    def back(g):
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, idx, g)
        return (out,)

    return _record(X.tape, X.value[idx], (X,), back)


def row_select(mask, A: Var, B: Var) -> Var:
    """Rows of ``A`` where ``mask`` is true, rows of ``B`` elsewhere."""
    _same_shape(A, B, "row_select")
    m = np.asarray(mask, dtype=bool)
    if m.shape != (A.shape[0],):
        raise ShapeError(f"row_select: mask {m.shape} for {A.shape[0]} rows")
    col = m[:, None]
    return _record(A.tape, np.where(col, A.value, B.value), (A, B),
                   lambda g: (np.where(col, g, 0.0), np.where(col, 0.0, g)))


def total(x: Var) -> Var:
    return _record(x.tape, np.asarray(x.value.sum()), (x,),
                   lambda g: (np.full(x.shape, float(g)),))


# ---------------------------------------------------------------- graph reductions

def _group_ids(groups, size):
    """Accept either integer group ids per index or a list of index lists."""
    if len(groups) and not np.isscalar(groups[0]):
        ids = np.full(size, -1, dtype=np.intp)
        for gi, members in enumerate(groups):
            if len(members) == 0:
                raise ValueError(f"group {gi} is empty")
            ids[np.asarray(members, dtype=np.intp)] = gi
        if np.any(ids < 0):
            raise ValueError("groups do not cover every index")
        return ids, len(groups)
    ids = np.asarray(groups, dtype=np.intp)
    if ids.shape != (size,):
        raise ShapeError("one group id per score required")
    n_groups = int(ids.max()) + 1 if size else 0
    counts = np.bincount(ids, minlength=n_groups)
    if np.any(counts == 0):
        raise ValueError(f"group {int(np.flatnonzero(counts == 0)[0])} is empty")
    return ids, n_groups


def grouped_softmax(scores: Var, groups) -> Var:
    """Softmax within each group of a score vector (max-subtracted)."""
    s = scores.value
    if s.ndim != 1:
        raise ShapeError("grouped_softmax expects a vector of scores")
    ids, n_groups = _group_ids(groups, s.size)
    gmax = np.full(n_groups, -np.inf)
    np.maximum.at(gmax, ids, s)
    e = np.exp(s - gmax[ids])
    y = e / np.bincount(ids, weights=e, minlength=n_groups)[ids]

    def back(g):
        inner = np.bincount(ids, weights=y * g, minlength=n_groups)
        return (y * (g - inner[ids]),)

    return _record(scores.tape, y, (scores,), back)


def weighted_segment_sum(weights: Var, rows: Var, group_ids, n_groups: int) -> Var:
    """``out[k] = sum_{e: group(e) = k} weights[e] * rows[e]``."""
    w, R = weights.value, rows.value
    ids = np.asarray(group_ids, dtype=np.intp)
    if w.ndim != 1 or R.ndim != 2 or R.shape[0] != w.size or ids.shape != w.shape:
        raise ShapeError(f"weighted_segment_sum: weights {w.shape}, rows {R.shape}")
    out = np.zeros((n_groups, R.shape[1]))
    np.add.at(out, ids, w[:, None] * R)

    def back(g):
        ge = g[ids]
        return ((ge * R).sum(axis=1), ge * w[:, None])

    return _record(weights.tape, out, (weights, rows), back)


# ---------------------------------------------------------------- loss

def cross_entropy(logits: Var, labels, class_weights=None) -> Var:
    """Mean over rows of ``-w_y * log softmax(logits)_y`` (log-sum-exp stabilised)."""
    z = logits.value
    y = np.asarray(labels, dtype=np.intp)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ShapeError(f"cross_entropy: logits {z.shape}, labels {y.shape}")
    if np.any((y < 0) | (y >= z.shape[1])):
        raise ValueError("label out of range")
    w = np.ones(z.shape[1]) if class_weights is None else np.asarray(class_weights, dtype=float)
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    nll = logsum - shifted[rows, y]
    wy = w[y]
    n = z.shape[0]
    loss = np.asarray((wy * nll).sum() / n)

    def back(g):
        p = np.exp(shifted - logsum[:, None])
        p[rows, y] -= 1.0
        return (float(g) * p * (wy / n)[:, None],)

    return _record(logits.tape, loss, (logits,), back)


# ---------------------------------------------------------------- reverse pass

def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(parameter) for every parameter slot on ``tape``."""
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise ValueError("loss is not on this tape")
    if loss.value.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    grads: list = [None] * len(tape.nodes)
    grads[loss.index] = np.ones_like(loss.value)
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads[node.index]
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if grads[parent.index] is None:
                grads[parent.index] = pg
            else:
                grads[parent.index] = grads[parent.index] + pg
    return {
        name: (np.zeros_like(v.value) if grads[v.index] is None else np.asarray(grads[v.index], dtype=float).reshape(v.shape))
        for name, v in tape.params.items()
    }


def value_and_grad(f: Callable[[Tape, dict], Var], params: dict[str, np.ndarray]):
    """Run ``f`` on a fresh tape holding ``params``; return (loss, gradients)."""
    tape = Tape()
    slots = {k: tape.param(k, v) for k, v in params.items()}
    loss = f(tape, slots)
    return float(loss.value), backward(tape, loss)


def finite_diff_check(f: Callable[[dict], float], params: dict[str, np.ndarray],
                      grads: dict[str, np.ndarray], epsilon: float = FD_EPSILON) -> float:
    """Max relative error between central differences of ``f`` and ``grads``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    work = {k: np.array(v, dtype=float) for k, v in params.items()}
    worst = 0.0
    for name, arr in work.items():
        flat = arr.reshape(-1)
        gflat = np.asarray(grads[name], dtype=float).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = f(work)
            flat[i] = orig - epsilon
            lo = f(work)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError(f"non-finite objective while perturbing {name}[{i}]")
            fd = (hi - lo) / (2 * epsilon)
            err = abs(fd - gflat[i]) / (abs(fd) + abs(gflat[i]) + 1e-12)
            worst = max(worst, err)
    return worst

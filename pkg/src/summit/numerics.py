"""Dense kernels and a small reverse-mode gradient tape.

The tape only knows the operations the encoder needs (matmul, add, mul,
scale, reshape/transpose, gather, masked softmax, GELU, layer norm, mean,
logistic, focal loss, concat). Every backward rule is written by hand and
is checked against central differences by :func:`grad_check`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy.special import erf

MASK_VALUE = -1e9
LN_EPS = 1e-5
PROB_CLAMP = 1e-7

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# plain kernels
# ---------------------------------------------------------------------------

def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a rank-2 array, stabilized by the row maximum."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"softmax_rows expects a rank-2 array, got shape {m.shape}")
    return softmax(m, axis=-1)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)``."""
    x = np.asarray(x)
    return x * 0.5 * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def focal_loss(p: np.ndarray, y: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Mean binary focal loss ``-alpha_t (1 - p_t)^gamma log p_t``."""
    p = np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y)
    pt = np.where(y == 1, p, 1.0 - p)
    at = np.where(y == 1, alpha, 1.0 - alpha)
    return float(np.mean(-at * (1.0 - pt) ** gamma * np.log(pt)))


def rownorm(a: np.ndarray) -> np.ndarray:
    """Divide each row by its sum; rows summing to zero stay zero."""
    s = a.sum(axis=-1, keepdims=True)
    safe = np.where(s == 0, 1.0, s)
    return np.where(s == 0, 0.0, a / safe)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class ParamSet:
    """Named trainable arrays, iterated in sorted path order."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._data: dict[str, np.ndarray] = {}
        for k, v in (arrays or {}).items():
            self[k] = v

    def __getitem__(self, path: str) -> np.ndarray:
        return self._data[path]

    def __setitem__(self, path: str, value: np.ndarray) -> None:
        self._data[path] = np.asarray(value)

    def __contains__(self, path: str) -> bool:
        return path in self._data

    def __len__(self) -> int:
        return len(self._data)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._data))

    def items(self):
        return [(k, self._data[k]) for k in self]

    def paths(self) -> list[str]:
        return list(self)

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._data.items()})

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({k: v.astype(dtype) for k, v in self._data.items()})

    def n_scalars(self) -> int:
        return int(sum(v.size for v in self._data.values()))

    def equal(self, other: "ParamSet") -> bool:
        if self.paths() != other.paths():
            return False
        return all(np.array_equal(self[k], other[k]) for k in self)


# ---------------------------------------------------------------------------
# gradient tape
# ---------------------------------------------------------------------------

class Node:
    __slots__ = ("value", "grad", "name", "_backward", "needs_grad")

    def __init__(self, value, needs_grad=False, name=None):
        self.value = value
        self.grad = None
        self.name = name
        self.needs_grad = needs_grad
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def _acc(self, g):
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g


class Tape:
    """Records one forward pass; :meth:`backward` then fills ``Node.grad``.

    A tape is single use and not thread-safe. Parameters enter through
    :meth:`param`, data through :meth:`const`.
    """

    def __init__(self, params: ParamSet | None = None, grad: bool = True):
        self.params = params
        self.grad_enabled = grad
        self._nodes: list[Node] = []
        self._leaves: dict[str, Node] = {}
        self.guarded_rows = 0

    # -- leaves -----------------------------------------------------------
    def param(self, path: str) -> Node:
        if path not in self._leaves:
            self._leaves[path] = Node(self.params[path], needs_grad=self.grad_enabled, name=path)
        return self._leaves[path]

    def const(self, value) -> Node:
        return Node(np.asarray(value))

    def _op(self, value, parents, backward) -> Node:
        needs = self.grad_enabled and any(p.needs_grad for p in parents)
        out = Node(value, needs_grad=needs)
        if needs:
            out._backward = (parents, backward)
            self._nodes.append(out)
        return out

    # -- ops --------------------------------------------------------------
    def matmul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value

        def bw(g):
            ga = gb = None
            if a.needs_grad:
                ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
            if b.needs_grad:
                if av.ndim > 2 and bv.ndim == 2:
                    gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                else:
                    gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
            return ga, gb

        return self._op(av @ bv, (a, b), bw)

    def add(self, a: Node, b: Node) -> Node:
        sa, sb = a.value.shape, b.value.shape
        return self._op(a.value + b.value, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def mul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        return self._op(av * bv, (a, b),
                        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def scale(self, a: Node, c: float) -> Node:
        return self._op(a.value * c, (a,), lambda g: (g * c,))

    def reshape(self, a: Node, shape) -> Node:
        old = a.value.shape
        return self._op(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))

    def transpose(self, a: Node, axes) -> Node:
        inv = np.argsort(axes)
        return self._op(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))

    def gather(self, table: Node, idx: np.ndarray) -> Node:
        """Rows of ``table`` at integer positions ``idx`` (any shape)."""
        tv = table.value

        def bw(g):
            out = np.zeros_like(tv)
            np.add.at(out, idx.reshape(-1), g.reshape(-1, tv.shape[-1]))
            return (out,)

        return self._op(tv[idx], (table,), bw)

    def concat(self, nodes: list[Node], axis: int = -1) -> Node:
        sizes = [n.value.shape[axis] for n in nodes]
        cuts = np.cumsum(sizes)[:-1]
        return self._op(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes),
                        lambda g: tuple(np.split(g, cuts, axis=axis)))

    def masked_softmax(self, scores: Node, key_mask: np.ndarray | None, scale: float) -> Node:
        """softmax((scores + offset) * scale) over the last axis.

        ``offset`` is MASK_VALUE on keys whose mask is 0. Query rows for
        which every key is masked produce an all-zero row (counted in
        ``guarded_rows``).
        """
        s = scores.value
        if key_mask is not None:
            offset = np.where(key_mask > 0, 0.0, MASK_VALUE).astype(s.dtype)
            z = (s + offset) * scale
        else:
            z = s * scale
        p = softmax(z, axis=-1)
        keep = None
        if key_mask is not None:
            any_key = (key_mask > 0).any(axis=-1, keepdims=True)
            if not np.all(any_key):
                keep = np.broadcast_to(any_key, p.shape[:-1] + (1,)).astype(s.dtype)
                self.guarded_rows += int(np.sum(keep == 0))
                p = p * keep

        def bw(g):
            gz = p * (g - np.sum(g * p, axis=-1, keepdims=True))
            return (gz * scale,)

        return self._op(p, (scores,), bw)

    def gelu(self, a: Node) -> Node:
        x = a.value
        cdf = 0.5 * (1.0 + erf(x / _SQRT2))

        def bw(g):
            return (g * (cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)),)

        return self._op(x * cdf, (a,), bw)

    def layer_norm(self, a: Node, gain: Node, bias: Node, eps: float = LN_EPS) -> Node:
        x = a.value
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        xhat = xc * inv
        out = xhat * gain.value + bias.value
        def bw(g):
            gx_hat = g * gain.value
            gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
            gg = _unbroadcast(g * xhat, gain.value.shape)
            gb = _unbroadcast(g, bias.value.shape)
            return gx, gg, gb

        return self._op(out, (a, gain, bias), bw)

    def mean(self, a: Node, axis: int) -> Node:
        shape = a.value.shape
        n = shape[axis]

        def bw(g):
            return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

        return self._op(a.value.mean(axis=axis), (a,), bw)

    def sigmoid(self, a: Node) -> Node:
        p = sigmoid(a.value)
        return self._op(p, (a,), lambda g: (g * p * (1.0 - p),))

    def focal_loss(self, p: Node, y: np.ndarray, alpha: float, gamma: float) -> Node:
        """Batch-mean focal loss of probabilities ``p`` (shape (B,)) against 0/1 ``y``."""
        pv = p.value
        pc = np.clip(pv, PROB_CLAMP, 1.0 - PROB_CLAMP)
        pos = y == 1
        pt = np.where(pos, pc, 1.0 - pc)
        at = np.where(pos, alpha, 1.0 - alpha)
        q = 1.0 - pt
        logp = np.log(pt)
        per = -at * q ** gamma * logp
        n = pv.shape[0]
        inside = (pv > PROB_CLAMP) & (pv < 1.0 - PROB_CLAMP)

        def bw(g):
            if gamma == 0:
                dpt = -at / pt
            else:
                dpt = -at * (-gamma * q ** (gamma - 1) * logp + q ** gamma / pt)
            dp = np.where(pos, dpt, -dpt) * inside
            return ((g / n) * dp.astype(pv.dtype),)

        return self._op(np.asarray(per.mean(), dtype=pv.dtype), (p,), bw)

    # -- reverse pass -------------------------------------------------------
    def backward(self, out: Node) -> dict[str, np.ndarray]:
        """Propagate from scalar ``out``; returns parameter gradients by path."""
        if out.value.size != 1:
            raise ShapeError("backward needs a scalar output")
        out.grad = np.ones_like(out.value)
        for node in reversed(self._nodes):
            if node.grad is None:
                continue
            parents, fn = node._backward
            grads = fn(node.grad)
            for parent, g in zip(parents, grads):
                if g is not None and parent.needs_grad:
                    parent._acc(g)
        result = {}
        for path in sorted(self._leaves):
            leaf = self._leaves[path]
            result[path] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        return result


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

@dataclass
class GradReport:
    per_param: dict[str, float]
    max_rel_error: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.max_rel_error < self.tol)

    def worst(self) -> str:
        return max(self.per_param, key=self.per_param.get) if self.per_param else ""


LossFn = Callable[[ParamSet, bool], "tuple[float, dict[str, np.ndarray] | None]"]


def grad_check(loss_fn: LossFn, params: ParamSet, eps: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-6, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> GradReport:
    """Compare analytic gradients with central differences in float64.

    ``loss_fn(params, with_grad)`` returns ``(loss, grads)``; ``grads`` may
    be None when ``with_grad`` is False. The relative error per scalar is
    ``|a - f| / max(|a|, |f|, floor)``. ``max_entries`` subsamples large
    tensors (positions drawn from ``rng``).
    """
    params = params.astype(np.float64)
    loss0, analytic = loss_fn(params, True)
    if not np.isfinite(loss0):
        raise NonFiniteError("loss is not finite at the base point")
    per_param: dict[str, float] = {}
    for path in params:
        arr = params[path]
        flat = arr.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idxs = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        ga = np.asarray(analytic[path], dtype=np.float64).reshape(-1)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_fn(params, False)
            flat[i] = orig - eps
            lm, _ = loss_fn(params, False)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteError(f"non-finite loss while perturbing {path}[{i}]")
            fd = (lp - lm) / (2.0 * eps)
            rel = abs(ga[i] - fd) / max(abs(ga[i]), abs(fd), floor)
            worst = max(worst, rel)
        per_param[path] = worst
    return GradReport(per_param, max(per_param.values(), default=0.0), tol)

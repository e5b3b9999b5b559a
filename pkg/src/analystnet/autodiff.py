"""Minimal dense-tensor computation graph with reverse-mode differentiation.

Tensors are strictly two-dimensional float64 arrays; scalars live in (1, 1)
tensors and vectors in single-column tensors. Every op records the callbacks
needed to backpropagate; ``backward`` on a scalar loss accumulates gradients
into every tensor created with ``requires_grad=True``.

Block-structured variants (``outer_sum_blocked``, ``matmul_blocked``) let a
training step stack many equally-sized node sets vertically into one tensor
and still apply per-block attention and aggregation, which keeps the tape
short when a model is fit on a batch of daily snapshots.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError

_GRAD_ENABLED = True

# Probabilities are clamped to this band inside the cross-entropy loss.
BCE_CLAMP = 1e-7


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (validation / prediction)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A (rows, cols) float64 array plus the tape hooks for backpropagation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjps", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are two-dimensional, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray] | None, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _on_tape(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


def _result(data: np.ndarray, parents: Sequence[Tensor],
            vjps: Sequence[Callable[[np.ndarray], np.ndarray] | None]) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(_on_tape(p) for p in parents):
        out._parents = tuple(parents)
        out._vjps = tuple(vjps)
    return out


# Monotone id of the current backward pass; ops with multiple parents use it
# to share work between their per-parent callbacks within one pass.
_PASS_COUNTER = [0]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into .grad of every requires_grad tensor.

    Repeated calls keep accumulating; the optimizer is responsible for
    zeroing gradients between steps.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    _PASS_COUNTER[0] += 1
    # Iterative topological sort (tapes can be long).
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _on_tape(p):
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        for parent, vjp in zip(node._parents, node._vjps):
            if vjp is None or not _on_tape(parent):
                continue
            contrib = vjp(g)
            prev = grads.get(id(parent))
            # vjps may return views or pass the upstream array through, so
            # accumulation must never mutate a stored array in place.
            grads[id(parent)] = contrib if prev is None else prev + contrib


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b),
                   (lambda g: g @ bd.T, lambda g: ad.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), (lambda g: g, lambda g: g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), (lambda g: g * bd, lambda g: g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), (lambda g: g * c,))


def transpose(a: Tensor) -> Tensor:
    return _result(a.data.T.copy(), (a,), (lambda g: g.T,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a (1, d) bias row to every row of a (n, d) tensor."""
    if b.shape != (1, x.shape[1]):
        raise ShapeError(f"add_bias shape mismatch: {x.shape} with bias {b.shape}")
    return _result(x.data + b.data, (x, b),
                   (lambda g: g, lambda g: g.sum(axis=0, keepdims=True)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return _result(np.where(mask, x.data, 0.0), (x,), (lambda g: g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0.0, 1.0, slope)
    return _result(x.data * factor, (x,), (lambda g: g * factor,))


def sigmoid(x: Tensor) -> Tensor:
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result(out, (x,), (lambda g: g * out * (1.0 - out),))


def concat_cols(*xs: Tensor) -> Tensor:
    rows = xs[0].shape[0]
    for x in xs:
        if x.shape[0] != rows:
            raise ShapeError(
                f"concat_cols row mismatch: {xs[0].shape} vs {x.shape}")

    def make_vjp(lo: int, hi: int):
        return lambda g: g[:, lo:hi]

    offs = np.concatenate([[0], np.cumsum([x.shape[1] for x in xs])])
    vjps = [make_vjp(int(offs[k]), int(offs[k + 1])) for k in range(len(xs))]
    return _result(np.concatenate([x.data for x in xs], axis=1), xs, vjps)


# Additive penalty that pushes masked-out scores far enough below any real
# score that their exponentials underflow to exactly zero.
MASK_PENALTY = -1e30


def mask_offset(mask: np.ndarray) -> np.ndarray:
    """Additive representation of a boolean mask for `masked_softmax`.

    Validates that no row is fully masked; precompute this once when the
    same mask is reused across many calls.
    """
    if not mask.any(axis=1).all():
        bad = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise NumericalError(
            f"masked_softmax row {bad} is empty; isolated node needs a self-loop")
    return np.where(mask, 0.0, MASK_PENALTY)


def masked_softmax(s: Tensor, mask: np.ndarray,
                   offset: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax over the True entries of ``mask``; zeros elsewhere.

    Uses max-subtraction for stability. A row with no unmasked entry is an
    error: an isolated node must be given a self-loop upstream.
    """
    if mask.shape != s.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match scores {s.shape}")
    shifted = s.data + (mask_offset(mask) if offset is None else offset)
    shifted -= shifted.max(axis=1, keepdims=True)
    ex = np.exp(shifted, out=shifted)
    out = ex / ex.sum(axis=1, keepdims=True)

    def vjp(g: np.ndarray) -> np.ndarray:
        inner = (g * out).sum(axis=1, keepdims=True)
        return out * (g - inner)

    return _result(out, (s,), (vjp,))


def tensor_sum(x: Tensor) -> Tensor:
    xd = x.data
    return _result(np.array([[xd.sum()]]), (x,),
                   (lambda g: np.full_like(xd, g[0, 0]),))


def bce_loss(p: Tensor, y: np.ndarray,
             class_weights: tuple[float, float] = (1.0, 1.0)) -> Tensor:
    """Class-weighted binary cross-entropy, averaged over rows.

    ``p`` holds probabilities in a single column, clamped to
    [BCE_CLAMP, 1 - BCE_CLAMP] before the logs; ``y`` holds 0/1 targets of
    the same shape. ``class_weights`` is (weight of class 0, weight of 1).
    """
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    if p.shape[1] != 1:
        raise ShapeError(f"bce_loss expects a column of probabilities, got {p.shape}")
    lo, hi = BCE_CLAMP, 1.0 - BCE_CLAMP
    pc = np.clip(p.data, lo, hi)
    w = np.where(y == 1.0, class_weights[1], class_weights[0])
    n = p.shape[0]
    ell = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p.data > lo) & (p.data < hi)

    def vjp(g: np.ndarray) -> np.ndarray:
        core = w * (pc - y) / (pc * (1.0 - pc)) / n
        return g[0, 0] * np.where(inside, core, 0.0)

    return _result(np.array([[float((w * ell).mean())]]), (p,), (vjp,))


# ---------------------------------------------------------------------------
# Block-structured ops (vertical stacks of equally-sized node sets)
# ---------------------------------------------------------------------------


def _block_shape(rows: int, n_blocks: int) -> int:
    if n_blocks < 1 or rows % n_blocks:
        raise ShapeError(f"{rows} rows do not split into {n_blocks} blocks")
    return rows // n_blocks


def outer_sum_blocked(f: Tensor, g: Tensor, n_blocks: int = 1) -> Tensor:
    """Per block b: S[i, j] = f_b[i] + g_b[j], stacked into (B*N, N)."""
    if f.shape != g.shape or f.shape[1] != 1:
        raise ShapeError(f"outer_sum_blocked needs matching columns: {f.shape} vs {g.shape}")
    n = _block_shape(f.shape[0], n_blocks)
    out = (f.data.reshape(n_blocks, n, 1) + g.data.reshape(n_blocks, 1, n))

    def vjp_f(gr: np.ndarray) -> np.ndarray:
        return gr.sum(axis=1, keepdims=True)

    def vjp_g(gr: np.ndarray) -> np.ndarray:
        return gr.reshape(n_blocks, n, n).sum(axis=1).reshape(-1, 1)

    return _result(out.reshape(n_blocks * n, n), (f, g), (vjp_f, vjp_g))


def attention_softmax(f: Tensor, g: Tensor, mask: np.ndarray,
                      offset: np.ndarray, n_blocks: int = 1,
                      slope: float = 0.2,
                      score_scale: np.ndarray | None = None) -> Tensor:
    """Fused per-block attention: masked_softmax(leaky_relu(f_i + g_j)).

    Equivalent to ``masked_softmax(leaky_relu(outer_sum_blocked(f, g)),
    mask, offset)`` with optional elementwise ``score_scale`` applied to the
    activated scores, but with fewer array passes and one tape node.
    ``offset`` must come from `mask_offset(mask)`.
    """
    if f.shape != g.shape or f.shape[1] != 1:
        raise ShapeError(f"attention_softmax needs matching column vectors: "
                         f"{f.shape} vs {g.shape}")
    n = _block_shape(f.shape[0], n_blocks)
    if mask.shape != (f.shape[0], n):
        raise ShapeError(f"mask shape {mask.shape} does not match "
                         f"{(f.shape[0], n)}")
    s = (f.data.reshape(n_blocks, n, 1)
         + g.data.reshape(n_blocks, 1, n)).reshape(n_blocks * n, n)
    pos = s > 0.0
    np.multiply(s, slope, out=s, where=~pos)
    if score_scale is not None:
        s *= score_scale
    s += offset
    s -= s.max(axis=1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=1, keepdims=True)
    alpha = s

    shared: dict = {}

    def score_grad(gr: np.ndarray) -> np.ndarray:
        if shared.get("pass") != _PASS_COUNTER[0]:
            core = alpha * (gr - (gr * alpha).sum(axis=1, keepdims=True))
            if score_scale is not None:
                core *= score_scale
            np.multiply(core, slope, out=core, where=~pos)
            shared["pass"] = _PASS_COUNTER[0]
            shared["core"] = core
        return shared["core"]

    def vjp_f(gr: np.ndarray) -> np.ndarray:
        return score_grad(gr).sum(axis=1, keepdims=True)

    def vjp_g(gr: np.ndarray) -> np.ndarray:
        return score_grad(gr).reshape(n_blocks, n, n).sum(axis=1).reshape(-1, 1)

    return _result(alpha, (f, g), (vjp_f, vjp_g))


def matmul_blocked(a: Tensor, b: Tensor, n_blocks: int = 1) -> Tensor:
    """Per block b: A_b @ B_b, where A is (B*N, N) and B is (B*N, D)."""
    n = _block_shape(a.shape[0], n_blocks)
    if a.shape[1] != n or b.shape[0] != a.shape[0]:
        raise ShapeError(f"matmul_blocked shape mismatch: {a.shape} @ {b.shape} "
                         f"in {n_blocks} blocks")
    d = b.shape[1]
    a3 = a.data.reshape(n_blocks, n, n)
    b3 = b.data.reshape(n_blocks, n, d)
    out = (a3 @ b3).reshape(n_blocks * n, d)

    def vjp_a(gr: np.ndarray) -> np.ndarray:
        g3 = gr.reshape(n_blocks, n, d)
        return (g3 @ b3.transpose(0, 2, 1)).reshape(n_blocks * n, n)

    def vjp_b(gr: np.ndarray) -> np.ndarray:
        g3 = gr.reshape(n_blocks, n, d)
        return (a3.transpose(0, 2, 1) @ g3).reshape(n_blocks * n, d)

    return _result(out, (a, b), (vjp_a, vjp_b))


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction and decoupled weight decay.

    The decay step p <- p - lr*wd*p is applied after the moment update;
    gradients are zeroed at the end of each step.
    """

    def __init__(self, params: Iterable[Tensor], lr: float,
                 weight_decay: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.grad = None


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                   h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    The relative error per element is |ga - gf| / max(|ga|, |gf|, 1e-6); the
    floor keeps finite-difference noise on near-zero gradients from
    dominating.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    with no_grad():
        for p in params:
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            flat = p.data.ravel()
            gflat = analytic.ravel()
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = loss_fn().item()
                flat[k] = orig - h
                dn = loss_fn().item()
                flat[k] = orig
                fd = (up - dn) / (2.0 * h)
                err = abs(gflat[k] - fd) / max(abs(gflat[k]), abs(fd), 1e-6)
                if err > worst:
                    worst = err
    return worst

"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Deliberately small: exactly the operations the forecasting model needs, in
64-bit precision so analytic gradients can be held to tight finite-difference
tolerances. Each operation records a closure that knows how to push a gradient
back to its inputs; ``backward`` replays those closures in reverse creation
order and then clears the tape, so a computation graph can be differentiated
once and is rebuilt per forward pass.

Conventions:
  * everything numeric is 2-D (row vectors for biases, ``(1, 1)`` for
    scalars) except convolution kernels, which are ``(width, c_in, c_out)``;
  * tensors never alias each other's buffers and are treated as immutable
    after creation, except gradient accumulation into ``.grad``;
  * a tape belongs to one thread. Independent forward passes (one per batch
    element) may run on separate threads and be reduced explicitly.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "DegenerateMaskError",
    "TapeError",
    "no_grad",
    "matmul",
    "conv1d_causal",
    "conv1d_causal_segmented",
    "softmax_masked",
    "relu",
    "sigmoid",
    "tanh",
    "hadamard",
    "add",
    "sub",
    "scale",
    "concat_lastdim",
    "concat_rows",
    "transpose",
    "reshape",
    "tile_rows",
    "tile_vertical",
    "repeat_rows_block",
    "split_rows",
    "sum_all",
    "backward",
    "check_gradients",
    "GradCheckReport",
]

# When enabled, every op asserts that finite inputs produce finite outputs.
# Off by default (it costs a full scan per op); the test suite and the CLI
# selfcheck turn it on.
debug_checks = False

_seq = itertools.count()
_local = threading.local()


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class DegenerateMaskError(ValueError):
    """A softmax mask leaves some row with no unmasked entry."""


class TapeError(RuntimeError):
    """Backward was asked to traverse a tape that has already been consumed."""


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording on the current thread (cheap inference mode)."""
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    """A dense float64 array plus optional gradient bookkeeping.

    ``requires_grad`` marks leaves that should receive gradients and is
    propagated to results of operations on them. ``grad`` stays ``None``
    until a ``backward`` pass deposits into it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_seq", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] | None = None
        self._backward = None
        self._op: str | None = None
        self._seq = next(_seq)
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f", op={self._op!r}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; the module-level functions are the definitions.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return hadamard(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return sum_all(self)


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if debug_checks and not np.isfinite(data).all():
        if all(np.isfinite(p.data).all() for p in parents):
            raise FloatingPointError(f"op {op!r} produced non-finite values from finite inputs")
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t._op = op
    t._seq = next(_seq)
    t._consumed = False
    if grad_enabled() and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = parents
        t._backward = backward_fn
    else:
        t.requires_grad = False
        t._parents = None
        t._backward = None
    return t


def _acc(grads: dict, t: Tensor, g: np.ndarray) -> None:
    key = id(t)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = a.data @ b.data

    def bwd(g, grads):
        if a.requires_grad:
            _acc(grads, a, g @ b.data.T)
        if b.requires_grad:
            _acc(grads, b, a.data.T @ g)

    return _from_op(out, (a, b), bwd, "matmul")


def conv1d_causal_segmented(x: Tensor, kernel: Tensor, t_len: int) -> Tensor:
    """Causal 1-D convolution applied independently to stacked segments.

    ``x`` is ``(n * t_len, c_in)``: ``n`` series of length ``t_len`` stacked
    vertically. Each segment is convolved with left-only zero padding, so
    output row ``t`` of a segment depends only on that segment's rows
    ``t - width + 1 .. t``. ``conv1d_causal`` is the single-segment case.
    """
    if x.ndim != 2 or kernel.ndim != 3:
        raise ShapeError(f"conv1d_causal: need (t, c_in) x (k, c_in, c_out), got {x.shape} x {kernel.shape}")
    width, c_in, c_out = kernel.shape
    if width < 1:
        raise ShapeError(f"conv1d_causal: kernel width must be >= 1, got {width}")
    if c_in != x.shape[1]:
        raise ShapeError(f"conv1d_causal: channel mismatch, input {x.shape} vs kernel {kernel.shape}")
    rows = x.data.shape[0]
    if t_len < 1 or rows % t_len != 0:
        raise ShapeError(f"conv1d_causal: {rows} rows do not split into segments of {t_len}")
    n_seg = rows // t_len
    if width == 1:
        # no padding needed; plain per-timestep linear map
        windows = x.data
        kflat = kernel.data[0]
    else:
        # windows[r] = that row's causal context flattened, so the whole
        # convolution is one (rows, width*c_in) @ (width*c_in, c_out) product
        pad3 = np.zeros((n_seg, t_len + width - 1, c_in))
        pad3[:, width - 1 :, :] = x.data.reshape(n_seg, t_len, c_in)
        win = np.empty((n_seg, t_len, width, c_in))
        for i in range(width):
            win[:, :, i, :] = pad3[:, i : i + t_len, :]
        windows = win.reshape(rows, width * c_in)
        kflat = kernel.data.reshape(width * c_in, c_out)
    out = windows @ kflat

    def bwd(g, grads):
        if kernel.requires_grad:
            _acc(grads, kernel, (windows.T @ g).reshape(width, c_in, c_out))
        if x.requires_grad:
            if width == 1:
                _acc(grads, x, g @ kflat.T)
            else:
                dwin = (g @ kflat.T).reshape(n_seg, t_len, width, c_in)
                dpad = np.zeros((n_seg, t_len + width - 1, c_in))
                for i in range(width):
                    dpad[:, i : i + t_len, :] += dwin[:, :, i, :]
                _acc(grads, x, dpad[:, width - 1 :, :].reshape(rows, c_in))

    return _from_op(out, (x, kernel), bwd, "conv1d_causal")


def conv1d_causal(x: Tensor, kernel: Tensor) -> Tensor:
    """Causal 1-D convolution of a single ``(t, c_in)`` series; see
    ``conv1d_causal_segmented``."""
    if x.ndim != 2:
        raise ShapeError(f"conv1d_causal: need (t, c_in) input, got {x.shape}")
    return conv1d_causal_segmented(x, kernel, x.data.shape[0])


def softmax_masked(logits: Tensor, mask: Tensor) -> Tensor:
    """Row-wise softmax with an additive {0, -inf} mask.

    Masked cells come out exactly 0 and each row sums to 1. Stabilized by
    subtracting the row max of the masked logits, which is finite as long as
    every row keeps at least one unmasked cell.
    """
    if logits.ndim != 2 or logits.shape != mask.shape:
        raise ShapeError(f"softmax_masked: logits {logits.shape} vs mask {mask.shape}")
    if mask.requires_grad:
        raise ValueError("softmax_masked: the mask is a constant and cannot require gradients")
    neg_inf = np.isneginf(mask.data)
    if not np.logical_or(neg_inf, mask.data == 0.0).all():
        raise ValueError("softmax_masked: mask entries must be 0 or -inf")
    dead = neg_inf.all(axis=1)
    if dead.any():
        raise DegenerateMaskError(f"softmax_masked: row {int(np.argmax(dead))} is fully masked")
    z = logits.data + mask.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)  # exp(-inf) == 0 exactly, so masked cells stay 0
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g, grads):
        if logits.requires_grad:
            inner = (g * p).sum(axis=1, keepdims=True)
            _acc(grads, logits, p * (g - inner))

    return _from_op(p, (logits,), bwd, "softmax_masked")


# ---------------------------------------------------------------------------
# elementwise suite
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def bwd(g, grads):
        if x.requires_grad:
            _acc(grads, x, (x.data > 0.0) * g)  # subgradient at 0 is 0

    return _from_op(out, (x,), bwd, "relu")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g, grads):
        if x.requires_grad:
            _acc(grads, x, out * (1.0 - out) * g)

    return _from_op(out, (x,), bwd, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bwd(g, grads):
        if x.requires_grad:
            _acc(grads, x, (1.0 - out * out) * g)

    return _from_op(out, (x,), bwd, "tanh")


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> str:
    """Classify the supported shape pairing: equal, or a (1, n) row vector
    broadcast against (m, n), or a (1, 1) scalar against anything."""
    if a.shape == b.shape:
        return "equal"
    if b.ndim == 2 and b.shape == (1, 1):
        return "b_scalar"
    if a.ndim == 2 and a.shape == (1, 1):
        return "a_scalar"
    if a.ndim == 2 and b.ndim == 2 and b.shape == (1, a.shape[1]):
        return "b_row"
    if a.ndim == 2 and b.ndim == 2 and a.shape == (1, b.shape[1]):
        return "a_row"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, kind: str) -> np.ndarray:
    if kind == "scalar":
        return g.sum().reshape(1, 1)
    return g.sum(axis=0, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    case = _binary_shapes(a, b, "add")
    out = a.data + b.data

    def bwd(g, grads):
        if a.requires_grad:
            _acc(grads, a, g if case not in ("a_scalar", "a_row") else _reduce_to(g, "scalar" if case == "a_scalar" else "row"))
        if b.requires_grad:
            _acc(grads, b, g if case not in ("b_scalar", "b_row") else _reduce_to(g, "scalar" if case == "b_scalar" else "row"))

    return _from_op(out, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    case = _binary_shapes(a, b, "sub")
    out = a.data - b.data

    def bwd(g, grads):
        if a.requires_grad:
            _acc(grads, a, g if case not in ("a_scalar", "a_row") else _reduce_to(g, "scalar" if case == "a_scalar" else "row"))
        if b.requires_grad:
            _acc(grads, b, -g if case not in ("b_scalar", "b_row") else -_reduce_to(g, "scalar" if case == "b_scalar" else "row"))

    return _from_op(out, (a, b), bwd, "sub")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    case = _binary_shapes(a, b, "hadamard")
    if case in ("a_row", "b_row"):
        raise ShapeError(f"hadamard: incompatible shapes {a.shape} and {b.shape}")
    out = a.data * b.data

    def bwd(g, grads):
        if a.requires_grad:
            da = b.data * g
            _acc(grads, a, da.sum().reshape(1, 1) if case == "a_scalar" else da)
        if b.requires_grad:
            db = a.data * g
            _acc(grads, b, db.sum().reshape(1, 1) if case == "b_scalar" else db)

    return _from_op(out, (a, b), bwd, "hadamard")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * c

    def bwd(g, grads):
        if x.requires_grad:
            _acc(grads, x, c * g)

    return _from_op(out, (x,), bwd, "scale")


def concat_lastdim(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_lastdim: empty input list")
    rows = parts[0].shape[0]
    for p in parts:
        if p.ndim != 2 or p.shape[0] != rows:
            raise ShapeError(f"concat_lastdim: row mismatch, shapes {[p.shape for p in parts]}")
    out = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.shape[1] for p in parts]

    def bwd(g, grads):
        off = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                _acc(grads, p, g[:, off : off + w].copy())
            off += w

    return _from_op(out, tuple(parts), bwd, "concat_lastdim")


def concat_rows(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows: empty input list")
    cols = parts[0].shape[1]
    for p in parts:
        if p.ndim != 2 or p.shape[1] != cols:
            raise ShapeError(f"concat_rows: column mismatch, shapes {[p.shape for p in parts]}")
    out = np.concatenate([p.data for p in parts], axis=0)
    heights = [p.shape[0] for p in parts]

    def bwd(g, grads):
        off = 0
        for p, h in zip(parts, heights):
            if p.requires_grad:
                _acc(grads, p, g[off : off + h].copy())
            off += h

    return _from_op(out, tuple(parts), bwd, "concat_rows")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose: need 2-D, got {x.shape}")
    out = x.data.T.copy()

    def bwd(g, grads):
        if x.requires_grad:
            _acc(grads, x, g.T.copy())

    return _from_op(out, (x,), bwd, "transpose")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape).copy()

    def bwd(g, grads):
        if x.requires_grad:
            _acc(grads, x, g.reshape(x.data.shape).copy())

    return _from_op(out, (x,), bwd, "reshape")


def tile_rows(x: Tensor, n: int) -> Tensor:
    """Repeat a (1, c) row vector into an (n, c) matrix."""
    if x.ndim != 2 or x.shape[0] != 1:
        raise ShapeError(f"tile_rows: need a (1, c) row, got {x.shape}")
    out = np.repeat(x.data, n, axis=0)

    def bwd(g, grads):
        if x.requires_grad:
            _acc(grads, x, g.sum(axis=0, keepdims=True))

    return _from_op(out, (x,), bwd, "tile_rows")


def tile_vertical(x: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of a (t, c) matrix vertically into (n*t, c)."""
    if x.ndim != 2:
        raise ShapeError(f"tile_vertical: need 2-D, got {x.shape}")
    t_len, c = x.data.shape
    out = np.tile(x.data, (n, 1))

    def bwd(g, grads):
        if x.requires_grad:
            _acc(grads, x, g.reshape(n, t_len, c).sum(axis=0))

    return _from_op(out, (x,), bwd, "tile_vertical")


def repeat_rows_block(x: Tensor, t: int) -> Tensor:
    """Repeat each row of an (n, c) matrix ``t`` consecutive times -> (n*t, c)."""
    if x.ndim != 2:
        raise ShapeError(f"repeat_rows_block: need 2-D, got {x.shape}")
    n, c = x.data.shape
    out = np.repeat(x.data, t, axis=0)

    def bwd(g, grads):
        if x.requires_grad:
            _acc(grads, x, g.reshape(n, t, c).sum(axis=1))

    return _from_op(out, (x,), bwd, "repeat_rows_block")


def split_rows(x: Tensor, t_len: int) -> list[Tensor]:
    """Cut an (n*t_len, c) matrix into ``n`` tensors of shape (t_len, c)."""
    if x.ndim != 2 or t_len < 1 or x.data.shape[0] % t_len != 0:
        raise ShapeError(f"split_rows: cannot split shape {x.shape} into rows of {t_len}")
    n_seg = x.data.shape[0] // t_len

    def make_piece(i):
        lo = i * t_len

        def bwd(g, grads):
            if x.requires_grad:
                full = np.zeros_like(x.data)
                full[lo : lo + t_len] = g
                _acc(grads, x, full)

        return _from_op(x.data[lo : lo + t_len].copy(), (x,), bwd, "split_rows")

    return [make_piece(i) for i in range(n_seg)]


def sum_all(x: Tensor) -> Tensor:
    out = np.array([[x.data.sum()]])

    def bwd(g, grads):
        if x.requires_grad:
            _acc(grads, x, np.full_like(x.data, g[0, 0]))

    return _from_op(out, (x,), bwd, "sum_all")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Visits the recorded tape in reverse creation order, exactly once per
    node, then clears it: a second backward through any part of the same
    graph raises ``TapeError``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")

    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._consumed and t._backward is None:
            raise TapeError(f"backward: tape through op {t._op!r} was already consumed; rebuild the forward pass")
        nodes.append(t)
        if t._parents is not None:
            stack.extend(t._parents)

    nodes.sort(key=lambda t: t._seq, reverse=True)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in nodes:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g
        if t._backward is not None:
            t._backward(g, grads)
            t._backward = None
            t._parents = None
            t._consumed = True


# ---------------------------------------------------------------------------
# finite-difference gradient oracle
# ---------------------------------------------------------------------------


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    checked: int
    skipped: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_err <= tol


@dataclass
class GradCheckReport:
    tol: float
    h: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return all(p.passed(self.tol) for p in self.params)

    def summary(self) -> str:
        lines = []
        for p in self.params:
            status = "ok" if p.passed(self.tol) else "FAIL"
            lines.append(
                f"{status:4s} {p.name:30s} max_rel_err={p.max_rel_err:.3e} checked={p.checked} skipped={p.skipped}"
            )
        lines.append(f"overall: {'pass' if self.passed else 'FAIL'} (tol={self.tol:g}, h={self.h:g})")
        return "\n".join(lines)


def check_gradients(f, params: list[Tensor], h: float = 1e-5, tol: float = 1e-6,
                    names: list[str] | None = None, kink_tol: float = 0.02) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central finite differences.

    ``f`` must be a deterministic closure returning a scalar Tensor built
    from ``params``. For each coordinate the two one-sided difference
    quotients are compared first; coordinates where they disagree by more
    than ``kink_tol`` (relative) sit on a non-differentiable point (e.g. a
    ReLU kink crossed by the probe) and are reported as skipped rather than
    checked. The error metric is ``|analytic - numeric| / max(1, |analytic|,
    |numeric|)``, a relative error with an absolute floor so that noise-level
    disagreement on tiny gradients does not dominate.
    """
    if names is None:
        names = [f"param{i}" for i in range(len(params))]
    if len(names) != len(params):
        raise ValueError("check_gradients: names and params length mismatch")

    f0 = f().item()
    if f().item() != f0:
        raise ValueError("check_gradients: f is not deterministic")

    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    backward(f())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p, g in zip(params, saved):
        p.grad = g

    report = GradCheckReport(tol=tol, h=h)
    with no_grad():
        for p, a, name in zip(params, analytic, names):
            if not p.data.flags["C_CONTIGUOUS"]:
                raise ValueError(f"check_gradients: parameter {name!r} is not contiguous")
            flat = p.data.reshape(-1)  # view; probes mutate the parameter in place
            a_flat = a.reshape(-1)
            skipped = 0
            max_err = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                s_plus = (fp - f0) / h
                s_minus = (f0 - fm) / h
                if abs(s_plus - s_minus) > kink_tol * max(abs(s_plus), abs(s_minus), 1.0):
                    skipped += 1
                    continue
                numeric = (fp - fm) / (2.0 * h)
                err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]), abs(numeric))
                if err > max_err:
                    max_err = err
            report.params.append(ParamCheck(name, max_err, flat.size - skipped, skipped))
    return report

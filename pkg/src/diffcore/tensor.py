# src/diffcore/tensor.py
"""
Reverse-mode autodiff over numpy arrays.

A `Tape` records every primitive applied to `Var`s in creation order, which is a
topological order; `Tape.backward` walks it in reverse, visiting each node once.
All values on a tape are float64, whatever the dtype of the bound parameters.
"""
from __future__ import annotations
from typing import Any, Callable, Dict, Iterable, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np

from src.utils.errors import InvalidArgumentError, PreconditionError

if TYPE_CHECKING:
    from src.diffcore.params import ParamSet

ArrayLike = Any
VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Var:
    """A value on a tape. Arithmetic operators record primitives."""

    __slots__ = ("value", "tape", "requires_grad", "name")
    # let numpy hand binary ops with a Var on the right back to Var's reflected methods
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, tape: "Tape", requires_grad: bool = False, name: str = ""):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad}, name={self.name!r})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __neg__(self): return neg(self)
    def __getitem__(self, index): return take(self, index)

    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def sum(self, axis=None, keepdims=False): return sum_(self, axis=axis, keepdims=keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out: Var, parents: Tuple[Var, ...], vjp: VJP):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """
    Records primitive ops for one forward pass.

    With `record=False` the tape only evaluates (inference mode); no node is kept
    and `backward` is refused.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.output: Any = None
        self._nodes: list[_Node] = []
        self._param_leaves: Dict[str, Var] = {}
        self._params: Optional["ParamSet"] = None
        self._params_version: int = -1
        self._inputs: list[Var] = []

    def __len__(self) -> int:
        return len(self._nodes)

    # ---------- leaves ----------
    def bind(self, params: "ParamSet", trainable: bool = True) -> Dict[str, Var]:
        """Expose every entry of `params` as a leaf. Gradients flow back into `params.grads`."""
        if self._params is not None and self._params is not params:
            raise PreconditionError("a tape binds at most one ParamSet")
        self._params = params
        self._params_version = params.version
        leaves: Dict[str, Var] = {}
        for name in params.names():
            v = Var(
                np.array(params.values[name], dtype=np.float64),
                self,
                requires_grad=self.record and trainable,
                name=name,
            )
            if v.requires_grad:
                self._param_leaves[name] = v
            leaves[name] = v
        return leaves

    def input(self, array: ArrayLike, requires_grad: bool = False, name: str = "") -> Var:
        v = Var(np.array(array, dtype=np.float64), self, requires_grad=self.record and requires_grad, name=name)
        if v.requires_grad:
            self._inputs.append(v)
        return v

    def constant(self, array: ArrayLike) -> Var:
        return Var(np.asarray(array, dtype=np.float64), self, requires_grad=False)

    # ---------- recording ----------
    def _emit(self, value: np.ndarray, parents: Tuple[Var, ...], vjp: VJP) -> Var:
        needs = self.record and any(p.requires_grad for p in parents)
        out = Var(value, self, requires_grad=needs)
        if needs:
            self._nodes.append(_Node(out, parents, vjp))
        return out

    # ---------- backward ----------
    def check_fresh(self) -> None:
        if self._params is not None and self._params.version != self._params_version:
            raise PreconditionError(
                f"stale tape: parameters changed since forward "
                f"(version {self._params_version} -> {self._params.version})"
            )

    def backward(self, output: Optional[Var] = None, output_grad: ArrayLike = None) -> Dict[Var, np.ndarray]:
        """
        Propagate `output_grad` (default ones) from `output` (default `self.output`).

        Parameter gradients are *added* to the bound ParamSet's grads, so repeated
        calls accumulate. Returns the gradients of input leaves created with
        `requires_grad=True`, fresh for this call.
        """
        if not self.record:
            raise PreconditionError("backward on a non-recording tape")
        self.check_fresh()
        out = output if output is not None else self.output
        if not isinstance(out, Var):
            raise PreconditionError("tape has no scalar/array output Var to differentiate")
        g0 = np.ones_like(out.value) if output_grad is None else np.asarray(output_grad, dtype=np.float64)
        if g0.shape != out.value.shape:
            raise InvalidArgumentError(f"output_grad shape {g0.shape} != output shape {out.value.shape}")

        grads: Dict[int, np.ndarray] = {id(out): g0}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

        if self._params is not None:
            for name, leaf in self._param_leaves.items():
                g = grads.pop(id(leaf), None)
                if g is not None:
                    self._params.accumulate(name, g)

        return {v: grads[id(v)] for v in self._inputs if id(v) in grads}


# ------------------------ helpers ------------------------

def _tape_of(*xs: Any) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise InvalidArgumentError("primitive called without any Var operand")


def _lift(x: Any, tape: Tape) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise InvalidArgumentError("operands live on different tapes")
        return x
    return tape.constant(x)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(a: Any, b: Any, fn: Callable[[np.ndarray, np.ndarray], np.ndarray], name: str):
    tape = _tape_of(a, b)
    va, vb = _lift(a, tape), _lift(b, tape)
    try:
        value = fn(va.value, vb.value)
    except ValueError as e:
        raise InvalidArgumentError(f"{name}: incompatible shapes {va.shape} and {vb.shape}") from e
    return tape, va, vb, value


# ------------------------ primitives ------------------------

def add(a: Any, b: Any) -> Var:
    tape, va, vb, value = _binary(a, b, np.add, "add")
    sa, sb = va.shape, vb.shape
    return tape._emit(value, (va, vb), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a: Any, b: Any) -> Var:
    tape, va, vb, value = _binary(a, b, np.subtract, "sub")
    sa, sb = va.shape, vb.shape
    return tape._emit(value, (va, vb), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a: Any, b: Any) -> Var:
    tape, va, vb, value = _binary(a, b, np.multiply, "mul")
    x, y = va.value, vb.value
    return tape._emit(value, (va, vb), lambda g: (unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)))


def div(a: Any, b: Any) -> Var:
    tape, va, vb, value = _binary(a, b, np.divide, "div")
    x, y = va.value, vb.value
    return tape._emit(
        value, (va, vb),
        lambda g: (unbroadcast(g / y, x.shape), unbroadcast(-g * x / (y * y), y.shape)),
    )


def neg(a: Var) -> Var:
    return a.tape._emit(-a.value, (a,), lambda g: (-g,))


def matmul(a: Any, b: Any) -> Var:
    """np.matmul for operands of ndim >= 2, batch dimensions broadcast."""
    tape, va, vb, value = _binary(a, b, np.matmul, "matmul")
    x, y = va.value, vb.value
    if x.ndim < 2 or y.ndim < 2:
        raise InvalidArgumentError("matmul operands need ndim >= 2")

    def vjp(g):
        gx = unbroadcast(np.matmul(g, np.swapaxes(y, -1, -2)), x.shape)
        gy = unbroadcast(np.matmul(np.swapaxes(x, -1, -2), g), y.shape)
        return gx, gy

    return tape._emit(value, (va, vb), vjp)


def tanh(a: Var) -> Var:
    t = np.tanh(a.value)
    return a.tape._emit(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a: Var) -> Var:
    e = np.exp(a.value)
    return a.tape._emit(e, (a,), lambda g: (g * e,))


def log(a: Var) -> Var:
    x = a.value
    return a.tape._emit(np.log(x), (a,), lambda g: (g / x,))


def square(a: Var) -> Var:
    x = a.value
    return a.tape._emit(np.square(x), (a,), lambda g: (2.0 * g * x,))


def abs_(a: Var) -> Var:
    x = a.value
    return a.tape._emit(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def sum_(a: Var, axis=None, keepdims: bool = False) -> Var:
    x = a.value
    value = np.sum(x, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return a.tape._emit(np.asarray(value), (a,), vjp)


def mean(a: Var, axis=None, keepdims: bool = False) -> Var:
    x = a.value
    count = x.size if axis is None else int(np.prod([x.shape[i] for i in np.atleast_1d(axis)]))
    value = np.mean(x, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return a.tape._emit(np.asarray(value), (a,), vjp)


def reshape(a: Var, shape) -> Var:
    src = a.shape
    try:
        value = a.value.reshape(shape)
    except ValueError as e:
        raise InvalidArgumentError(f"reshape: cannot view {src} as {shape}") from e
    return a.tape._emit(value, (a,), lambda g: (g.reshape(src),))


def concat(xs: Sequence[Any], axis: int = -1) -> Var:
    tape = _tape_of(*xs)
    vs = tuple(_lift(x, tape) for x in xs)
    try:
        value = np.concatenate([v.value for v in vs], axis=axis)
    except ValueError as e:
        raise InvalidArgumentError(f"concat: {[v.shape for v in vs]}") from e
    sizes = np.cumsum([v.shape[axis] for v in vs])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return tape._emit(value, vs, vjp)


def take(a: Var, index) -> Var:
    """Gather by numpy basic/advanced indexing; the vjp scatters with np.add.at."""
    x = a.value
    value = x[index]

    def vjp(g):
        full = np.zeros_like(x)
        np.add.at(full, index, g)
        return (full,)

    return a.tape._emit(np.array(value), (a,), vjp)


def minimum(a: Any, b: Any) -> Var:
    """Elementwise min; ties send the gradient to `a`."""
    tape, va, vb, value = _binary(a, b, np.minimum, "minimum")
    x, y = va.value, vb.value
    pick_a = x <= y
    return tape._emit(
        value, (va, vb),
        lambda g: (unbroadcast(np.where(pick_a, g, 0.0), x.shape), unbroadcast(np.where(pick_a, 0.0, g), y.shape)),
    )


def clip(a: Var, lo: float, hi: float) -> Var:
    """Elementwise clip; zero gradient where the bound is active."""
    x = a.value
    inside = (x >= lo) & (x <= hi)
    return a.tape._emit(np.clip(x, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),))


# ------------------------ graph-level API ------------------------

Graph = Callable[..., Any]


def forward(
    graph: Graph,
    params: Optional["ParamSet"],
    *inputs: ArrayLike,
    signature: Optional[Sequence[Optional[Tuple[int, ...]]]] = None,
    record: bool = True,
) -> Tuple[Any, Tape]:
    """
    Run `graph(tape, param_vars, *inputs)` on a fresh tape.

    Returns the output value(s) as numpy arrays plus the tape; the tape's `output`
    is the first Var the graph returned, ready for `backward`.
    """
    if signature is not None:
        if len(signature) != len(inputs):
            raise InvalidArgumentError(f"graph expects {len(signature)} inputs, got {len(inputs)}")
        for i, (want, got) in enumerate(zip(signature, inputs)):
            if want is not None and tuple(np.shape(got)) != tuple(want):
                raise InvalidArgumentError(f"input {i}: expected shape {tuple(want)}, got {np.shape(got)}")
    tape = Tape(record=record)
    pv = tape.bind(params) if params is not None else {}
    out = graph(tape, pv, *inputs)
    tape.output = out[0] if isinstance(out, tuple) else out
    if isinstance(out, tuple):
        values = tuple(o.value if isinstance(o, Var) else o for o in out)
    else:
        values = out.value if isinstance(out, Var) else out
    return values, tape


def backward(tape: Tape, output_grad: ArrayLike = None) -> Dict[Var, np.ndarray]:
    """Backpropagate `output_grad` through `tape`; grads accumulate into the bound ParamSet."""
    return tape.backward(None, output_grad)

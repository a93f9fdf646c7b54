"""Dense float64 tensors with reverse-mode differentiation, losses, optimisers.

Tensors wrap numpy arrays of any rank; leading axes broadcast the way numpy
does (a (B, N, F) batch times an (F, G) weight works), and gradients are
summed back to each operand's shape. Only what the graph models need is here.
"""

from __future__ import annotations

import base64
import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    # ----------------------------------------------------------- arithmetic
    def __add__(self, other):
        other = as_tensor(other)
        try:
            out_data = self.data + other.data
        except ValueError as exc:
            raise InvalidInputError(f"cannot add shapes {self.shape} and {other.shape}") from exc
        out = Tensor(out_data, _parents=(self, other), _op="add")

        def _backward(g):
            self._accumulate(g)
            other._accumulate(g)

        out._backward = _backward
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        try:
            out_data = self.data * other.data
        except ValueError as exc:
            raise InvalidInputError(f"cannot multiply shapes {self.shape} and {other.shape}") from exc
        out = Tensor(out_data, _parents=(self, other), _op="mul")

        def _backward(g):
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)

        out._backward = _backward
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        """Swap the last two axes."""
        out = Tensor(np.swapaxes(self.data, -1, -2), _parents=(self,), _op="transpose")
        out._backward = lambda g: self._accumulate(np.swapaxes(g, -1, -2))
        return out

    def sum(self) -> "Tensor":
        out = Tensor(self.data.sum(), _parents=(self,), _op="sum")
        out._backward = lambda g: self._accumulate(np.broadcast_to(g, self.data.shape))
        return out

    def abs(self) -> "Tensor":
        out = Tensor(np.abs(self.data), _parents=(self,), _op="abs")
        # np.sign(0) == 0: the subgradient at an exact fit is zero
        out._backward = lambda g: self._accumulate(g * np.sign(self.data))
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise InvalidInputError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b), _op="matmul")

    def _backward(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

    out._backward = _backward
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0), _parents=(x,), _op="relu")
    out._backward = lambda g: x._accumulate(g * (x.data > 0))
    return out


def identity(x) -> Tensor:
    return as_tensor(x)


def masked_softmax(scores, mask) -> Tensor:
    """Softmax along the last axis over entries where ``mask`` is True.

    Masked entries get weight exactly 0. Every row needs at least one
    unmasked entry.
    """
    scores = as_tensor(scores)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not mask.any(axis=-1).all():
        raise InvalidInputError("masked_softmax: a row has every entry masked")
    s = np.where(mask, scores.data, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(s), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, _parents=(scores,), _op="masked_softmax")

    def _backward(g):
        scores._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    out._backward = _backward
    return out


def mae_loss(pred, target, weights=None) -> Tensor:
    """Mean absolute error; ``weights`` (same shape, summing to 1) overrides the plain mean."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise InvalidInputError(f"mae_loss shape mismatch: {pred.shape} vs {target.shape}")
    if pred.data.size == 0:
        raise InvalidInputError("mae_loss needs at least one element")
    resid = (pred - target).abs()
    if weights is None:
        return resid.sum() * (1.0 / pred.data.size)
    return (resid * np.asarray(weights, dtype=np.float64)).sum()


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


# --------------------------------------------------------------------------
# parameter containers
# --------------------------------------------------------------------------


class ParamSet(dict):
    """Ordered name -> float64 array mapping (insertion order is canonical)."""

    def copy(self) -> "ParamSet":
        return ParamSet((k, np.array(v, dtype=np.float64, copy=True)) for k, v in self.items())

    def zeros_like(self) -> "ParamSet":
        return ParamSet((k, np.zeros_like(v)) for k, v in self.items())

    def check_congruent(self, other) -> None:
        if list(self.keys()) != list(other.keys()):
            raise InvalidInputError(f"parameter names differ: {list(self)} vs {list(other)}")
        for k in self:
            if np.shape(self[k]) != np.shape(other[k]):
                raise InvalidInputError(f"shape mismatch for {k}: {np.shape(self[k])} vs {np.shape(other[k])}")

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.items():
            h.update(k.encode())
            h.update(str(v.shape).encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    def num_values(self) -> int:
        return int(sum(v.size for v in self.values()))

    def to_json(self) -> dict:
        return {
            k: {
                "shape": list(v.shape),
                "values_b64": base64.b64encode(np.ascontiguousarray(v, dtype="<f8").tobytes()).decode(),
            }
            for k, v in self.items()
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ParamSet":
        out = cls()
        for k, spec in obj.items():
            raw = np.frombuffer(base64.b64decode(spec["values_b64"]), dtype="<f8")
            out[k] = raw.astype(np.float64).reshape(spec["shape"])
        return out

    def __eq__(self, other):
        if not isinstance(other, dict) or list(self) != list(other):
            return False
        return all(np.array_equal(self[k], other[k]) for k in self)

    def __ne__(self, other):
        return not self == other

    __hash__ = None


GradSet = ParamSet


def leaves(params: ParamSet) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def backward(loss: Tensor, params: dict[str, Tensor] | None = None) -> GradSet:
    """Propagate d(loss)/d(node) and collect gradients for the named leaves.

    Leaves not on the path to ``loss`` get zero gradients.
    """
    if loss.data.size != 1:
        raise InvalidInputError(f"backward needs a scalar root, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    grads = GradSet()
    for k, leaf in (params or {}).items():
        grads[k] = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.reshape(leaf.shape)
    return grads


# --------------------------------------------------------------------------
# optimisers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise InvalidInputError(f"unknown optimiser {self.kind!r}")
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)


def init_optimizer_state(params: ParamSet) -> dict:
    return {"t": 0, "m": params.zeros_like(), "v": params.zeros_like()}


def optimizer_step(params: ParamSet, grads: GradSet, state: dict, config: OptimizerConfig):
    """One update. Returns ``(new_params, new_state)``; inputs are not mutated."""
    params.check_congruent(grads)
    lr = config.learning_rate
    if config.kind == "sgd":
        return ParamSet((k, params[k] - lr * grads[k]) for k in params), state
    t = state["t"] + 1
    b1, b2 = config.beta1, config.beta2
    m = ParamSet((k, b1 * state["m"][k] + (1 - b1) * grads[k]) for k in params)
    v = ParamSet((k, b2 * state["v"][k] + (1 - b2) * grads[k] ** 2) for k in params)
    c1, c2 = 1 - b1**t, 1 - b2**t
    new = ParamSet(
        (k, params[k] - lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + config.eps)) for k in params
    )
    return new, {"t": t, "m": m, "v": v}


def optimizer_state_to_json(state: dict) -> dict:
    if not state:
        return {}
    return {"t": state["t"], "m": state["m"].to_json(), "v": state["v"].to_json()}


def optimizer_state_from_json(obj: dict) -> dict:
    if not obj:
        return {}
    return {"t": obj["t"], "m": ParamSet.from_json(obj["m"]), "v": ParamSet.from_json(obj["v"])}


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float
    kinks: int = 0  # entries whose finite-difference stencil straddled a non-differentiable point
    checked: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def grad_check(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: ParamSet,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, entry by entry.

    ``loss_fn`` builds a scalar loss from a dict of parameter tensors. The
    per-entry relative error is ``|a - n| / max(|a|, |n|, floor)`` where the
    floor ``1e-3 * sqrt(step)`` keeps round-off on vanishing entries from
    dominating. Entries whose one-sided slopes disagree sit on a ReLU or
    absolute-value kink within ``step``; central differences are meaningless
    there, so they are counted in ``kinks`` and left out of the error.
    """
    if not 1e-7 <= step <= 1e-3:
        raise InvalidInputError(f"step must lie in [1e-7, 1e-3], got {step}")
    lv = leaves(params)
    f0_t = loss_fn(lv)
    f0 = float(f0_t.data)
    analytic = backward(f0_t, lv)
    floor = 1e-3 * math.sqrt(step)
    report, kinks, checked = {}, 0, 0
    for name, value in params.items():
        worst = 0.0
        flat = value.reshape(-1)
        for idx in range(flat.size):
            shifted = {k: Tensor(v) for k, v in params.items()}
            plus, minus = flat.copy(), flat.copy()
            plus[idx] += step
            minus[idx] -= step
            shifted[name] = Tensor(plus.reshape(value.shape))
            f_plus = float(loss_fn(shifted).data)
            shifted[name] = Tensor(minus.reshape(value.shape))
            f_minus = float(loss_fn(shifted).data)
            fwd, bwd = (f_plus - f0) / step, (f0 - f_minus) / step
            checked += 1
            if abs(fwd - bwd) > tolerance * max(abs(fwd), abs(bwd), floor):
                kinks += 1
                continue
            num = (f_plus - f_minus) / (2 * step)
            ana = float(analytic[name].reshape(-1)[idx])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
        report[name] = worst
    return GradCheckReport(report, tolerance, kinks, checked)

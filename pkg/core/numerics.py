from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError, InputError, NumericsError


DTYPE = np.float64
PARAM_INIT_SCALE = 0.08
UNKNOWN_WORD_SCALE = 0.01
ADAGRAD_EPS = 1e-8
DEFAULT_LEARNING_RATE = 0.01
ELEMENTWISE_KINDS = ("relu", "tanh", "sigmoid")

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
Index = Union[int, slice, np.ndarray, Sequence[int]]


class Tensor:
    """Узел ленты: значение float64 и слот градиента той же формы."""

    __slots__ = ("value", "grad", "tape", "parents", "backward_fn", "op", "name")

    def __init__(
        self,
        value: np.ndarray,
        tape: "Tape",
        op: str = "const",
        parents: Tuple["Tensor", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        name: Optional[str] = None,
    ):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.value)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor({self.op}{label}, shape={self.value.shape})"


class Tape:
    """Лента операций в порядке записи; входы узла всегда записаны раньше него."""

    def __init__(self) -> None:
        self.nodes: List[Tensor] = []
        self._params: Dict[str, Tensor] = {}

    def record(
        self,
        op: str,
        value: np.ndarray,
        parents: Sequence[Tensor] = (),
        backward_fn: Optional[BackwardFn] = None,
        name: Optional[str] = None,
    ) -> Tensor:
        value = np.asarray(value, dtype=DTYPE)
        if not np.all(np.isfinite(value)):
            raise NumericsError(f"Нечисловое значение после операции {op}")
        node = Tensor(value, self, op, tuple(parents), backward_fn, name)
        self.nodes.append(node)
        return node

    def constant(self, value, name: Optional[str] = None) -> Tensor:
        return self.record("const", np.array(value, dtype=DTYPE), name=name)

    def param(self, store: "ParamStore", name: str) -> Tensor:
        node = self._params.get(name)
        if node is None:
            if name not in store.params:
                raise ContractError(f"Неизвестный параметр: {name}")
            node = self.record("param", store.params[name], name=name)
            self._params[name] = node
        return node

    def param_gradients(self) -> Dict[str, np.ndarray]:
        return {name: node.grad_or_zeros() for name, node in self._params.items()}


@dataclass
class ParamStore:
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    accumulators: Dict[str, np.ndarray] = field(default_factory=dict)
    learning_rate: float = DEFAULT_LEARNING_RATE

    def add(self, name: str, value: np.ndarray) -> None:
        arr = np.array(value, dtype=DTYPE)
        self.params[name] = arr
        self.accumulators[name] = np.zeros_like(arr)

    def names(self) -> List[str]:
        return sorted(self.params)

    def n_parameters(self) -> int:
        return int(sum(arr.size for arr in self.params.values()))

    def copy(self) -> "ParamStore":
        return ParamStore(
            params={k: v.copy() for k, v in self.params.items()},
            accumulators={k: v.copy() for k, v in self.accumulators.items()},
            learning_rate=self.learning_rate,
        )

    def all_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(v))) for v in self.params.values())


def uniform_init(rng: np.random.Generator, shape: Sequence[int], scale: float = PARAM_INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=tuple(shape)).astype(DTYPE)


def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    if loss.tape is not tape:
        raise ContractError("Функция потерь записана на другой ленте")
    if loss.value.size != 1:
        raise ContractError(f"Функция потерь должна быть скаляром, получена форма {loss.value.shape}")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        if node.grad is None or node.backward_fn is None:
            continue
        parent_grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, parent_grads):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    return tape.param_gradients()


def adagrad_step(store: ParamStore, grads: Dict[str, np.ndarray]) -> ParamStore:
    lr = float(store.learning_rate)
    for name in sorted(grads):
        if name not in store.params:
            raise ContractError(f"Градиент для неизвестного параметра: {name}")
        g = np.asarray(grads[name], dtype=DTYPE)
        param = store.params[name]
        if g.shape != param.shape:
            raise DimensionError(f"adagrad: форма градиента {g.shape} не совпадает с параметром {name} {param.shape}")
        acc = store.accumulators[name]
        acc += g * g
        param -= lr * g / (np.sqrt(acc) + ADAGRAD_EPS)
    return store


# --- операции ---


def _tape_of(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ContractError("Тензоры принадлежат разным лентам")
    return tape


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: несовместимые формы {a.shape} и {b.shape}") from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: несовместимые формы {av.shape} и {bv.shape}")
    a2 = av.reshape(1, -1) if av.ndim == 1 else av
    b2 = bv.reshape(-1, 1) if bv.ndim == 1 else bv

    def _backward(g: np.ndarray):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        return (g2 @ b2.T).reshape(av.shape), (a2.T @ g2).reshape(bv.shape)

    return tape.record("matmul", av @ bv, (a, b), _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return tape.record("add", a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return tape.record(
        "mul",
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return x.tape.record("scale", x.value * factor, (x,), lambda g: (g * factor,))


def elementwise(kind: str, x: Tensor) -> Tensor:
    v = x.value
    if kind == "relu":
        mask = (v > 0).astype(DTYPE)
        return x.tape.record("relu", v * mask, (x,), lambda g: (g * mask,))
    if kind == "tanh":
        y = np.tanh(v)
        return x.tape.record("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))
    if kind == "sigmoid":
        y = _sigmoid(v)
        return x.tape.record("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))
    raise ContractError(f"Неизвестная поэлементная функция: {kind}")


def relu(x: Tensor) -> Tensor:
    return elementwise("relu", x)


def tanh(x: Tensor) -> Tensor:
    return elementwise("tanh", x)


def sigmoid(x: Tensor) -> Tensor:
    return elementwise("sigmoid", x)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -v))


def softmax(x: Tensor) -> Tensor:
    """Softmax по последней оси (вектор или построчно для матрицы)."""
    v = x.value
    if v.ndim == 0 or v.shape[-1] == 0:
        raise DimensionError(f"softmax: пустой вход формы {v.shape}")
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def _backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return x.tape.record("softmax", y, (x,), _backward)


def nll_loss(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], считается через log-sum-exp."""
    v = logits.value
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"nll_loss: ожидается непустой вектор логитов, получено {v.shape}")
    if not 0 <= int(label) < v.size:
        raise ContractError(f"nll_loss: метка {label} вне диапазона 0..{v.size - 1}")
    shifted = v - v.max()
    log_probs = shifted - np.log(np.exp(shifted).sum())
    probs = np.exp(log_probs)
    onehot = np.zeros_like(v)
    onehot[int(label)] = 1.0
    return logits.tape.record("nll", -log_probs[int(label)], (logits,), lambda g: (g * (probs - onehot),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat: пустой список тензоров")
    tape = _tape_of(*tensors)
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: несовместимые формы {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return tape.record("concat", out, tensors, _backward)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise DimensionError("stack_rows: пустой список тензоров")
    tape = _tape_of(*tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack_rows: разные формы строк {sorted(shapes)}")
    return tape.record("stack", np.stack([t.value for t in tensors]), tensors, lambda g: tuple(g))


def take_rows(x: Tensor, index: Index) -> Tensor:
    """Выборка строк (или элементов вектора) по индексу, срезу или списку индексов."""
    if not isinstance(index, (int, slice, np.integer)):
        index = np.asarray(index, dtype=np.int64)
    v = x.value

    def _backward(g: np.ndarray):
        gx = np.zeros_like(v)
        np.add.at(gx, index, g)
        return (gx,)

    return x.tape.record("take", v[index], (x,), _backward)


def transpose(x: Tensor) -> Tensor:
    if x.value.ndim != 2:
        raise DimensionError(f"transpose: ожидается матрица, получено {x.shape}")
    return x.tape.record("transpose", x.value.T, (x,), lambda g: (g.T,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return x.tape.record("sum", np.sum(x.value), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    n = max(1, x.value.size)
    return scale(sum_all(x), 1.0 / n)


def max_rows(x: Tensor) -> Tensor:
    """Max-pooling по оси времени: матрица n×f -> вектор f."""
    v = x.value
    if v.ndim != 2 or v.shape[0] == 0:
        raise DimensionError(f"max_rows: ожидается непустая матрица, получено {v.shape}")
    arg = np.argmax(v, axis=0)
    cols = np.arange(v.shape[1])

    def _backward(g: np.ndarray):
        gx = np.zeros_like(v)
        gx[arg, cols] = g
        return (gx,)

    return x.tape.record("max_rows", v[arg, cols], (x,), _backward)


def conv1d(x: Tensor, w: Tensor, b: Tensor, width: int) -> Tensor:
    """Свёртка по времени: x (n×d), w (f × width·d), b (f) -> (max(n, width)-width+1) × f."""
    tape = _tape_of(x, w, b)
    xv, wv, bv = x.value, w.value, b.value
    if xv.ndim != 2:
        raise DimensionError(f"conv1d: ожидается матрица токенов, получено {xv.shape}")
    n, d = xv.shape
    width = int(width)
    if wv.ndim != 2 or wv.shape[1] != width * d or bv.shape != (wv.shape[0],):
        raise DimensionError(f"conv1d: веса {wv.shape} и смещение {bv.shape} не подходят для входа {xv.shape}, ширина {width}")
    padded = xv if n >= width else np.vstack([xv, np.zeros((width - n, d), dtype=DTYPE)])
    n_out = padded.shape[0] - width + 1
    idx = np.arange(n_out)[:, None] + np.arange(width)[None, :]
    windows = padded[idx].reshape(n_out, width * d)

    def _backward(g: np.ndarray):
        g_windows = (g @ wv).reshape(n_out, width, d)
        g_padded = np.zeros_like(padded)
        np.add.at(g_padded, idx, g_windows)
        return g_padded[:n], g.T @ windows, g.sum(axis=0)

    return tape.record("conv1d", windows @ wv.T + bv, (x, w, b), _backward)


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise InputError(f"Доля dropout должна быть в [0, 1), получено {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout в режиме обучения требует генератор случайных чисел")
    mask = (rng.random(x.shape) >= rate).astype(DTYPE) / (1.0 - rate)
    return x.tape.record("dropout", x.value * mask, (x,), lambda g: (g * mask,))


def lstm_step(
    x: Tensor,
    state: Tuple[Tensor, Tensor],
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
) -> Tuple[Tensor, Tensor]:
    """Один шаг LSTM без peephole; порядок блоков вентилей: i, f, g, o."""
    h, c = state
    tape = _tape_of(x, h, c, w_ih, w_hh, bias)
    xv, hv, cv = x.value, h.value, c.value
    hidden = hv.shape[0] if hv.ndim == 1 else -1
    if (
        xv.ndim != 1
        or hv.ndim != 1
        or cv.shape != hv.shape
        or w_ih.shape != (4 * hidden, xv.shape[0])
        or w_hh.shape != (4 * hidden, hidden)
        or bias.shape != (4 * hidden,)
    ):
        raise DimensionError(
            f"lstm_step: x {xv.shape}, h {hv.shape}, c {cv.shape}, "
            f"w_ih {w_ih.shape}, w_hh {w_hh.shape}, b {bias.shape}"
        )
    wih, whh = w_ih.value, w_hh.value
    pre = wih @ xv + whh @ hv + bias.value
    i = _sigmoid(pre[:hidden])
    f = _sigmoid(pre[hidden : 2 * hidden])
    g_cand = np.tanh(pre[2 * hidden : 3 * hidden])
    o = _sigmoid(pre[3 * hidden :])
    c_new = f * cv + i * g_cand
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c

    def _backward(grad: np.ndarray):
        gh, gc = grad[:hidden], grad[hidden:]
        dc = gc + gh * o * (1.0 - tanh_c * tanh_c)
        d_pre = np.concatenate(
            [
                dc * g_cand * i * (1.0 - i),
                dc * cv * f * (1.0 - f),
                dc * i * (1.0 - g_cand * g_cand),
                gh * tanh_c * o * (1.0 - o),
            ]
        )
        return (
            wih.T @ d_pre,
            whh.T @ d_pre,
            dc * f,
            np.outer(d_pre, xv),
            np.outer(d_pre, hv),
            d_pre,
        )

    hc = tape.record("lstm_step", np.concatenate([h_new, c_new]), (x, h, c, w_ih, w_hh, bias), _backward)
    return take_rows(hc, slice(0, hidden)), take_rows(hc, slice(hidden, 2 * hidden))

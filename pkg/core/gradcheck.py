from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import numerics as nx
from .corpus import InstanceChain, build_two_hop_instances
from .encoder import Vocab
from .model import MODEL_KINDS, ModelConfig, forward_logits, init_params, prepare_instance
from .numerics import ParamStore, Tape, Tensor
from .synthetic import SyntheticConfig, generate_synthetic


logger = logging.getLogger(__name__)

FD_STEP = 1e-5
REL_TOLERANCE = 1e-4
REL_FLOOR = 1e-4

BuildLoss = Callable[[Tape, Dict[str, Tensor]], Tensor]


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float
    worst_param: str
    worst_index: Tuple[int, ...]
    analytic: float
    numeric: float
    n_checked: int
    tolerance: float = REL_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


@dataclass(frozen=True)
class GradCheckReport:
    results: Tuple[GradCheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> List[GradCheckResult]:
        return [r for r in self.results if not r.passed]


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), REL_FLOOR)


def check_gradients(
    name: str,
    build_loss: BuildLoss,
    inputs: Mapping[str, np.ndarray],
    rng: Optional[np.random.Generator] = None,
    max_coords: Optional[int] = None,
    step: float = FD_STEP,
    tolerance: float = REL_TOLERANCE,
) -> GradCheckResult:
    """Сравнивает градиент ленты с центральными разностями по (выборочным) координатам каждого входа."""
    store = ParamStore()
    for key, value in inputs.items():
        store.add(key, value)

    def loss_value() -> float:
        tape = Tape()
        leaves = {key: tape.param(store, key) for key in store.params}
        return float(build_loss(tape, leaves).value)

    tape = Tape()
    leaves = {key: tape.param(store, key) for key in store.params}
    analytic = nx.backward(tape, build_loss(tape, leaves))

    worst = (0.0, "", (), 0.0, 0.0)
    checked = 0
    for key in sorted(store.params):
        param = store.params[key]
        coords = list(np.ndindex(param.shape))
        if max_coords is not None and len(coords) > max_coords:
            picker = rng or np.random.default_rng(0)
            chosen = picker.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[int(i)] for i in sorted(chosen)]
        grad = analytic.get(key, np.zeros_like(param))
        for idx in coords:
            original = param[idx]
            param[idx] = original + step
            plus = loss_value()
            param[idx] = original - step
            minus = loss_value()
            param[idx] = original
            numeric = (plus - minus) / (2.0 * step)
            err = relative_error(float(grad[idx]), numeric)
            checked += 1
            if err > worst[0] or not worst[1]:
                worst = (err, key, tuple(int(i) for i in idx), float(grad[idx]), numeric)
    return GradCheckResult(
        name=name,
        max_rel_error=worst[0],
        worst_param=worst[1],
        worst_index=worst[2],
        analytic=worst[3],
        numeric=worst[4],
        n_checked=checked,
        tolerance=tolerance,
    )


def _weighted_sum(tape: Tape, out: Tensor, weights: np.ndarray) -> Tensor:
    return nx.sum_all(nx.mul(out, tape.constant(weights[: out.value.size].reshape(out.shape))))


def op_cases(rng: np.random.Generator) -> List[Tuple[str, BuildLoss, Dict[str, np.ndarray]]]:
    """Набор проверок: каждая дифференцируемая операция со случайными входами."""
    r = lambda *shape: rng.normal(size=shape)
    weights = rng.normal(size=256)

    def unary(op: Callable[[Tensor], Tensor]) -> BuildLoss:
        return lambda tape, t: _weighted_sum(tape, op(t["x"]), weights)

    def lstm(tape: Tape, t: Dict[str, Tensor]) -> Tensor:
        h, c = nx.lstm_step(t["x"], (t["h"], t["c"]), t["w_ih"], t["w_hh"], t["b"])
        return nx.add(_weighted_sum(tape, h, weights), _weighted_sum(tape, c, weights[::-1].copy()))

    def dropout(tape: Tape, t: Dict[str, Tensor]) -> Tensor:
        return _weighted_sum(tape, nx.dropout(t["x"], 0.5, True, np.random.default_rng(7)), weights)

    hidden, d_in = 3, 4
    return [
        ("matmul", lambda tape, t: _weighted_sum(tape, nx.matmul(t["a"], t["b"]), weights), {"a": r(3, 4), "b": r(4, 2)}),
        ("matvec", lambda tape, t: _weighted_sum(tape, nx.matmul(t["a"], t["v"]), weights), {"a": r(3, 4), "v": r(4)}),
        ("add", lambda tape, t: _weighted_sum(tape, nx.add(t["a"], t["b"]), weights), {"a": r(3, 4), "b": r(4)}),
        ("mul", lambda tape, t: _weighted_sum(tape, nx.mul(t["a"], t["b"]), weights), {"a": r(3, 4), "b": r(3, 1)}),
        ("scale", unary(lambda x: nx.scale(x, -2.5)), {"x": r(5)}),
        ("relu", unary(nx.relu), {"x": r(6)}),
        ("tanh", unary(nx.tanh), {"x": r(6)}),
        ("sigmoid", unary(nx.sigmoid), {"x": r(6)}),
        ("softmax", unary(nx.softmax), {"x": r(3, 5)}),
        ("nll_loss", lambda tape, t: nx.nll_loss(t["x"], 2), {"x": r(5)}),
        ("concat", lambda tape, t: _weighted_sum(tape, nx.concat([t["a"], t["b"]], axis=1), weights), {"a": r(2, 3), "b": r(2, 2)}),
        ("stack_rows", lambda tape, t: _weighted_sum(tape, nx.stack_rows([t["a"], t["b"], t["a"]]), weights), {"a": r(4), "b": r(4)}),
        ("take_rows", unary(lambda x: nx.take_rows(x, [2, 0, 2])), {"x": r(4, 3)}),
        ("transpose", unary(nx.transpose), {"x": r(2, 5)}),
        ("sum_all", lambda tape, t: nx.sum_all(nx.mul(t["x"], t["x"])), {"x": r(3, 3)}),
        ("mean_all", lambda tape, t: nx.mean_all(nx.mul(t["x"], t["x"])), {"x": r(3, 3)}),
        ("max_rows", unary(nx.max_rows), {"x": r(6, 4)}),
        (
            "conv1d",
            lambda tape, t: _weighted_sum(tape, nx.conv1d(t["x"], t["w"], t["b"], 3), weights),
            {"x": r(5, 2), "w": r(4, 6), "b": r(4)},
        ),
        (
            "conv1d_padded",
            lambda tape, t: _weighted_sum(tape, nx.conv1d(t["x"], t["w"], t["b"], 4), weights),
            {"x": r(2, 2), "w": r(3, 8), "b": r(3)},
        ),
        ("dropout", dropout, {"x": r(8)}),
        (
            "lstm_step",
            lstm,
            {
                "x": r(d_in),
                "h": r(hidden),
                "c": r(hidden),
                "w_ih": r(4 * hidden, d_in),
                "w_hh": r(4 * hidden, hidden),
                "b": r(4 * hidden),
            },
        ),
    ]


def toy_chain(seed: int = 0) -> InstanceChain:
    """Положительный экземпляр синтетического корпуса: два предложения в первом документе."""
    records, kb = generate_synthetic(SyntheticConfig(n_relations=2, n_records=1, vocab=5, seed=seed, filler_sentences=0))
    instances = build_two_hop_instances(records[0], kb, warnings=Counter())
    return next(inst for inst in instances if not inst.is_none)


def toy_model_config(**overrides) -> ModelConfig:
    values = dict(d_w=4, d_z=2, dropout=0.0, cnn_filters=3, kernel_widths=(2, 3), indicator_size=8)
    values.update(overrides)
    return ModelConfig(**values)


def model_case(kind: str, seed: int = 0, config: Optional[ModelConfig] = None) -> Tuple[BuildLoss, Dict[str, np.ndarray]]:
    config = config or toy_model_config()
    chain = toy_chain(seed)
    vocab = Vocab.build([chain])
    relations = (chain.label,)
    prepared = prepare_instance(chain, vocab, relations, config, seed)
    store = init_params(kind, config, len(vocab), len(relations) + 1, np.random.default_rng(seed))

    def build(tape: Tape, leaves: Dict[str, Tensor]) -> Tensor:
        # лента уже держит листья с этими именами, поэтому модель получит их же
        inner = ParamStore(params={k: t.value for k, t in leaves.items()})
        return nx.nll_loss(forward_logits(kind, tape, inner, prepared, config), prepared.label_id)

    return build, dict(store.params)


def run_gradcheck(
    seed: int = 0,
    models: Sequence[str] = MODEL_KINDS,
    max_coords: Optional[int] = 25,
    tolerance: float = REL_TOLERANCE,
) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    results = []
    for name, build, inputs in op_cases(rng):
        results.append(check_gradients(name, build, inputs, rng, None, tolerance=tolerance))
    for kind in models:
        build, inputs = model_case(kind, seed)
        results.append(check_gradients(f"model:{kind}", build, inputs, rng, max_coords, tolerance=tolerance))
    for r in results:
        level = logging.INFO if r.passed else logging.ERROR
        logger.log(level, "%s: max rel err %.3e (%s%s)", r.name, r.max_rel_error, r.worst_param, list(r.worst_index))
    return GradCheckReport(results=tuple(results))


def render_gradcheck_text(report: GradCheckReport) -> str:
    lines = ["Проверка градиентов (центральные разности, шаг 1e-5)", ""]
    for r in report.results:
        status = "OK" if r.passed else "FAIL"
        lines.append(
            f"{status:4}  {r.name:18}  max_rel={r.max_rel_error:.3e}  coords={r.n_checked}"
            + ("" if r.passed else f"  худшая: {r.worst_param}{list(r.worst_index)} analytic={r.analytic:.6e} numeric={r.numeric:.6e}")
        )
    lines.extend(["", "Итог: " + ("все проверки пройдены" if report.passed else f"ошибок: {len(report.failures())}"), ""])
    return "\n".join(lines)

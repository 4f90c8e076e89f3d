"""Spiking feature heads feeding compiled activity queries.

Each neural predicate declared in a rule program gets its own feature head.
The head emits a value distribution for every interval of a window; indexed
predicates such as ``move_upper_legs_2`` read interval 1.  A window's score for
activity ``a`` is ``P(activity(w, a))`` under the compiled circuit, and training
minimises ``-log`` of the score of the true activity.

Heads see movement rather than level: the absolute frame-to-frame change of
the CSI magnitudes (see :func:`movement_encoding`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from csihar import autodiff as ad
from csihar.autodiff import Tensor
from csihar.errors import ConfigError
from csihar.models import Params, SnnSpec, init_snn, snn_forward
from csihar.rules import (
    ArithmeticCircuit,
    RuleProgram,
    TemporalBinding,
    eval_circuit_tensor,
    ground_and_compile,
    parse_program,
)
from csihar.spiking import LifConfig, Reset
from csihar.training import EvalReport, TrainConfig, TrainResult, WindowSet, check_classes, evaluate_scores, train_loop

PROB_FLOOR = 1e-9


@dataclass(frozen=True)
class NeuroSymbolicModel:
    program: RuleProgram
    labels: tuple[str, ...]  # rule-level activity constant per class index
    circuits: tuple[ArithmeticCircuit, ...]
    heads: dict[str, SnnSpec]  # neural predicate -> head geometry

    def init_params(self, seed: int = 0) -> Params:
        params: Params = {}
        for i, (pred, spec) in enumerate(sorted(self.heads.items())):
            for name, t in init_snn(spec, seed * 100 + i).items():
                params[f"{pred}.{name}"] = t
        return params


def build_model(
    program: RuleProgram | str,
    labels: Sequence[str],
    subcarriers: int = 64,
    antennas: int = 4,
    config: TrainConfig | None = None,
    query: str = "activity(w, {label})",
) -> NeuroSymbolicModel:
    """Compile one query per label and size a feature head for each neural predicate."""
    if isinstance(program, str):
        program = parse_program(program)
    if not program.neural_decls:
        raise ConfigError("the rule program declares no neural predicates")
    config = config or TrainConfig()
    binding = TemporalBinding.infer(program)
    circuits = tuple(ground_and_compile(program, query.format(label=lab), binding) for lab in labels)
    lif = LifConfig(reset=Reset(config.reset_mechanism))
    heads = {
        d.pred: SnnSpec("feature", subcarriers=subcarriers, antennas=antennas, outputs=len(d.values),
                        step=config.step, lif=lif)  # fmt: skip
        for d in program.neural_decls
    }
    return NeuroSymbolicModel(program, tuple(labels), circuits, heads)


def movement_encoding(x: np.ndarray) -> np.ndarray:
    """``|x[t] - x[t-1]|`` along the frame axis of ``[batch, frames, ...]`` windows;
    the first frame repeats the first difference so the frame count is kept."""
    d = np.abs(np.diff(np.asarray(x, dtype=np.float64), axis=1))
    return np.concatenate([d[:, :1], d], axis=1)


def head_outputs(model: NeuroSymbolicModel, params: Params, x: Tensor, smooth: bool = False) -> dict[str, Tensor]:
    """Per-interval value distributions ``[batch, intervals, arity]`` for every head."""
    out = {}
    for pred, spec in model.heads.items():
        own = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith(pred + ".")}
        out[pred] = snn_forward(x, spec, own, smooth)
    return out


def query_scores(model: NeuroSymbolicModel, params: Params, x: Tensor, smooth: bool = False) -> Tensor:
    """``[batch, labels]`` query probabilities; rows need not sum to 1."""
    neural = {}
    for pred, dist in head_outputs(model, params, x, smooth).items():
        for k in range(dist.shape[1]):
            neural[(pred, k)] = dist[:, k, :]
    return ad.stack([eval_circuit_tensor(c, neural) for c in model.circuits], axis=1)


def query_nll(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean ``-log P(true query)``, with probabilities floored before the log."""
    labels = np.asarray(labels)
    picked = ad.sum(ad.mul(scores, Tensor(np.eye(scores.shape[1])[labels])), axis=1)
    return ad.scale(ad.sum(ad.log(ad.clamp_min(picked, PROB_FLOOR))), -1.0 / len(labels))


def train_neurosym(model: NeuroSymbolicModel, data: WindowSet, config: TrainConfig) -> TrainResult:
    check_classes(data, len(model.labels))
    params = model.init_params(config.seed)

    def batch_loss(p, idx, epoch):
        return query_nll(query_scores(model, p, Tensor(data.x[idx])), data.y[idx])

    return train_loop(params, len(data), batch_loss, config)


def predict_scores(model: NeuroSymbolicModel, params: Params, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = [query_scores(model, params, Tensor(x[i : i + batch_size])).data for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def evaluate_neurosym(model: NeuroSymbolicModel, params: Params, data: WindowSet) -> EvalReport:
    """Argmax over query probabilities, ties to the lowest class index."""
    return evaluate_scores(predict_scores(model, params, data.x), data.y, data.classes)

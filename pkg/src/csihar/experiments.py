"""End-to-end runs on synthetic recordings: data, training and held-out evaluation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from csihar.csi import ACTIVITIES
from csihar.models import CnnSpec, Params, SnnSpec, cnn_forward, init_cnn, init_snn, snn_forward
from csihar.neurosym import NeuroSymbolicModel, build_model, movement_encoding, predict_scores, train_neurosym
from csihar.resources import rule_text
from csihar.spiking import LifConfig, Reset
from csihar.training import (
    CNN_CONFIG,
    SNN_CONFIG,
    EvalReport,
    Standardizer,
    TrainConfig,
    WindowSet,
    evaluate_scores,
    predict,
    split_by_index,
    synthetic_windows,
    train_classifier,
)

# rule constant for each activity name used by the bundled walk/squat program
RULE_LABELS = {"walking": "walk", "squatting": "squat"}


@dataclass
class RunResult:
    report: EvalReport
    history: list[float]
    params: Params
    standardizer: Standardizer
    train_size: int
    test_size: int
    test_scores: np.ndarray  # [test windows, classes]
    test_labels: np.ndarray


def split_data(
    activities: Sequence[str],
    seed: int,
    subcarriers: int = 64,
    antennas: int = 4,
    encode: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[WindowSet, WindowSet]:
    """Synthetic windows split 80/20 per recording, optionally re-encoded, not yet standardised."""
    data = synthetic_windows(activities, seed=seed, subcarriers=subcarriers, antennas=antennas)
    train, test = split_by_index(data)
    if encode is not None:
        train.x, test.x = encode(train.x), encode(test.x)
    return train, test


def prepare_data(
    activities: Sequence[str],
    seed: int,
    subcarriers: int = 64,
    antennas: int = 4,
    encode: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[WindowSet, WindowSet, Standardizer]:
    """:func:`split_data`, standardised with training statistics."""
    train, test = split_data(activities, seed, subcarriers, antennas, encode)
    std = Standardizer.fit(train.x)
    train.x, test.x = std(train.x), std(test.x)
    return train, test, std


def snn_spec(
    config: TrainConfig, subcarriers: int = 64, antennas: int = 4, variant: str = "model2", outputs: int = len(ACTIVITIES)
) -> SnnSpec:
    lif = LifConfig(reset=Reset(config.reset_mechanism))
    return SnnSpec(variant, subcarriers=subcarriers, antennas=antennas, hidden_dim=config.hidden_dim,
                   step=config.step, outputs=outputs, lif=lif)  # fmt: skip


def cnn_spec(config: TrainConfig, subcarriers: int = 64, antennas: int = 4, outputs: int = len(ACTIVITIES)) -> CnnSpec:
    return CnnSpec(subcarriers=subcarriers, antennas=antennas, last_channel=config.last_channel, outputs=outputs)


def _classifier_run(forward, params, config, activities, subcarriers, antennas) -> RunResult:
    train, test, std = prepare_data(activities, config.seed, subcarriers, antennas)
    result = train_classifier(forward, params, train, config)
    scores = predict(forward, result.params, test.x)
    report = evaluate_scores(scores, test.y, test.classes)
    return RunResult(report, result.history, result.params, std, len(train), len(test), scores, test.y)


def run_snn(
    config: TrainConfig = SNN_CONFIG,
    activities: Sequence[str] = ACTIVITIES,
    subcarriers: int = 64,
    antennas: int = 4,
    variant: str = "model2",
) -> RunResult:
    spec = snn_spec(config, subcarriers, antennas, variant, len(activities))
    return _classifier_run(
        lambda x, p: snn_forward(x, spec, p), init_snn(spec, config.seed), config, activities, subcarriers, antennas
    )


def run_cnn(
    config: TrainConfig = CNN_CONFIG,
    activities: Sequence[str] = ACTIVITIES,
    subcarriers: int = 64,
    antennas: int = 4,
) -> RunResult:
    spec = cnn_spec(config, subcarriers, antennas, len(activities))
    return _classifier_run(
        lambda x, p: cnn_forward(x, spec, p), init_cnn(spec, config.seed), config, activities, subcarriers, antennas
    )


def run_neurosym(
    config: TrainConfig = SNN_CONFIG,
    program: str | None = None,
    activities: Sequence[str] = ("walking", "squatting"),
    subcarriers: int = 64,
    antennas: int = 4,
) -> tuple[NeuroSymbolicModel, RunResult]:
    """Walk-versus-squat classification through the temporal rule program."""
    labels = [RULE_LABELS.get(a, a) for a in activities]
    model = build_model(program or rule_text("walk_squat"), labels, subcarriers, antennas, config)
    train, test, std = prepare_data(activities, config.seed, subcarriers, antennas, encode=movement_encoding)
    result = train_neurosym(model, train, config)
    scores = predict_scores(model, result.params, test.x)
    report = evaluate_scores(scores, test.y, test.classes)
    return model, RunResult(report, result.history, result.params, std, len(train), len(test), scores, test.y)


def with_seed(config: TrainConfig, seed: int | None) -> TrainConfig:
    return config if seed is None else replace(config, seed=seed)

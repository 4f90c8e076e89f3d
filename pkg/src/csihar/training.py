"""Datasets of labelled windows, the annealed loss, training loops and evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from csihar import autodiff as ad
from csihar.autodiff import Tape, Tensor, backward
from csihar.csi import ACTIVITIES, downsample, make_windows, synth_recording
from csihar.errors import ConfigError, ContractError, DatasetError, FormatError

KL_FLOOR = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.006540
    epochs: int = 35
    step: int = 5
    hidden_dim: int = 50
    epoch_annealing: int = 30
    reset_mechanism: str = "zero"
    last_channel: int = 65
    seed: int = 0
    batch_size: int = 16
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.epoch_annealing <= self.epochs:
            raise ConfigError(f"epoch_annealing {self.epoch_annealing} must lie in [0, epochs={self.epochs}]")
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ConfigError(f"lr must be finite and >= 0, got {self.lr}")
        if self.batch_size < 1 or self.step < 1 or self.hidden_dim < 1:
            raise ConfigError("batch_size, step and hidden_dim must be >= 1")
        if self.reset_mechanism not in ("zero", "subtract"):
            raise ConfigError(f"reset_mechanism must be zero or subtract, got {self.reset_mechanism!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")


SNN_CONFIG = TrainConfig()
CNN_CONFIG = TrainConfig(lr=0.000306, epoch_annealing=27)


def parse_config(text: str, base: TrainConfig = SNN_CONFIG) -> TrainConfig:
    """Read ``key = value`` lines (``#`` comments) over ``base``."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            updates[key] = int(value) if kind == "int" else float(value) if kind == "float" else value.strip("'\"")
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
    return replace(base, **updates)


def load_config(path, base: TrainConfig = SNN_CONFIG) -> TrainConfig:
    return parse_config(Path(path).read_text(), base)


# -- loss ------------------------------------------------------------------------


def annealing_weight(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    if config.epoch_annealing == 0:
        return 1.0
    return min(1.0, epoch / config.epoch_annealing)


def loss_annealed(pred: Tensor, target, epoch: int, config: TrainConfig) -> Tensor:
    """Batch mean of squared error plus the annealed KL(target || pred).

    ``pred`` and ``target`` are ``[batch, classes]`` (or a single row).
    """
    lam = annealing_weight(epoch, config)
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.data.ndim == 1:
        pred = ad.reshape(pred, (1, -1))
    if t.shape != pred.shape:
        raise ContractError(f"target shape {t.shape} does not match prediction {pred.shape}")
    d = ad.sub(pred, Tensor(t))
    total = ad.sum(ad.mul(d, d))
    if lam > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            entropy = float(np.where(t > 0, t * np.log(t), 0.0).sum())
        cross = ad.sum(ad.mul(Tensor(t), ad.log(ad.clamp_min(pred, KL_FLOOR))))
        total = ad.add(total, ad.scale(ad.sub(Tensor(entropy), cross), lam))
    return ad.scale(total, 1.0 / pred.shape[0])


# -- datasets --------------------------------------------------------------------


@dataclass
class WindowSet:
    """Windows ``[n, frames, subcarriers, antennas]`` with labels and provenance."""

    x: np.ndarray
    y: np.ndarray
    recording: np.ndarray  # index of the source recording
    index: np.ndarray  # window index within its recording
    classes: tuple[str, ...] = ACTIVITIES

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, mask) -> "WindowSet":
        return WindowSet(self.x[mask], self.y[mask], self.recording[mask], self.index[mask], self.classes)


def synthetic_windows(
    activities: Sequence[str] = ACTIVITIES,
    seed: int = 0,
    subcarriers: int = 64,
    antennas: int = 4,
    duration_s: float = 80.0,
    factor: int = 5,
    window: int = 90,
    noise_std: float = 0.3,
) -> WindowSet:
    """One synthetic recording per activity, mean-downsampled and cut into
    non-overlapping windows (26 per 80 s recording)."""
    xs, ys, recs, idx = [], [], [], []
    for r, act in enumerate(activities):
        rec, _ = synth_recording(
            act, duration_s=duration_s, subcarriers=subcarriers, antennas=antennas,
            seed=seed * 1000 + r, noise_std=noise_std,
        )  # fmt: skip
        for i, w in enumerate(make_windows(downsample(rec, factor, "mean"), window, window)):
            xs.append(w.data)
            ys.append(r)
            recs.append(r)
            idx.append(i)
    return WindowSet(np.stack(xs), np.array(ys), np.array(recs), np.array(idx), tuple(activities))


def split_by_index(data: WindowSet, train_fraction: float = 0.8) -> tuple[WindowSet, WindowSet]:
    """Per recording, the first ``floor(train_fraction * n)`` windows train and the rest test."""
    train = np.zeros(len(data), dtype=bool)
    for r in np.unique(data.recording):
        sel = data.recording == r
        n = int(sel.sum())
        train[sel] = data.index[sel] < math.floor(train_fraction * n)
    return data.subset(train), data.subset(~train)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=(0, 1))
        std = x.std(axis=(0, 1))
        return cls(mean, np.where(std > 0, std, 1.0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


# -- training --------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    history: list[float] = field(default_factory=list)


def check_classes(data: WindowSet, n_classes: int) -> None:
    if len(data) == 0:
        raise DatasetError("training set is empty")
    missing = sorted(set(range(n_classes)) - set(data.y.tolist()))
    if missing:
        raise DatasetError(f"no training windows for classes {[data.classes[i] for i in missing]}")


def _optimizer(params, config: TrainConfig):
    if config.optimizer == "adam":
        return ad.Adam(params, config.lr)
    return ad.SGD(params, config.lr)


def train_loop(
    params: dict[str, Tensor],
    n_items: int,
    batch_loss: Callable[[dict[str, Tensor], np.ndarray, int], Tensor],
    config: TrainConfig,
) -> TrainResult:
    """Seeded mini-batch loop; ``batch_loss(params, indices, epoch)`` builds the loss."""
    names = list(params)
    opt = _optimizer([params[k] for k in names], config)
    rng = np.random.default_rng([config.seed, 3])
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n_items)
        total = 0.0
        for start in range(0, n_items, config.batch_size):
            idx = order[start : start + config.batch_size]
            with Tape() as tape:
                loss = batch_loss(params, idx, epoch)
            grads = backward(tape, loss, [params[k] for k in names])
            total += loss.item() * len(idx)
            params = dict(zip(names, opt.step(grads)))
        history.append(total / n_items)
    return TrainResult(params, history)


def train_classifier(
    forward: Callable[[Tensor, dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    data: WindowSet,
    config: TrainConfig,
) -> TrainResult:
    """Minimise :func:`loss_annealed` of ``forward(x, params)`` on ``data``."""
    n_classes = len(data.classes)
    check_classes(data, n_classes)
    onehot = np.eye(n_classes)[data.y]

    def batch_loss(p, idx, epoch):
        return loss_annealed(forward(Tensor(data.x[idx]), p), onehot[idx], epoch, config)

    return train_loop(params, len(data), batch_loss, config)


# -- evaluation ------------------------------------------------------------------


@dataclass
class EvalReport:
    confusion: np.ndarray  # rows: true class, columns: predicted class
    classes: tuple[str, ...]

    @property
    def accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else 0.0

    @property
    def recall(self) -> np.ndarray:
        support = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(support > 0, np.diag(self.confusion) / np.maximum(support, 1), 0.0)


def evaluate_scores(scores: np.ndarray, labels: np.ndarray, classes: Sequence[str]) -> EvalReport:
    """Confusion matrix of ``argmax`` predictions (ties go to the lowest index)."""
    pred = np.argmax(np.asarray(scores), axis=1)
    k = len(classes)
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (np.asarray(labels), pred), 1)
    return EvalReport(conf, tuple(classes))


def predict(forward, params, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = [forward(Tensor(x[i : i + batch_size]), params).data for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def evaluate(forward, params, data: WindowSet) -> EvalReport:
    return evaluate_scores(predict(forward, params, data.x), data.y, data.classes)


# -- report files ----------------------------------------------------------------


def write_confusion_csv(report: EvalReport, path) -> None:
    """Header of class names, then one row of integer counts per true class."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(report.classes)
        w.writerows(report.confusion.tolist())


def read_confusion_csv(path) -> EvalReport:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise FormatError(f"{path}: empty confusion file")
    classes, body = tuple(rows[0]), rows[1:]
    k = len(classes)
    if len(body) != k or any(len(r) != k for r in body):
        raise FormatError(f"{path}: expected {k} rows of {k} counts")
    try:
        conf = np.array([[int(v) for v in r] for r in body], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer count ({exc})") from None
    if (conf < 0).any():
        raise FormatError(f"{path}: negative count")
    return EvalReport(conf.reshape(k, k), classes)


def write_metrics_csv(metrics: dict[str, float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for name, value in metrics.items():
            w.writerow([name, repr(float(value)) if isinstance(value, float) else value])


def read_metrics_csv(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        return {r[0]: r[1] for r in csv.reader(fh) if r}

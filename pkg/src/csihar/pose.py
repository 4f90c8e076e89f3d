"""Limb angles, per-window movement metrics, binary movement events and a
configurable decision tree that labels activities from those metrics."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from csihar.causal import EventPanel
from csihar.csi import PoseSequence
from csihar.errors import ConfigError, ContractError
from csihar.resources import data_text
from csihar.synthetic import GROUPS, LIMB_JOINTS, LIMBS

METRICS = ("rom", "mcd")
# (event name, group, level) in the fixed column order of an event series
EVENTS = (
    ("move_upperarms", "upper_arms", "base"),
    ("move_forearms_a_lot", "forearms", "a_lot"),
    ("move_forearms", "forearms", "base"),
    ("move_upperleg_a_lot", "upper_legs", "a_lot"),
    ("move_upperleg", "upper_legs", "base"),
    ("move_lowerleg", "lower_legs", "base"),
)
EVENT_NAMES = tuple(e[0] for e in EVENTS)


def limb_angles(pose: PoseSequence) -> dict[str, np.ndarray]:
    """``atan2(dy, dx)`` from the proximal to the distal joint of each limb, in (-pi, pi].

    Frames where the two joints coincide repeat the previous frame's angle (0 at frame 0).
    """
    kp = pose.keypoints
    out = {}
    for limb in LIMBS:
        a, b = LIMB_JOINTS[limb]
        d = kp[:, b] - kp[:, a]
        theta = np.arctan2(d[:, 1], d[:, 0])
        theta[theta == -math.pi] = math.pi
        degenerate = (d[:, 0] == 0) & (d[:, 1] == 0)
        if degenerate.any():
            prev = 0.0
            for i in range(len(theta)):
                if degenerate[i]:
                    theta[i] = prev
                prev = theta[i]
        out[limb] = theta
    return out


def _arc(diff: np.ndarray) -> np.ndarray:
    """Absolute angular difference along the shorter arc, in [0, pi]."""
    d = np.abs(diff) % (2 * math.pi)
    return np.minimum(d, 2 * math.pi - d)


@dataclass(frozen=True)
class MovementFeatures:
    """Per-group range of motion (radians) and mean consecutive change (radians/frame)."""

    rom: Mapping[str, float]
    mcd: Mapping[str, float]

    def get(self, name: str) -> float:
        """Look up ``<group>.<metric>``, e.g. ``forearms.mcd``."""
        group, _, metric = name.partition(".")
        table = {"rom": self.rom, "mcd": self.mcd}.get(metric)
        if table is None or group not in table:
            raise ConfigError(f"unknown feature {name!r}; expected <group>.rom or <group>.mcd")
        return table[group]

    def as_dict(self) -> dict[str, float]:
        return {f"{g}.{m}": self.get(f"{g}.{m}") for g in GROUPS for m in METRICS}


def movement_features(angles: Mapping[str, np.ndarray], window: int) -> list[MovementFeatures]:
    """Metrics over consecutive non-overlapping windows (a trailing partial window is dropped).

    A group's value is the mean over its left and right limbs.
    """
    if window < 2:
        raise ContractError(f"window must be >= 2 frames, got {window}")
    n = min(len(v) for v in angles.values())
    out = []
    for start in range(0, n - window + 1, window):
        rom, mcd = {}, {}
        for group, limbs in GROUPS.items():
            seg = [np.asarray(angles[limb][start : start + window], dtype=np.float64) for limb in limbs]
            rom[group] = float(np.mean([s.max() - s.min() for s in seg]))
            mcd[group] = float(np.mean([_arc(np.diff(s)).mean() for s in seg]))
        out.append(MovementFeatures(rom, mcd))
    return out


# -- events ----------------------------------------------------------------------


@dataclass(frozen=True)
class EventThresholds:
    """MCD thresholds per ``(group, level)``; ``a_lot`` must not be below ``base``."""

    values: Mapping[tuple[str, str], float]

    def __post_init__(self):
        for _, group, level in EVENTS:
            if (group, level) not in self.values:
                raise ConfigError(f"missing threshold {group}.{level}")
        for (group, level), v in self.values.items():
            if not math.isfinite(v):
                raise ConfigError(f"threshold {group}.{level} must be finite")
            if level == "a_lot" and v < self.values.get((group, "base"), -math.inf):
                raise ConfigError(f"{group}.a_lot = {v} is below {group}.base = {self.values[(group, 'base')]}")

    @classmethod
    def parse(cls, text: str) -> "EventThresholds":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.fullmatch(r"(\w+)\.(base|a_lot)\s*=\s*(\S+)", line)
            if not m or m.group(1) not in GROUPS:
                raise ConfigError(f"line {lineno}: expected '<group>.<base|a_lot> = value', got {raw!r}")
            try:
                values[(m.group(1), m.group(2))] = float(m.group(3))
            except ValueError:
                raise ConfigError(f"line {lineno}: bad threshold {m.group(3)!r}") from None
        return cls(values)


DEFAULT_THRESHOLDS = EventThresholds.parse(data_text("event_thresholds.txt"))


@dataclass(frozen=True)
class BinaryEventSeries:
    events: np.ndarray  # bool [steps, len(EVENT_NAMES)]
    names: tuple[str, ...] = EVENT_NAMES

    def column(self, name: str) -> np.ndarray:
        return self.events[:, self.names.index(name)]


def binarize_events(
    features: Sequence[MovementFeatures], thresholds: EventThresholds = DEFAULT_THRESHOLDS
) -> BinaryEventSeries:
    """One row per sub-interval: an event holds when the group's MCD is strictly above its threshold."""
    rows = np.zeros((len(features), len(EVENTS)), dtype=bool)
    for i, f in enumerate(features):
        for j, (_, group, level) in enumerate(EVENTS):
            rows[i, j] = f.mcd[group] > thresholds.values[(group, level)]
    return BinaryEventSeries(rows)


# -- decision tree ---------------------------------------------------------------


@dataclass(frozen=True)
class TreeNode:
    feature: str | None = None
    threshold: float = 0.0
    above: "TreeNode | None" = None
    otherwise: "TreeNode | None" = None
    label: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.label is not None


_NODE = re.compile(r"feature\s+(\S+)\s*>\s*(\S+)\s*\?")
_LEAF = re.compile(r"->\s*(\w+)")


def parse_tree(text: str) -> TreeNode:
    """Indented tree: ``feature <name> > <threshold> ?`` lines take two children
    (the branch for a true test first), ``-> <label>`` lines are leaves."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].rstrip()
        if body.strip():
            lines.append((lineno, len(body) - len(body.lstrip()), body.strip()))
    if not lines:
        raise ConfigError("empty decision tree")
    pos = 0

    def node(indent: int) -> TreeNode:
        nonlocal pos
        if pos >= len(lines):
            raise ConfigError(f"decision tree ends early: a node at indent {indent} is missing a child")
        lineno, ind, text_ = lines[pos]
        if ind != indent:
            raise ConfigError(f"line {lineno}: expected indent {indent}, found {ind}")
        pos += 1
        if m := _LEAF.fullmatch(text_):
            return TreeNode(label=m.group(1))
        m = _NODE.fullmatch(text_)
        if not m:
            raise ConfigError(f"line {lineno}: expected 'feature <name> > <threshold> ?' or '-> <label>'")
        name = m.group(1)
        _check_feature_name(name, lineno)
        try:
            thr = float(m.group(2))
        except ValueError:
            raise ConfigError(f"line {lineno}: bad threshold {m.group(2)!r}") from None
        if pos >= len(lines) or lines[pos][1] <= indent:
            raise ConfigError(f"line {lineno}: node needs two indented children")
        child_indent = lines[pos][1]
        return TreeNode(name, thr, node(child_indent), node(child_indent))

    root = node(lines[0][1])
    if pos != len(lines):
        raise ConfigError(f"line {lines[pos][0]}: unexpected extra line after the tree")
    return root


def _check_feature_name(name: str, lineno: int) -> None:
    group, _, metric = name.partition(".")
    if group not in GROUPS or metric not in METRICS:
        raise ConfigError(f"line {lineno}: unknown feature {name!r}")


DEFAULT_TREE = parse_tree(data_text("activity_tree.txt"))


def decision_tree_label(features: MovementFeatures | Mapping[str, float], tree: TreeNode = DEFAULT_TREE) -> str:
    lookup = features.get if isinstance(features, MovementFeatures) else None
    node = tree
    while not node.is_leaf:
        if lookup is not None:
            value = lookup(node.feature)
        elif node.feature in features:
            value = features[node.feature]
        else:
            raise ConfigError(f"feature {node.feature!r} missing from input")
        node = node.above if value > node.threshold else node.otherwise
    return node.label


def event_panel(
    pose: PoseSequence, window: int = 9, thresholds: EventThresholds = DEFAULT_THRESHOLDS
) -> EventPanel:
    """Binary event panel of a pose sequence, one step per ``window`` frames."""
    series = binarize_events(movement_features(limb_angles(pose), window), thresholds)
    return EventPanel(series.names, series.events.astype(np.int8))

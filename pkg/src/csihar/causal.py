"""Lagged causal discovery over binary event panels.

Dependence is measured by plug-in conditional mutual information (bits) and
tested with a local shuffle: the source is permuted within strata of identical
conditioning values.  Parents are selected PC-style (size 0, 1, 2 condition
sets drawn from the strongest remaining candidates) and each surviving link is
confirmed by a momentary conditional independence (MCI) test that conditions
on the parents of both ends.
"""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from csihar.errors import ConfigError, ContractError, FormatError

MAX_CONDITIONS = 3
TIE_TOL = 1e-12  # permuted CMI within this of the observed value counts as reaching it

Lagged = tuple[str, int]  # (variable, lag); lag 0 is the present step


@dataclass(frozen=True)
class EventPanel:
    """Binary time series ``values[steps, variables]``."""

    variables: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[1] != len(self.variables):
            raise ContractError(f"values must be [steps, {len(self.variables)}], got {v.shape}")
        if len(set(self.variables)) != len(self.variables):
            raise ContractError("variable names must be unique")
        if not np.isin(v, (0, 1)).all():
            raise ContractError("panel values must be 0 or 1")
        object.__setattr__(self, "values", v.astype(np.int8))
        object.__setattr__(self, "variables", tuple(self.variables))

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.variables.index(name)]
        except ValueError:
            raise ContractError(f"unknown variable {name!r}") from None

    def lagged(self, var: Lagged, start: int) -> np.ndarray:
        """Values of ``var`` at steps ``t - lag`` for ``t`` in ``[start, steps)``."""
        name, lag = var
        col = self.column(name)
        return col[start - lag : self.steps - lag]


# -- CMI -------------------------------------------------------------------------


def _codes(panel: EventPanel, vars_: Sequence[Lagged], start: int) -> np.ndarray:
    """Joint state index of several binary variables per aligned row."""
    code = np.zeros(panel.steps - start, dtype=np.int64)
    for v in vars_:
        code = code * 2 + panel.lagged(v, start)
    return code


def _cmi_from_codes(x: np.ndarray, y: np.ndarray, z: np.ndarray, nz: int) -> np.ndarray:
    """Plug-in I(X;Y|Z) in bits for binary ``x``/``y``; ``x`` may be ``[batch, n]``."""
    x = np.atleast_2d(x)
    batch, n = x.shape
    cell = (z * 4 + y * 2)[None, :] + x  # index into [nz, 2(y), 2(x)]
    flat = (np.arange(batch)[:, None] * nz * 4 + cell).ravel()
    counts = np.bincount(flat, minlength=batch * nz * 4).reshape(batch, nz, 2, 2).astype(np.float64)
    n_z = counts.sum(axis=(2, 3), keepdims=True)
    n_yz = counts.sum(axis=3, keepdims=True)
    n_xz = counts.sum(axis=2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = counts * np.log2(counts * n_z / (n_xz * n_yz))
    return np.maximum(np.where(counts > 0, terms, 0.0).sum(axis=(1, 2, 3)) / n, 0.0)


def _aligned(panel: EventPanel, x: Lagged, y: Lagged, z: Sequence[Lagged]):
    if len(z) > MAX_CONDITIONS:
        raise ContractError(f"at most {MAX_CONDITIONS} conditioning variables, got {len(z)}")
    lags = [x[1], y[1], *(v[1] for v in z)]
    if min(lags) < 0:
        raise ContractError("lags must be >= 0")
    start = max(lags)
    if start >= panel.steps:
        raise ContractError(f"lag {start} leaves no aligned rows in a {panel.steps}-step panel")
    xs = panel.lagged(x, start)
    ys = panel.lagged(y, start)
    zs = _codes(panel, z, start)
    return xs, ys, zs, 2 ** len(z)


def cmi_plugin(panel: EventPanel, x: Lagged, y: str | Lagged, z: Sequence[Lagged] = ()) -> float:
    """I(x; y | z) in bits over rows where every lagged variable is defined."""
    y = (y, 0) if isinstance(y, str) else y
    xs, ys, zs, nz = _aligned(panel, x, y, z)
    return float(_cmi_from_codes(xs, ys, zs, nz)[0])


@dataclass(frozen=True)
class ShuffleTest:
    cmi: float
    p_value: float
    degenerate: bool = False  # every conditioning stratum held a single row


def local_shuffle_pvalue(
    panel: EventPanel,
    x: Lagged,
    y: str | Lagged,
    z: Sequence[Lagged] = (),
    permutations: int = 199,
    seed: int | Sequence[int] = 0,
) -> ShuffleTest:
    """Permutation p-value ``(1 + #{perm >= observed}) / (B + 1)``.

    ``x`` is shuffled within groups of rows sharing the same ``z`` values, which
    keeps ``x``'s dependence on ``z`` while breaking any link to ``y`` beyond it.
    """
    if permutations < 99:
        raise ContractError(f"at least 99 permutations are needed, got {permutations}")
    y = (y, 0) if isinstance(y, str) else y
    xs, ys, zs, nz = _aligned(panel, x, y, z)
    observed = float(_cmi_from_codes(xs, ys, zs, nz)[0])
    sizes = np.bincount(zs, minlength=nz)
    if sizes.max() <= 1:
        return ShuffleTest(observed, 1.0, degenerate=True)
    rng = np.random.default_rng(seed)
    order = np.argsort(zs, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    perm_x = np.empty((permutations, len(xs)), dtype=xs.dtype)
    keys = rng.random((permutations, len(xs)))
    for s in range(nz):
        lo, hi = bounds[s], bounds[s + 1]
        if hi - lo == 0:
            continue
        rows = order[lo:hi]
        shuffled = np.argsort(keys[:, lo:hi], axis=1)
        perm_x[:, rows] = xs[rows][shuffled]
    null = _cmi_from_codes(perm_x, ys, zs, nz)
    exceed = int(np.sum(null >= observed - TIE_TOL))
    return ShuffleTest(observed, (1 + exceed) / (permutations + 1))


# -- discovery -------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    lag: int
    cmi_bits: float
    p_value: float


@dataclass(frozen=True)
class CausalGraph:
    variables: tuple[str, ...]
    edges: tuple[Edge, ...]

    def links(self) -> set[tuple[str, str, int]]:
        return {(e.source, e.target, e.lag) for e in self.edges}


def _test_seed(seed: int, stage: str, x: Lagged, target: str, z: Sequence[Lagged]) -> list[int]:
    """Per-test seed derived from names, so results do not depend on variable order."""
    key = f"{stage}|{x[0]}|{x[1]}|{target}|" + ",".join(f"{n}:{l}" for n, l in sorted(z))
    return [seed, zlib.crc32(key.encode())]


def _select_parents(panel, target, max_lag, alpha, permutations, seed) -> dict[Lagged, float]:
    """PC-style pruning; returns surviving candidates with their weakest observed CMI."""
    cands = {(v, lag): np.inf for v in panel.variables for lag in range(1, max_lag + 1)}

    def ranked():
        return sorted(cands, key=lambda c: (-cands[c], c))

    for size in range(0, 3):
        if len(cands) <= size:
            break
        order = ranked()
        drop = []
        for c in order:
            cond = [o for o in order if o != c][:size]
            res = local_shuffle_pvalue(panel, c, target, cond, permutations, _test_seed(seed, "pc", c, target, cond))
            if res.p_value > alpha:
                drop.append(c)
            else:
                cands[c] = min(cands[c], res.cmi)
        for c in drop:
            del cands[c]
    return cands


def discover_lagged_parents(
    panel: EventPanel, max_lag: int = 3, alpha: float = 0.01, permutations: int = 199, seed: int = 0
) -> CausalGraph:
    """Lagged links ``source[t - lag] -> target[t]`` for lags ``1..max_lag``.

    MCI conditions on the two strongest other parents of the target and the
    strongest parent of the source (shifted by the link's lag).
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if max_lag < 1:
        raise ConfigError(f"max_lag must be >= 1, got {max_lag}")
    if panel.steps < max(50, max_lag + 2):
        raise ContractError(f"discovery needs at least 50 steps, got {panel.steps}")
    parents = {
        v: _select_parents(panel, v, max_lag, alpha, permutations, seed) for v in panel.variables
    }

    def strongest(var):
        return sorted(parents[var], key=lambda c: (-parents[var][c], c))

    edges = []
    for target in sorted(panel.variables):
        for src in sorted(parents[target]):
            name, lag = src
            cond = [p for p in strongest(target) if p != src][:2]
            cond += [(n, l + lag) for n, l in strongest(name)[:1] if (n, l + lag) not in cond]
            res = local_shuffle_pvalue(panel, src, target, cond, permutations, _test_seed(seed, "mci", src, target, cond))
            if res.p_value <= alpha:
                edges.append(Edge(name, target, lag, res.cmi, res.p_value))
    return CausalGraph(panel.variables, tuple(edges))


# -- rules -----------------------------------------------------------------------


def _predicate(var: str) -> str:
    return var if var.startswith("move_") else f"move_{var}"


def graph_to_temporal_rules(graph: CausalGraph | Iterable[Edge], activity: str) -> str:
    """Rule skeleton: per target, ``activity(X,<activity>)`` holds when every
    incoming source holds at its lag (``<pred>_<lag>(X,yes)``).  Neural
    declarations for the source predicates are emitted first."""
    edges = list(graph.edges if isinstance(graph, CausalGraph) else graph)
    if not edges:
        return "% no edges found\n"
    sources = sorted({_predicate(e.source) for e in edges})
    lines = [f"nn({p}_net, [X], Y, [yes, no]) :: {p}(X, Y)." for p in sources]
    targets = list(dict.fromkeys(e.target for e in edges))
    for target in targets:
        body = [f"{_predicate(e.source)}_{e.lag}(X,yes)" for e in edges if e.target == target]
        lines.append(f"% from links into {target}")
        lines.append(f"activity(X,{activity}) :- " + ",\n    ".join(body) + ".")
    return "\n".join(lines) + "\n"


# -- files -----------------------------------------------------------------------


def read_panel_csv(path) -> EventPanel:
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError(f"{path}: empty panel file")
    header = [h.strip() for h in rows[0]]
    values = []
    for i, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}: line {i} has {len(row)} fields, expected {len(header)}")
        try:
            values.append([int(v) for v in row])
        except ValueError:
            raise FormatError(f"{path}: line {i} holds a non-integer value") from None
    try:
        return EventPanel(tuple(header), np.array(values, dtype=np.int64).reshape(-1, len(header)))
    except ContractError as err:
        raise FormatError(f"{path}: {err}") from None


def write_panel_csv(panel: EventPanel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(panel.variables)
        w.writerows(panel.values.tolist())


def write_graph_csv(graph: CausalGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target", "lag", "cmi_bits", "p_value"])
        for e in graph.edges:
            w.writerow([e.source, e.target, e.lag, repr(e.cmi_bits), repr(e.p_value)])


def read_graph_csv(path) -> list[Edge]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [Edge(r["source"], r["target"], int(r["lag"]), float(r["cmi_bits"]), float(r["p_value"])) for r in rows]
    except (KeyError, ValueError) as err:
        raise FormatError(f"{path}: malformed graph file ({err})") from None


# -- synthetic panels ------------------------------------------------------------


def copy_panel(steps: int = 500, seed: int = 0, lag: int = 1) -> EventPanel:
    """``x`` fair coin flips, ``y[t] = x[t - lag]`` (``y`` starts with fresh flips)."""
    rng = np.random.default_rng([seed, 11])
    x = rng.integers(0, 2, size=steps)
    y = np.concatenate([rng.integers(0, 2, size=lag), x[: steps - lag]])
    return EventPanel(("x", "y"), np.stack([x, y], axis=1))


def independent_panel(steps: int = 500, seed: int = 0, variables: Sequence[str] = ("x", "y")) -> EventPanel:
    rng = np.random.default_rng([seed, 13])
    return EventPanel(tuple(variables), rng.integers(0, 2, size=(steps, len(variables))))

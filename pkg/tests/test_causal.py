import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csihar.causal import (
    CausalGraph,
    Edge,
    EventPanel,
    cmi_plugin,
    copy_panel,
    discover_lagged_parents,
    graph_to_temporal_rules,
    independent_panel,
    local_shuffle_pvalue,
    read_graph_csv,
    read_panel_csv,
    write_graph_csv,
    write_panel_csv,
)
from csihar.errors import ConfigError, ContractError, FormatError
from csihar.rules import TemporalBinding, ground_and_compile, parse_program


def brute_cmi(x, y, z):
    """Reference plug-in CMI in bits from explicit probability tables."""
    n = len(x)
    total = 0.0
    for zv in set(z):
        pz = sum(1 for v in z if v == zv) / n
        for xv in (0, 1):
            for yv in (0, 1):
                pxyz = sum(1 for a, b, c in zip(x, y, z) if (a, b, c) == (xv, yv, zv)) / n
                pxz = sum(1 for a, c in zip(x, z) if (a, c) == (xv, zv)) / n
                pyz = sum(1 for b, c in zip(y, z) if (b, c) == (yv, zv)) / n
                if pxyz > 0:
                    total += pxyz * math.log2(pz * pxyz / (pxz * pyz))
    return total


# -- CMI -------------------------------------------------------------------------


def test_exact_independent_counts_give_zero():
    x = [0] * 50 + [1] * 50
    y = ([0] * 25 + [1] * 25) * 2
    panel = EventPanel(("x", "y"), np.array([x, y]).T)
    assert cmi_plugin(panel, ("x", 0), "y") == 0.0


def test_lagged_copy_carries_one_bit():
    x = np.array([0, 1] * 50 + [1, 0] * 50 + [0, 0, 1, 1] * 25 + [1])
    y = np.concatenate([[0], x[:-1]])
    panel = EventPanel(("x", "y"), np.stack([x, y], axis=1))
    assert x[:-1].mean() == 0.5
    assert cmi_plugin(panel, ("x", 1), "y") == pytest.approx(1.0, abs=1e-12)


def test_dependence_through_mediator_vanishes():
    rng = np.random.default_rng(0)
    z = rng.integers(0, 2, size=400)
    x = z.copy()
    y = np.where(rng.random(400) < 0.8, z, 1 - z)
    panel = EventPanel(("x", "y", "z"), np.stack([x, y, z], axis=1))
    assert cmi_plugin(panel, ("x", 0), "y") > 0.1
    assert cmi_plugin(panel, ("x", 0), "y", [("z", 0)]) == 0.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), nz=st.integers(0, 3), n=st.integers(5, 60))
def test_cmi_matches_reference(seed, nz, n):
    rng = np.random.default_rng(seed)
    vals = rng.integers(0, 2, size=(n, 2 + nz))
    names = tuple(f"v{i}" for i in range(2 + nz))
    panel = EventPanel(names, vals)
    z = [(f"v{i + 2}", 0) for i in range(nz)]
    zcode = [tuple(row) for row in vals[:, 2:]]
    expected = brute_cmi(vals[:, 0].tolist(), vals[:, 1].tolist(), zcode)
    got = cmi_plugin(panel, ("v0", 0), "v1", z)
    assert got >= 0 and got == pytest.approx(expected, abs=1e-12)
    # symmetric in x and y
    assert cmi_plugin(panel, ("v1", 0), "v0", z) == pytest.approx(got, abs=1e-12)


def test_cmi_contracts():
    panel = independent_panel(20, 0, ("a", "b", "c", "d", "e"))
    with pytest.raises(ContractError):
        cmi_plugin(panel, ("a", 0), "b", [("c", 0), ("d", 0), ("e", 0), ("c", 1)])
    with pytest.raises(ContractError):
        cmi_plugin(panel, ("a", 20), "b")
    with pytest.raises(ContractError):
        cmi_plugin(panel, ("nope", 1), "b")
    with pytest.raises(ContractError):
        EventPanel(("a",), np.array([[2]]))


# -- shuffle test ----------------------------------------------------------------


def test_copy_reaches_minimum_p_value():
    res = local_shuffle_pvalue(copy_panel(500, 0), ("x", 1), "y", permutations=199, seed=0)
    assert res.p_value == 1 / 200 and res.cmi > 0.99


def test_constant_source_gives_p_one():
    panel = EventPanel(("x", "y"), np.stack([np.zeros(100, int), np.arange(100) % 2], axis=1))
    res = local_shuffle_pvalue(panel, ("x", 1), "y", permutations=99)
    assert res.cmi == 0.0 and res.p_value == 1.0


def test_singleton_strata_are_flagged():
    panel = EventPanel(("x", "y", "a", "b", "c"), np.array([[0, 1, 0, 0, 0], [1, 0, 1, 1, 1]]))
    res = local_shuffle_pvalue(panel, ("x", 0), "y", [("a", 0), ("b", 0), ("c", 0)], permutations=99)
    assert res.degenerate and res.p_value == 1.0


def test_shuffle_deterministic_and_validated():
    panel = independent_panel(200, 3)
    a = local_shuffle_pvalue(panel, ("x", 2), "y", [("y", 1)], permutations=99, seed=5)
    assert a == local_shuffle_pvalue(panel, ("x", 2), "y", [("y", 1)], permutations=99, seed=5)
    with pytest.raises(ContractError):
        local_shuffle_pvalue(panel, ("x", 1), "y", permutations=10)


def test_shuffle_preserves_strata():
    # y is a copy of z; x given z carries nothing, so p stays large
    rng = np.random.default_rng(1)
    z = rng.integers(0, 2, 300)
    x = np.where(rng.random(300) < 0.9, z, 1 - z)
    panel = EventPanel(("x", "y", "z"), np.stack([x, z, z], axis=1))
    assert local_shuffle_pvalue(panel, ("x", 0), "y", permutations=199).p_value == 1 / 200
    assert local_shuffle_pvalue(panel, ("x", 0), "y", [("z", 0)], permutations=199).p_value == 1.0


def test_null_rejection_rate():
    rejections = sum(
        local_shuffle_pvalue(independent_panel(500, s), ("x", 1), "y", permutations=199, seed=s).p_value <= 0.05
        for s in range(100)
    )
    assert rejections <= 10


# -- discovery -------------------------------------------------------------------


def test_copy_panel_graph():
    g = discover_lagged_parents(copy_panel(500, 0), max_lag=3, alpha=0.01, permutations=199, seed=0)
    assert g.links() == {("x", "y", 1)}
    (edge,) = g.edges
    assert edge.cmi_bits > 0.99 and 0 <= edge.p_value <= 0.01


def test_independent_panels_mostly_empty():
    empty = sum(
        not discover_lagged_parents(independent_panel(500, s), alpha=0.01, permutations=199, seed=s).edges
        for s in range(100)
    )
    assert empty >= 95


def noisy_copy(src, rng, flip=0.1):
    out = np.concatenate([[0], src[:-1]])
    return np.where(rng.random(len(src)) < flip, 1 - out, out)


def test_chain_drops_indirect_link():
    rng = np.random.default_rng(7)
    a = rng.integers(0, 2, 600)
    b = noisy_copy(a, rng)
    c = noisy_copy(b, rng)
    panel = EventPanel(("a", "b", "c"), np.stack([a, b, c], axis=1))
    assert cmi_plugin(panel, ("a", 2), "c") > 0.1
    assert discover_lagged_parents(panel, seed=1).links() == {("a", "b", 1), ("b", "c", 1)}


def test_noise_free_chain_never_keeps_indirect_link():
    rng = np.random.default_rng(7)
    a = rng.integers(0, 2, 600)
    b = np.concatenate([[0], a[:-1]])
    c = np.concatenate([[0], b[:-1]])
    g = discover_lagged_parents(EventPanel(("a", "b", "c"), np.stack([a, b, c], axis=1)), seed=1)
    assert ("a", "c", 2) not in g.links() and ("a", "b", 1) in g.links()


def test_variable_order_does_not_matter():
    p = copy_panel(300, 4)
    swapped = EventPanel(("y", "x"), p.values[:, ::-1])
    a = discover_lagged_parents(p, seed=2)
    b = discover_lagged_parents(swapped, seed=2)
    assert a.links() == b.links()


def test_discovery_validation():
    with pytest.raises(ConfigError):
        discover_lagged_parents(copy_panel(100), alpha=1.0)
    with pytest.raises(ConfigError):
        discover_lagged_parents(copy_panel(100), alpha=0.0)
    with pytest.raises(ContractError):
        discover_lagged_parents(copy_panel(40))


# -- rule emission ---------------------------------------------------------------


def walk_edges():
    return [Edge("upper_legs", "walk", lag, 0.5, 0.005) for lag in (1, 2, 3)] + [Edge("upper_arms", "walk", 1, 0.3, 0.005)]


def test_walk_template():
    text = graph_to_temporal_rules(walk_edges(), "walk")
    program = parse_program(text)
    (clause,) = program.clauses
    assert str(clause.head) == "activity(X,walk)"
    assert {(a.pred, a.args[1]) for a in clause.body} == {
        ("move_upper_legs_1", "yes"), ("move_upper_legs_2", "yes"),
        ("move_upper_legs_3", "yes"), ("move_upper_arms_1", "yes"),
    }  # fmt: skip
    ground_and_compile(program, "activity(w, walk)", TemporalBinding.infer(program))


def test_empty_graph():
    assert graph_to_temporal_rules([], "walk") == "% no edges found\n"
    assert graph_to_temporal_rules(CausalGraph(("x",), ()), "walk") == "% no edges found\n"


def test_single_edge():
    program = parse_program(graph_to_temporal_rules([Edge("forearms", "clap", 2, 0.1, 0.01)], "clap"))
    assert [len(c.body) for c in program.clauses] == [1]


# -- files -----------------------------------------------------------------------


def test_panel_csv_round_trip(tmp_path):
    panel = independent_panel(30, 2, ("a", "b", "c"))
    path = tmp_path / "p.csv"
    write_panel_csv(panel, path)
    assert path.read_text().splitlines()[0] == "a,b,c"
    again = read_panel_csv(path)
    assert again.variables == panel.variables and np.array_equal(again.values, panel.values)
    path.write_text("a,b\n0,1\n2,0\n")
    with pytest.raises(FormatError):
        read_panel_csv(path)
    path.write_text("a,b\n0\n")
    with pytest.raises(FormatError):
        read_panel_csv(path)


def test_graph_csv_round_trip(tmp_path):
    g = CausalGraph(("upper_legs", "walk"), tuple(walk_edges()))
    path = tmp_path / "g.csv"
    write_graph_csv(g, path)
    assert path.read_text().splitlines()[0] == "source,target,lag,cmi_bits,p_value"
    assert read_graph_csv(path) == list(g.edges)

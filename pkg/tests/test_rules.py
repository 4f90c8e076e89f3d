import itertools

import numpy as np
import pytest

from csihar import autodiff as ad
from csihar.autodiff import Tape, Tensor, backward
from csihar.errors import ContractError
from csihar.rules import (
    BindingError,
    CapacityError,
    CyclicProgramError,
    DuplicateNeuralError,
    RuleSyntaxError,
    TemporalBinding,
    brute_force_query,
    default_leaf_probs,
    eval_circuit,
    eval_circuit_tensor,
    ground_and_compile,
    parse_program,
    parse_query,
    query_probability,
)
from rulegen import random_neural_probs, random_program

from csihar.resources import rule_text

EARTHQUAKE = "0.2::earthquake.\nalarm :- earthquake.\n"
WALK_SQUAT = rule_text("walk_squat")


def legs(values, arms_no):
    out = {("move_upper_legs", i): [v, 1 - v] for i, v in enumerate(values)}
    out[("move_upper_arms", 0)] = [1 - arms_no, arms_no]
    return out


# -- parsing ---------------------------------------------------------------------


def test_earthquake_parses():
    p = parse_program(EARTHQUAKE)
    assert len(p.prob_facts) == 1 and len(p.clauses) == 1
    assert p.prob_facts[0].prob == 0.2


def test_walk_squat_parses():
    p = parse_program(WALK_SQUAT)
    assert len(p.clauses) == 2
    assert [len(c.body) for c in p.clauses] == [4, 4]
    assert [c.head.args[1] for c in p.clauses] == ["walk", "squat"]
    assert {d.pred for d in p.neural_decls} == {"move_upper_legs", "move_upper_arms"}


def test_comments_and_plain_facts():
    p = parse_program("% header\nsunny. % trailing\n0.5::rain.\nwet :- rain.\n")
    assert [str(a) for a in p.facts] == ["sunny"]
    assert len(p.prob_facts) == 1


def test_empty_body_is_a_syntax_error_with_position():
    with pytest.raises(RuleSyntaxError) as err:
        parse_program("alarm :- .")
    assert (err.value.line, err.value.col) == (1, 10)


@pytest.mark.parametrize(
    "text,line,col",
    [("0.2::earthquake\nalarm :- earthquake.", 2, 1), ("a :- b c.", 1, 8), ("p(X :- q.", 1, 5), ("a :- b.\n$", 2, 1)],
)
def test_syntax_errors_report_line_and_column(text, line, col):
    with pytest.raises(RuleSyntaxError) as err:
        parse_program(text)
    assert (err.value.line, err.value.col) == (line, col)


def test_distinct_diagnostics():
    dup = "nn(a, [X], Y, [p, q]) :: f(X, Y).\nnn(b, [X], Y, [p, q]) :: f(X, Y).\n"
    with pytest.raises(DuplicateNeuralError) as err:
        parse_program(dup)
    assert err.value.line == 2
    with pytest.raises(CyclicProgramError, match="a -> b -> a"):
        parse_program("0.5::c.\na :- b, c.\nb :- a.\n")
    with pytest.raises(CyclicProgramError):
        parse_program("a :- a.")
    assert not issubclass(DuplicateNeuralError, CyclicProgramError)
    assert not issubclass(RuleSyntaxError, DuplicateNeuralError)


def test_structural_checks():
    with pytest.raises(RuleSyntaxError, match="both"):
        parse_program("0.5::a.\na :- b.\n0.1::b.")
    with pytest.raises(RuleSyntaxError, match="outside"):
        parse_program("1.5::a.")
    with pytest.raises(RuleSyntaxError, match="head variable"):
        parse_program("0.5::b.\na(X) :- b.")


# -- binding ---------------------------------------------------------------------


def test_temporal_binding_maps_index_to_interval():
    b = TemporalBinding.infer(parse_program(WALK_SQUAT))
    assert b.refs["move_upper_legs_1"].interval == 0
    assert b.refs["move_upper_legs_3"].interval == 2
    assert b.refs["move_upper_arms_1"].decl.net == "arms_net"


def test_unbound_indexed_predicate():
    with pytest.raises(BindingError):
        TemporalBinding.infer(parse_program("0.5::a.\nq(X) :- a, foo_3(X, yes)."))
    text = "nn(n, [X], Y, [yes, no]) :: m(X, Y).\nq(X) :- m_11(X, yes)."
    with pytest.raises(BindingError, match="outside"):
        TemporalBinding.infer(parse_program(text))


# -- compilation and evaluation --------------------------------------------------


def test_earthquake_circuit():
    p = parse_program(EARTHQUAKE)
    c = ground_and_compile(p, "alarm")
    assert [k for k, _ in c.nodes] == ["leaf"]
    prob, grads = eval_circuit(c, default_leaf_probs(c))
    assert prob == 0.2 and grads == {("fact", 0): 1.0}
    assert brute_force_query(p, "alarm") == 0.2


def test_deterministic_fact_is_constant():
    p = parse_program("sun.\nwarm :- sun.")
    c = ground_and_compile(p, "warm")
    assert c.nodes == [("const", 1.0)]
    assert eval_circuit(c, {}) == (1.0, {})


def test_zero_probability_fact():
    p = parse_program("0.0::f.\nq :- f.")
    assert query_probability(p, "q") == 0.0
    assert brute_force_query(p, "q") == 0.0


def test_walk_and_squat_values():
    p = parse_program(WALK_SQUAT)
    walk = ground_and_compile(p, "activity(w, walk)")
    assert [k for k, _ in walk.nodes].count("leaf") == 4 and walk.nodes[-1][0] == "prod"
    neural = legs([0.9, 0.8, 0.7], arms_no=0.6)
    assert query_probability(p, "activity(w, walk)", neural) == pytest.approx(0.3024, abs=1e-15)
    assert brute_force_query(p, "activity(w, walk)", neural=neural) == pytest.approx(0.3024, abs=1e-15)
    # squat: arms_1 yes 0.6, legs_2 no 0.7, legs_3 yes 0.8, legs_1 no 0.9
    squat = legs([0.1, 0.3, 0.8], arms_no=0.4)
    assert query_probability(p, "activity(w, squat)", squat) == pytest.approx(0.3024, abs=1e-15)
    assert brute_force_query(p, "activity(w, squat)", neural=squat) == pytest.approx(0.3024, abs=1e-15)


def test_activity_probabilities_need_not_sum_to_one():
    p = parse_program(WALK_SQUAT)
    neural = legs([0.5, 0.5, 0.5], arms_no=0.5)
    total = sum(query_probability(p, f"activity(w, {a})", neural) for a in ("walk", "squat"))
    assert total < 1.0


def test_disjunction_and_shared_facts():
    text = "0.3::a.\n0.6::b.\nq :- a.\nq :- b.\nr :- q, a.\n"
    p = parse_program(text)
    assert query_probability(p, "q") == pytest.approx(1 - 0.7 * 0.4, abs=1e-15)
    assert query_probability(p, "r") == pytest.approx(0.3, abs=1e-15)


def test_leaf_range_checked():
    p = parse_program(EARTHQUAKE)
    c = ground_and_compile(p, "alarm")
    with pytest.raises(ContractError):
        eval_circuit(c, {("fact", 0): 1.2})
    with pytest.raises(ContractError):
        eval_circuit(c, {})


def test_capacity_limit():
    facts = "".join(f"0.5::f{i}.\n" for i in range(21))
    body = ", ".join(f"f{i}" for i in range(21))
    p = parse_program(facts + f"q :- {body}.\n")
    with pytest.raises(CapacityError):
        ground_and_compile(p, "q")
    with pytest.raises(CapacityError):
        brute_force_query(p, "q")
    ok = parse_program("".join(f"0.5::f{i}.\n" for i in range(20)) + "q :- " + body.rsplit(",", 1)[0] + ".\n")
    assert query_probability(ok, "q") == pytest.approx(0.5**20)


def test_undefined_query():
    with pytest.raises(ContractError):
        ground_and_compile(parse_program(EARTHQUAKE), "burglary")
    with pytest.raises(RuleSyntaxError):
        parse_query("alarm extra")


@pytest.mark.parametrize("seed", range(200))
def test_circuit_matches_world_enumeration(seed):
    text, query = random_program(seed)
    p = parse_program(text)
    neural = random_neural_probs(seed)
    c = ground_and_compile(p, query)
    prob, _ = eval_circuit(c, default_leaf_probs(c, neural))
    assert 0.0 <= prob <= 1.0
    assert abs(prob - brute_force_query(p, query, neural=neural)) <= 1e-12


@pytest.mark.parametrize("seed", range(40))
def test_circuit_gradients_match_finite_differences(seed):
    text, query = random_program(seed)
    p = parse_program(text)
    c = ground_and_compile(p, query)
    probs = default_leaf_probs(c, random_neural_probs(seed))
    _, grads = eval_circuit(c, probs)
    eps = 1e-6
    for key, val in probs.items():
        lo, hi = dict(probs), dict(probs)
        lo[key], hi[key] = max(0.0, val - eps), min(1.0, val + eps)
        fd = (eval_circuit(c, hi)[0] - eval_circuit(c, lo)[0]) / (hi[key] - lo[key])
        assert abs(grads[key] - fd) / max(1.0, abs(grads[key])) <= 1e-6


@pytest.mark.parametrize("seed", range(40))
def test_monotone_in_fact_probabilities(seed):
    text, query = random_program(seed)
    p = parse_program(text)
    c = ground_and_compile(p, query)
    probs = default_leaf_probs(c, random_neural_probs(seed))
    base, _ = eval_circuit(c, probs)
    rng = np.random.default_rng(seed)
    for key in [k for k in probs if k[0] == "fact"]:
        bumped = dict(probs)
        bumped[key] = probs[key] + (1 - probs[key]) * rng.uniform(0.01, 1)
        assert eval_circuit(c, bumped)[0] >= base - 1e-15


def test_sum_children_are_mutually_exclusive():
    p = parse_program("0.3::a.\n0.6::b.\n0.5::c.\nq :- a, b.\nq :- b, c.\nq :- a, c.\n")
    c = ground_and_compile(p, "q")
    # every sum node branches on distinct values of one variable
    for kind, children in c.nodes:
        if kind != "sum":
            continue
        first = []
        for ch in children:
            node = c.nodes[ch]
            leaf = node[1] if node[0] == "leaf" else c.nodes[node[1][0]][1]
            first.append(leaf.key)
        assert len({k[:-1] for k in first}) == 1 and len(set(first)) == len(first)
    assert query_probability(p, "q") == pytest.approx(brute_force_query(p, "q"), abs=1e-15)


def test_tensor_evaluation_matches_and_backpropagates():
    p = parse_program(WALK_SQUAT)
    c = ground_and_compile(p, "activity(w, walk)")
    rng = np.random.default_rng(0)
    logits = {key: Tensor(rng.normal(size=(5, 2)), requires_grad=True) for key in
              [("move_upper_legs", i) for i in range(3)] + [("move_upper_arms", 0)]}  # fmt: skip
    with Tape() as tape:
        neural = {k: ad.softmax(v) for k, v in logits.items()}
        prob = eval_circuit_tensor(c, neural)
        loss = ad.sum(ad.log(prob))
    for b in range(5):
        row = {k: v.data[b] for k, v in neural.items()}
        assert prob.data[b] == pytest.approx(query_probability(p, "activity(w, walk)", row), abs=1e-15)
    grads = backward(tape, loss, list(logits.values()))
    assert all(np.any(g != 0) for g in grads)


def test_circuit_leaf_gradient_check_through_softmax():
    p = parse_program(WALK_SQUAT)
    c = ground_and_compile(p, "activity(w, squat)")
    keys = [("move_upper_legs", i) for i in range(3)] + [("move_upper_arms", 0)]

    def f(*logits):
        prob = eval_circuit_tensor(c, {k: ad.softmax(v) for k, v in zip(keys, logits)})
        return ad.sum(ad.log(prob))

    arrays = [np.random.default_rng(i).normal(size=(3, 2)) for i in range(4)]
    assert ad.gradient_check(f, arrays, eps=1e-6) <= 1e-6


def test_brute_force_enumerates_all_combinations():
    # three independent facts; query true iff at least two hold
    p = parse_program("0.2::a.\n0.5::b.\n0.7::c.\nq :- a, b.\nq :- a, c.\nq :- b, c.\n")
    expected = 0.0
    for bits in itertools.product([0, 1], repeat=3):
        w = np.prod([pr if bit else 1 - pr for pr, bit in zip((0.2, 0.5, 0.7), bits)])
        expected += w * (sum(bits) >= 2)
    assert brute_force_query(p, "q") == pytest.approx(expected, abs=1e-15)

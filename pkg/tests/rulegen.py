"""Seeded generator of small acyclic, negation-free rule programs for oracle tests."""

import numpy as np

CONSTS = ("x", "a", "b", "c")


def random_program(seed: int, max_facts: int = 12) -> tuple[str, str]:
    """Return ``(program_text, query_text)``; the query is about constant ``x``."""
    rng = np.random.default_rng(seed)
    lines = []
    n_prop = int(rng.integers(0, 6))
    n_rel = int(rng.integers(1, 5))
    n_unary = int(rng.integers(0, 3))
    budget = max_facts
    props = []
    for i in range(min(n_prop, budget)):
        lines.append(f"{rng.uniform(0.05, 0.95):.6f}::p{i}.")
        props.append(f"p{i}")
    budget -= len(props)
    pairs = [(s, t) for s in CONSTS for t in CONSTS if s != t]
    chosen = [pairs[i] for i in rng.permutation(len(pairs))[: min(n_rel, budget)]]
    if not any(s == "x" for s, _ in chosen):
        chosen[0] = ("x", chosen[0][1] if chosen[0][1] != "x" else "a")
    for s, t in chosen:
        lines.append(f"{rng.uniform(0.05, 0.95):.6f}::e({s},{t}).")
    budget -= len(chosen)
    unary = []
    for c in list(rng.permutation(CONSTS[1:]))[: min(n_unary, budget)]:
        lines.append(f"{rng.uniform(0.05, 0.95):.6f}::g({c}).")
        unary.append(c)
    if rng.random() < 0.3:
        lines.append("h(a).")
    use_nn = rng.random() < 0.5
    if use_nn:
        lines.append("nn(net, [X], Y, [u, v, w]) :: k(X, Y).")
    n_derived = int(rng.integers(1, 6))
    for j in range(n_derived):
        for _ in range(int(rng.integers(1, 4))):
            body = []
            # a literal mentioning X keeps the clause range-restricted
            anchors = ["e(X,Z), g(Z)" if unary else "e(X,Z)"]
            anchors += [f"e(X,{t})" for s, t in chosen if s == "x"]
            if use_nn:
                anchors += [f"k_{rng.integers(1, 3)}(X,{rng.choice(['u', 'v', 'w'])})"]
            if j:
                anchors += [f"d{rng.integers(0, j)}(X)"]
            body.append(str(rng.choice(anchors)))
            for _ in range(int(rng.integers(0, 3))):
                opts = list(props) + [f"e({s},{t})" for s, t in chosen]
                if "h(a)." in lines:
                    opts.append("h(a)")
                if j:
                    opts.append(f"d{rng.integers(0, j)}(X)")
                body.append(str(rng.choice(opts)))
            lines.append(f"d{j}(X) :- {', '.join(body)}.")
    return "\n".join(lines) + "\n", f"d{n_derived - 1}(x)"


def random_neural_probs(seed: int) -> dict:
    rng = np.random.default_rng(seed + 10_000)
    return {("k", i): rng.dirichlet(np.ones(3)) for i in range(2)}

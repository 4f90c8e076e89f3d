"""Probabilistic logic programs with neural annotated disjunctions.

A program is parsed, the query is grounded top-down into a monotone DNF over
random variables (Boolean probabilistic facts and categorical neural choices),
and the DNF is compiled by Shannon expansion into a sum/product circuit whose
sum nodes range over mutually exclusive values of one variable.

Indexed predicates ``<neural_pred>_<k>`` refer to the neural head's output on
interval ``k`` (1-based), which is how "in the next interval" conditions are
written.
"""

from __future__ import annotations

import itertools
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from csihar import autodiff as ad
from csihar.autodiff import Tensor
from csihar.errors import CsiharError, ContractError

MAX_RANDOM_VARIABLES = 20


class RuleError(CsiharError):
    """Problem in a rule program, with an optional source position."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line, self.col = line, col
        where = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(where + message)


class RuleSyntaxError(RuleError, ValueError):
    pass


class DuplicateNeuralError(RuleError, ValueError):
    pass


class CyclicProgramError(RuleError, ValueError):
    pass


class BindingError(RuleError, ValueError):
    pass


class CapacityError(RuleError):
    pass


# -- program model ---------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


Term = "str | Var"


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple = ()

    def __str__(self) -> str:
        return self.pred + (f"({','.join(map(str, self.args))})" if self.args else "")

    @property
    def ground(self) -> bool:
        return not any(isinstance(a, Var) for a in self.args)


@dataclass(frozen=True)
class ProbFact:
    prob: float
    atom: Atom
    line: int = 0


@dataclass(frozen=True)
class NeuralDecl:
    net: str
    input_var: str
    output_var: str
    values: tuple[str, ...]
    pred: str
    line: int = 0


@dataclass(frozen=True)
class Clause:
    head: Atom
    body: tuple[Atom, ...]
    line: int = 0

    def __str__(self) -> str:
        return f"{self.head} :- {', '.join(map(str, self.body))}."


@dataclass
class RuleProgram:
    prob_facts: list[ProbFact] = field(default_factory=list)
    facts: list[Atom] = field(default_factory=list)
    neural_decls: list[NeuralDecl] = field(default_factory=list)
    clauses: list[Clause] = field(default_factory=list)

    def neural(self, pred: str) -> NeuralDecl | None:
        return next((d for d in self.neural_decls if d.pred == pred), None)

    def defined_preds(self) -> set[str]:
        return (
            {f.atom.pred for f in self.prob_facts}
            | {a.pred for a in self.facts}
            | {c.head.pred for c in self.clauses}
            | {d.pred for d in self.neural_decls}
        )


# -- tokenizer / parser ----------------------------------------------------------

_TOKEN = re.compile(
    r"""(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>%[^\n]*)
    |(?P<float>\d+\.\d+(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+)
    |(?P<int>\d+)
    |(?P<name>[a-z][A-Za-z0-9_]*)|(?P<var>[A-Z_][A-Za-z0-9_]*)
    |(?P<punct>::|:-|[()\[\],.])""",
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens, line, line_start, pos = [], 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise RuleSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    def peek(self, offset: int = 0) -> Token:
        return self.toks[min(self.i + offset, len(self.toks) - 1)]

    def fail(self, msg: str, tok: Token | None = None):
        tok = tok or self.peek()
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise RuleSyntaxError(f"{msg}, found {found}", tok.line, tok.col)

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if tok.text != text or tok.kind not in ("punct", "name"):
            self.fail(f"expected {text!r}")
        self.i += 1
        return tok

    def take(self, kind: str, what: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            self.fail(f"expected {what}")
        self.i += 1
        return tok

    def term(self):
        tok = self.peek()
        if tok.kind == "var":
            self.i += 1
            return Var(tok.text)
        if tok.kind in ("name", "int", "float"):
            self.i += 1
            return tok.text
        self.fail("expected a term")

    def atom(self) -> Atom:
        name = self.take("name", "a lowercase predicate name")
        args = []
        if self.peek().text == "(":
            self.i += 1
            args.append(self.term())
            while self.peek().text == ",":
                self.i += 1
                args.append(self.term())
            self.expect(")")
        return Atom(name.text, tuple(args))

    def neural(self, prog: RuleProgram) -> None:
        start = self.expect("nn")
        self.expect("(")
        net = self.take("name", "a network name").text
        self.expect(",")
        self.expect("[")
        in_var = self.take("var", "an input variable").text
        self.expect("]")
        self.expect(",")
        out_var = self.take("var", "an output variable").text
        self.expect(",")
        self.expect("[")
        values = [self.value()]
        while self.peek().text == ",":
            self.i += 1
            values.append(self.value())
        self.expect("]")
        self.expect(")")
        self.expect("::")
        pred_tok = self.peek()
        head = self.atom()
        self.expect(".")
        if head.args != (Var(in_var), Var(out_var)):
            raise RuleSyntaxError(
                f"neural predicate must be written {head.pred}({in_var},{out_var})", pred_tok.line, pred_tok.col
            )
        if len(set(values)) != len(values):
            raise RuleSyntaxError("neural value list has duplicates", start.line, start.col)
        if prog.neural(head.pred) is not None:
            raise DuplicateNeuralError(
                f"neural predicate {head.pred!r} already declared on line {prog.neural(head.pred).line}",
                start.line,
                start.col,
            )
        prog.neural_decls.append(NeuralDecl(net, in_var, out_var, tuple(values), head.pred, start.line))

    def value(self) -> str:
        tok = self.peek()
        if tok.kind not in ("name", "int"):
            self.fail("expected a value")
        self.i += 1
        return tok.text

    def statement(self, prog: RuleProgram) -> None:
        tok = self.peek()
        if tok.kind == "name" and tok.text == "nn" and self.peek(1).text == "(":
            return self.neural(prog)
        if tok.kind in ("float", "int") and self.peek(1).text == "::":
            self.i += 2
            prob = float(tok.text)
            if not 0.0 <= prob <= 1.0:
                raise RuleSyntaxError(f"probability {prob} outside [0, 1]", tok.line, tok.col)
            a = self.atom()
            self.expect(".")
            prog.prob_facts.append(ProbFact(prob, a, tok.line))
            return
        head = self.atom()
        if self.peek().text == ".":
            self.i += 1
            prog.facts.append(head)
            return
        self.expect(":-")
        if self.peek().text == ".":
            self.fail("clause body is empty")
        body = [self.atom()]
        while self.peek().text == ",":
            self.i += 1
            body.append(self.atom())
        self.expect(".")
        prog.clauses.append(Clause(head, tuple(body), tok.line))

    def program(self) -> RuleProgram:
        prog = RuleProgram()
        while self.peek().kind != "eof":
            self.statement(prog)
        return prog


def parse_program(text: str) -> RuleProgram:
    """Parse and validate a rule file; raises a :class:`RuleError` subclass with position."""
    prog = _Parser(text).program()
    _validate(prog)
    return prog


def _validate(prog: RuleProgram) -> None:
    heads = {c.head.pred: c for c in prog.clauses}
    for f in prog.prob_facts:
        if f.atom.pred in heads:
            c = heads[f.atom.pred]
            raise RuleSyntaxError(f"{f.atom.pred!r} is both a probabilistic fact and a clause head", c.line, 1)
        if not f.atom.ground:
            raise RuleSyntaxError(f"probabilistic fact {f.atom} must be ground", f.line, 1)
    for d in prog.neural_decls:
        if d.pred in heads:
            raise RuleSyntaxError(f"{d.pred!r} is both a neural predicate and a clause head", heads[d.pred].line, 1)
    for c in prog.clauses:
        body_vars = {a for atom in c.body for a in atom.args if isinstance(a, Var)}
        loose = [a for a in c.head.args if isinstance(a, Var) and a not in body_vars]
        if loose:
            raise RuleSyntaxError(f"head variable {loose[0]} does not occur in the body of {c}", c.line, 1)
    # dependency cycle check (indexed neural predicates are leaves)
    graph: dict[str, list[tuple[str, int]]] = {}
    for c in prog.clauses:
        graph.setdefault(c.head.pred, []).extend((b.pred, c.line) for b in c.body)
    state: dict[str, int] = {}

    def visit(node: str, path: list[str]) -> None:
        state[node] = 1
        for nxt, line in graph.get(node, []):
            if state.get(nxt) == 1:
                cycle = path[path.index(nxt) :] + [nxt] if nxt in path else [node, nxt]
                raise CyclicProgramError("cyclic dependency " + " -> ".join(cycle), line, 1)
            if state.get(nxt) is None:
                visit(nxt, path + [nxt])
        state[node] = 2

    for head in list(graph):
        if state.get(head) is None:
            visit(head, [head])


def parse_query(text: str) -> Atom:
    p = _Parser(text.strip().rstrip("."))
    atom = p.atom()
    if p.peek().kind != "eof":
        p.fail("unexpected text after query")
    return atom


# -- temporal binding ------------------------------------------------------------


@dataclass(frozen=True)
class NeuralRef:
    decl: NeuralDecl
    interval: int | None  # 0-based; None for the whole-window predicate


_INDEXED = re.compile(r"^(?P<base>[a-z][A-Za-z0-9_]*?)_(?P<k>\d+)$")


@dataclass
class TemporalBinding:
    """Map from predicate names used in bodies to neural heads and intervals."""

    refs: dict[str, NeuralRef]

    @classmethod
    def infer(cls, program: RuleProgram, intervals: int = 10) -> "TemporalBinding":
        """Bind ``<pred>_<k>`` to interval ``k - 1`` of neural predicate ``pred``.

        Raises :class:`BindingError` for an indexed name whose base is not a
        neural predicate or whose index is outside ``1..intervals``.
        """
        refs = {d.pred: NeuralRef(d, None) for d in program.neural_decls}
        defined = program.defined_preds()
        for c in program.clauses:
            for atom in c.body:
                if atom.pred in defined:
                    continue
                m = _INDEXED.match(atom.pred)
                decl = program.neural(m.group("base")) if m else None
                if decl is None:
                    if m:
                        raise BindingError(f"indexed predicate {atom.pred!r} has no neural head to bind to", c.line, 1)
                    continue
                k = int(m.group("k"))
                if not 1 <= k <= intervals:
                    raise BindingError(f"{atom.pred!r}: interval index {k} outside 1..{intervals}", c.line, 1)
                refs[atom.pred] = NeuralRef(decl, k - 1)
        return cls(refs)


# -- grounding -------------------------------------------------------------------

# A literal is (variable_key, value).  Boolean fact variables use ("fact", i)
# with value True; neural choices use ("nn", pred, interval, example).
Literal = tuple


def _walk(t, subst):
    while isinstance(t, Var) and t in subst:
        t = subst[t]
    return t


def _unify(args_a, args_b, subst):
    s = dict(subst)
    for a, b in zip(args_a, args_b):
        a, b = _walk(a, s), _walk(b, s)
        if a == b:
            continue
        if isinstance(a, Var):
            s[a] = b
        elif isinstance(b, Var):
            s[b] = a
        else:
            return None
    return s


class _Grounder:
    def __init__(self, program: RuleProgram, binding: TemporalBinding):
        self.p = program
        self.binding = binding
        self.by_head: dict[str, list[Clause]] = {}
        for c in program.clauses:
            self.by_head.setdefault(c.head.pred, []).append(c)
        self.fresh = itertools.count()

    def rename(self, clause: Clause) -> Clause:
        n = next(self.fresh)
        ren = lambda a: Var(f"{a.name}#{n}") if isinstance(a, Var) else a  # noqa: E731
        return Clause(Atom(clause.head.pred, tuple(map(ren, clause.head.args))),
                      tuple(Atom(b.pred, tuple(map(ren, b.args))) for b in clause.body))  # fmt: skip

    def solve(self, goals: tuple[Atom, ...], subst, lits: frozenset) -> Iterator[tuple[dict, frozenset]]:
        if not goals:
            yield subst, lits
            return
        goal, rest = goals[0], goals[1:]
        if len(goal.args) and goal.pred in self.binding.refs:
            yield from self._neural(goal, rest, subst, lits)
            return
        if goal.pred not in self.p.defined_preds():
            raise BindingError(f"predicate {goal.pred!r} is not defined")
        for atom in self.p.facts:
            if atom.pred == goal.pred and len(atom.args) == len(goal.args):
                s = _unify(goal.args, atom.args, subst)
                if s is not None:
                    yield from self.solve(rest, s, lits)
        for i, f in enumerate(self.p.prob_facts):
            if f.atom.pred == goal.pred and len(f.atom.args) == len(goal.args):
                s = _unify(goal.args, f.atom.args, subst)
                if s is not None:
                    yield from self.solve(rest, s, lits | {(("fact", i), True)})
        for clause in self.by_head.get(goal.pred, []):
            if len(clause.head.args) != len(goal.args):
                continue
            c = self.rename(clause)
            s = _unify(goal.args, c.head.args, subst)
            if s is not None:
                yield from self.solve(c.body + rest, s, lits)

    def _neural(self, goal: Atom, rest, subst, lits):
        ref = self.binding.refs[goal.pred]
        if len(goal.args) != 2:
            raise BindingError(f"neural predicate {goal.pred!r} takes (input, value)")
        example = _walk(goal.args[0], subst)
        if isinstance(example, Var):
            raise BindingError(f"input of {goal.pred!r} must be bound when it is reached")
        key = ("nn", ref.decl.pred, ref.interval, example)
        for value in ref.decl.values:
            s = _unify((goal.args[1],), (value,), subst)
            if s is None:
                continue
            clash = any(k == key and v != value for k, v in lits)
            if not clash:
                yield from self.solve(rest, s, lits | {(key, value)})


def ground_query(program: RuleProgram, query: Atom, binding: TemporalBinding | None = None) -> frozenset:
    """Monotone DNF (set of literal sets) whose satisfaction is the query's truth."""
    binding = binding or TemporalBinding.infer(program)
    if query.pred not in program.defined_preds() and query.pred not in binding.refs:
        raise ContractError(f"query predicate {query.pred!r} is not defined by the program")
    g = _Grounder(program, binding)
    terms = {lits for _, lits in g.solve((query,), {}, frozenset())}
    # drop terms subsumed by a smaller term
    minimal = [t for t in terms if not any(o < t for o in terms)]
    return frozenset(minimal)


# -- circuits --------------------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    """Reference to a probability: ``("fact", i, True|False)`` (p or 1-p) or
    ``("nn", pred, interval, example, value)``."""

    key: tuple


@dataclass
class ArithmeticCircuit:
    """Nodes in topological order; each is ``("leaf", Leaf)``, ``("const", c)``,
    ``("sum", children)`` or ``("prod", children)``; the root is the last node."""

    nodes: list[tuple]
    program: RuleProgram
    query: Atom

    @property
    def root(self) -> int:
        return len(self.nodes) - 1

    @property
    def parameters(self) -> list[tuple]:
        """Distinct underlying parameters: ``("fact", i)`` or ``("nn", pred, interval, example, value)``."""
        seen = []
        for kind, arg in self.nodes:
            if kind == "leaf":
                p = _param_of(arg)
                if p not in seen:
                    seen.append(p)
        return seen

    def __len__(self) -> int:
        return len(self.nodes)


def _param_of(leaf: Leaf) -> tuple:
    return leaf.key[:2] if leaf.key[0] == "fact" else leaf.key


def _domain(program: RuleProgram, var: tuple) -> tuple:
    if var[0] == "fact":
        return (True, False)
    return program.neural(var[1]).values


def random_variables(dnf: frozenset) -> list[tuple]:
    return sorted({k for term in dnf for k, _ in term}, key=repr)


def compile_dnf(program: RuleProgram, query: Atom, dnf: frozenset) -> ArithmeticCircuit:
    nodes: list[tuple] = []
    index: dict[tuple, int] = {}

    def add(node: tuple) -> int:
        if node not in index:
            index[node] = len(nodes)
            nodes.append(node)
        return index[node]

    memo: dict[frozenset, int | None] = {}

    def build(f: frozenset) -> int | None:
        # None stands for the constant 0 (pruned branch)
        if frozenset() in f:
            return add(("const", 1.0))
        if not f:
            return None
        if f in memo:
            return memo[f]
        counts = Counter(k for term in f for k, _ in term)
        var = min(counts, key=lambda k: (-counts[k], repr(k)))
        children = []
        for value in _domain(program, var):
            cond = frozenset(
                frozenset(l for l in term if l[0] != var)
                for term in f
                if all(k != var or v == value for k, v in term)
            )
            sub = build(cond)
            if sub is None:
                continue
            leaf = add(("leaf", Leaf(var + (value,))))
            if nodes[sub] == ("const", 1.0):
                children.append(leaf)
            elif nodes[sub][0] == "prod":
                children.append(add(("prod", (leaf,) + nodes[sub][1])))
            else:
                children.append(add(("prod", (leaf, sub))))
        out = children[0] if len(children) == 1 else add(("sum", tuple(children))) if children else None
        memo[f] = out
        return out

    root = build(dnf)
    if root is None:
        root = add(("const", 0.0))
    return ArithmeticCircuit(_prune(nodes, root), program, query)


def _prune(nodes: list[tuple], root: int) -> list[tuple]:
    """Keep only nodes reachable from ``root``, renumbered so the root is last."""
    live = set()
    stack = [root]
    while stack:
        i = stack.pop()
        if i in live:
            continue
        live.add(i)
        if nodes[i][0] in ("sum", "prod"):
            stack.extend(nodes[i][1])
    order = sorted(live)  # children were always added before parents
    remap = {old: new for new, old in enumerate(order)}
    out = []
    for old in order:
        kind, arg = nodes[old]
        out.append((kind, tuple(remap[c] for c in arg)) if kind in ("sum", "prod") else (kind, arg))
    return out


def ground_and_compile(
    program: RuleProgram, query: Atom | str, binding: TemporalBinding | None = None
) -> ArithmeticCircuit:
    query = parse_query(query) if isinstance(query, str) else query
    dnf = ground_query(program, query, binding)
    n = len(random_variables(dnf))
    if n > MAX_RANDOM_VARIABLES:
        raise CapacityError(f"query depends on {n} random variables (limit {MAX_RANDOM_VARIABLES})")
    return compile_dnf(program, query, dnf)


# -- evaluation ------------------------------------------------------------------


def _leaf_value(leaf: Leaf, probs: Mapping[tuple, float]) -> float:
    p = probs[_param_of(leaf)]
    if leaf.key[0] == "fact" and leaf.key[2] is False:
        return 1.0 - p
    return p


def default_leaf_probs(circuit: ArithmeticCircuit, neural: Mapping | None = None) -> dict[tuple, float]:
    """Fact probabilities from the program, neural values from ``neural``.

    ``neural`` maps ``(pred, interval)`` to a sequence over the head's values.
    """
    out = {}
    for p in circuit.parameters:
        if p[0] == "fact":
            out[p] = circuit.program.prob_facts[p[1]].prob
        else:
            _, pred, interval, _, value = p
            values = circuit.program.neural(pred).values
            out[p] = float(neural[(pred, interval)][values.index(value)])
    return out


def eval_circuit(circuit: ArithmeticCircuit, leaf_probs: Mapping[tuple, float]) -> tuple[float, dict[tuple, float]]:
    """Probability of the query and its gradient with respect to every parameter."""
    for p in circuit.parameters:
        if p not in leaf_probs:
            raise ContractError(f"no probability supplied for leaf {p}")
        v = leaf_probs[p]
        if not 0.0 <= v <= 1.0:
            raise ContractError(f"leaf {p} probability {v} outside [0, 1]")
    vals = np.zeros(len(circuit.nodes))
    for i, (kind, arg) in enumerate(circuit.nodes):
        if kind == "leaf":
            vals[i] = _leaf_value(arg, leaf_probs)
        elif kind == "const":
            vals[i] = arg
        elif kind == "sum":
            vals[i] = sum(vals[c] for c in arg)
        else:
            vals[i] = np.prod([vals[c] for c in arg])
    adj = np.zeros(len(circuit.nodes))
    adj[-1] = 1.0
    grads = {p: 0.0 for p in circuit.parameters}
    for i in range(len(circuit.nodes) - 1, -1, -1):
        kind, arg = circuit.nodes[i]
        if adj[i] == 0.0:
            continue
        if kind == "sum":
            for c in arg:
                adj[c] += adj[i]
        elif kind == "prod":
            for j, c in enumerate(arg):
                others = np.prod([vals[o] for k, o in enumerate(arg) if k != j])
                adj[c] += adj[i] * others
        elif kind == "leaf":
            sign = -1.0 if arg.key[0] == "fact" and arg.key[2] is False else 1.0
            grads[_param_of(arg)] += sign * float(adj[i])
    return float(vals[-1]), grads


def eval_circuit_tensor(
    circuit: ArithmeticCircuit,
    neural: Mapping[tuple, Tensor],
    fact_probs: Mapping[int, float] | None = None,
) -> Tensor:
    """Batched, differentiable evaluation.

    ``neural`` maps ``(pred, interval)`` to a ``[batch, arity]`` tensor of value
    probabilities (the example constant is ignored: one example per query).
    Returns ``[batch]`` query probabilities on the active tape.
    """
    batch = next(iter(neural.values())).shape[0] if neural else 1
    ones = Tensor(np.ones(batch))
    cols: dict[tuple, Tensor] = {}
    vals: list[Tensor] = []
    for kind, arg in circuit.nodes:
        if kind == "const":
            vals.append(ad.scale(ones, arg))
        elif kind == "leaf":
            key = arg.key
            if key[0] == "fact":
                p = (fact_probs or {}).get(key[1], circuit.program.prob_facts[key[1]].prob)
                vals.append(ad.scale(ones, p if key[2] else 1.0 - p))
            else:
                _, pred, interval, _, value = key
                col = (pred, interval, value)
                if col not in cols:
                    idx = circuit.program.neural(pred).values.index(value)
                    cols[col] = neural[(pred, interval)][:, idx]
                vals.append(cols[col])
        elif kind == "sum":
            acc = vals[arg[0]]
            for c in arg[1:]:
                acc = ad.add(acc, vals[c])
            vals.append(acc)
        else:
            acc = vals[arg[0]]
            for c in arg[1:]:
                acc = ad.mul(acc, vals[c])
            vals.append(acc)
    return vals[-1]


# -- world-enumeration oracle ----------------------------------------------------


def _constants(program: RuleProgram, query: Atom) -> list[str]:
    consts = set()
    atoms = [f.atom for f in program.prob_facts] + list(program.facts) + [query]
    for c in program.clauses:
        atoms += [c.head, *c.body]
    for a in atoms:
        consts.update(x for x in a.args if not isinstance(x, Var))
    for d in program.neural_decls:
        consts.update(d.values)
    return sorted(consts)


def brute_force_query(
    program: RuleProgram,
    query: Atom | str,
    leaf_probs: Mapping[tuple, float] | None = None,
    neural: Mapping | None = None,
    binding: TemporalBinding | None = None,
) -> float:
    """Sum of world weights in which the query is derivable.

    Worlds range over every probabilistic fact and every neural choice for the
    query's constants; clauses are grounded over all program constants and
    applied bottom-up (one pass in dependency order suffices for acyclic
    programs).  ``leaf_probs`` overrides fact probabilities (``("fact", i)``)
    and supplies neural values (``("nn", pred, interval, example, value)``);
    ``neural`` is the ``(pred, interval) -> values`` shorthand.
    """
    query = parse_query(query) if isinstance(query, str) else query
    binding = binding or TemporalBinding.infer(program)
    leaf_probs = dict(leaf_probs or {})
    examples = [a for a in query.args if not isinstance(a, Var)]
    variables: list[tuple[tuple, tuple, list[float]]] = []
    for i, f in enumerate(program.prob_facts):
        p = leaf_probs.get(("fact", i), f.prob)
        variables.append((("fact", i), (True, False), [p, 1.0 - p]))
    used = {b.pred for c in program.clauses for b in c.body} | {query.pred}
    for name, ref in sorted(binding.refs.items()):
        if name not in used:
            continue
        for ex in examples:
            key = ("nn", ref.decl.pred, ref.interval, ex)
            if any(v[0] == key for v in variables):
                continue
            ps = []
            for j, val in enumerate(ref.decl.values):
                if key + (val,) in leaf_probs:
                    ps.append(leaf_probs[key + (val,)])
                else:
                    ps.append(float(neural[(ref.decl.pred, ref.interval)][j]))
            variables.append((key, ref.decl.values, ps))
    if len(variables) > MAX_RANDOM_VARIABLES:
        raise CapacityError(f"{len(variables)} random variables exceed the limit of {MAX_RANDOM_VARIABLES}")

    # all worlds at once: column j of `choice` is the value index of variable j
    sizes = [len(v[1]) for v in variables]
    n_worlds = int(np.prod(sizes)) if sizes else 1
    choice = np.array(list(itertools.product(*[range(s) for s in sizes])), dtype=np.int64).reshape(n_worlds, len(sizes))
    weight = np.ones(n_worlds)
    for j, (_, _, ps) in enumerate(variables):
        weight *= np.asarray(ps)[choice[:, j]]

    truth: dict[Atom, np.ndarray] = {}
    true_all = np.ones(n_worlds, dtype=bool)
    for a in program.facts:
        truth[a] = true_all
    for j, (key, values, _) in enumerate(variables):
        if key[0] == "fact":
            atom = program.prob_facts[key[1]].atom
            truth[atom] = truth.get(atom, np.zeros(n_worlds, bool)) | (choice[:, j] == 0)
        else:
            for name, ref in binding.refs.items():
                if (ref.decl.pred, ref.interval) == key[1:3]:
                    for vi, val in enumerate(values):
                        truth[Atom(name, (key[3], val))] = choice[:, j] == vi

    consts = _constants(program, query)
    order = _topological_preds(program)
    for pred in order:
        for c in (c for c in program.clauses if c.head.pred == pred):
            cvars = sorted({a for atom in (c.head, *c.body) for a in atom.args if isinstance(a, Var)}, key=str)
            for combo in itertools.product(consts, repeat=len(cvars)):
                s = dict(zip(cvars, combo))
                inst = lambda atom: Atom(atom.pred, tuple(s.get(x, x) for x in atom.args))  # noqa: E731
                val = true_all
                for b in c.body:
                    t = truth.get(inst(b))
                    if t is None:
                        val = None
                        break
                    val = val & t
                if val is not None:
                    h = inst(c.head)
                    truth[h] = truth.get(h, np.zeros(n_worlds, bool)) | val
    holds = truth.get(query)
    return 0.0 if holds is None else float(weight[holds].sum())


def _topological_preds(program: RuleProgram) -> list[str]:
    deps = {c.head.pred: set() for c in program.clauses}
    for c in program.clauses:
        deps[c.head.pred].update(b.pred for b in c.body if b.pred in deps)
    out, done = [], set()

    def visit(p):
        if p in done:
            return
        done.add(p)
        for q in sorted(deps[p]):
            visit(q)
        out.append(p)

    for p in sorted(deps):
        visit(p)
    return out


def query_probability(program: RuleProgram, query: Atom | str, neural: Mapping | None = None) -> float:
    circuit = ground_and_compile(program, query)
    p, _ = eval_circuit(circuit, default_leaf_probs(circuit, neural))
    return p


def summarize(program: RuleProgram) -> str:
    lines = [
        f"prob_facts: {len(program.prob_facts)}",
        f"facts: {len(program.facts)}",
        f"neural: {len(program.neural_decls)}",
        f"clauses: {len(program.clauses)}",
    ]
    lines += [f"  {c}" for c in program.clauses]
    return "\n".join(lines)

"""Bottom-up evaluation of stratified Datalog with an indexed fact store.

Facts are stored keyed by ``(predicate, argument-values)``.  Every stored
fact carries a snapshot epoch, an origin (``discovered``, ``user`` or
``derived``) and an ``outdated`` flag.  Evaluation sees only non-outdated
facts; outdated base facts survive as long as a derived fact from the last
evaluation still references them, and are reclaimed by
:meth:`FactStore.collect_unreferenced` afterwards.

Evaluation is deterministic: rules fire in program order and all emitted
collections sort lexicographically by ``(predicate, args)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

from .ast import Constant, Literal, Program, Rule, check_safety

Value = "str | int"
FactKey = tuple  # (predicate, (value, ...))

DISCOVERED = "discovered"
USER = "user"
DERIVED = "derived"


def value_sort_key(value: str | int) -> tuple:
    # ints before strings; avoids str/int comparison errors in sorts
    return (isinstance(value, str), value)


def fact_sort_key(key: FactKey) -> tuple:
    pred, args = key
    return (pred, tuple(value_sort_key(v) for v in args))


@dataclass(frozen=True)
class StoredFact:
    predicate: str
    args: tuple
    epoch: int
    origin: str
    outdated: bool = False
    supports: tuple = ()

    @property
    def key(self) -> FactKey:
        return (self.predicate, self.args)

    def to_literal(self) -> Literal:
        return Literal(self.predicate, tuple(Constant(v) for v in self.args))


class FactStore:
    """Indexed set of ground facts with snapshot/outdating semantics."""

    def __init__(self) -> None:
        self._facts: dict[FactKey, StoredFact] = {}
        # (predicate, position, value) -> keys; dicts double as ordered sets
        self._index: dict[tuple, dict[FactKey, None]] = {}
        self._by_pred: dict[str, dict[FactKey, None]] = {}
        self.current_epoch = 0

    def __len__(self) -> int:
        return len(self._facts)

    def __contains__(self, key: FactKey) -> bool:
        return key in self._facts

    def get(self, key: FactKey) -> StoredFact | None:
        return self._facts.get(key)

    def copy(self) -> "FactStore":
        out = FactStore()
        out._facts = dict(self._facts)
        out._index = {k: dict(v) for k, v in self._index.items()}
        out._by_pred = {k: dict(v) for k, v in self._by_pred.items()}
        out.current_epoch = self.current_epoch
        return out

    def _insert(self, fact: StoredFact) -> None:
        key = fact.key
        if key not in self._facts:
            self._by_pred.setdefault(fact.predicate, {})[key] = None
            for pos, value in enumerate(fact.args):
                self._index.setdefault((fact.predicate, pos, value), {})[key] = None
        self._facts[key] = fact

    def _remove(self, key: FactKey) -> None:
        fact = self._facts.pop(key)
        del self._by_pred[fact.predicate][key]
        for pos, value in enumerate(fact.args):
            del self._index[(fact.predicate, pos, value)][key]

    def add_derived(self, key: FactKey, supports: tuple) -> None:
        self._insert(
            StoredFact(key[0], key[1], self.current_epoch, DERIVED, False, supports)
        )

    def discard_derived(self) -> None:
        for key in [k for k, f in self._facts.items() if f.origin == DERIVED]:
            self._remove(key)

    def ingest_snapshot(self, facts: Iterable[Literal], origin: str) -> "FactStore":
        """Insert a discovery or user snapshot, outdating same-origin facts
        of the snapshotted predicates that the snapshot no longer reports."""
        if origin not in (DISCOVERED, USER):
            raise ValueError(f"invalid snapshot origin: {origin!r}")
        incoming: dict[FactKey, None] = {}
        for lit in facts:
            if not lit.is_ground():
                raise ValueError(f"non-ground fact in snapshot: {lit}")
            if lit.negated:
                raise ValueError(f"negative fact in snapshot: {lit}")
            incoming[(lit.predicate, lit.values())] = None
        self.current_epoch += 1
        snapshot_preds = {key[0] for key in incoming}
        for pred in snapshot_preds:
            for key in list(self._by_pred.get(pred, ())):
                fact = self._facts[key]
                if fact.origin == origin and key not in incoming and not fact.outdated:
                    self._facts[key] = replace(fact, outdated=True)
        for key in incoming:
            self._insert(StoredFact(key[0], key[1], self.current_epoch, origin))
        return self

    def facts(self, include_outdated: bool = False) -> Iterator[StoredFact]:
        for fact in self._facts.values():
            if include_outdated or not fact.outdated:
                yield fact

    def sorted_facts(self, include_outdated: bool = False) -> list[StoredFact]:
        return sorted(
            self.facts(include_outdated), key=lambda f: fact_sort_key(f.key)
        )

    def match(self, predicate: str, bound: dict[int, object] | None = None) -> list[FactKey]:
        """Non-outdated fact keys of ``predicate`` whose argument at each
        bound position equals the bound value."""
        if not bound:
            candidates: Iterable[FactKey] = self._by_pred.get(predicate, ())
            rest: list[tuple[int, object]] = []
        else:
            # narrowest index bucket first, remaining positions by filter
            buckets = [
                (len(self._index.get((predicate, pos, value), ())), pos, value)
                for pos, value in bound.items()
            ]
            buckets.sort(key=lambda b: b[0])
            _, pos0, val0 = buckets[0]
            candidates = self._index.get((predicate, pos0, val0), ())
            rest = [(pos, value) for _, pos, value in buckets[1:]]
        out = []
        for key in candidates:
            fact = self._facts[key]
            if fact.outdated:
                continue
            args = key[1]
            if all(args[pos] == value for pos, value in rest):
                out.append(key)
        return out

    def extension(self, predicate: str) -> list[tuple]:
        """Sorted argument tuples of all non-outdated facts of a predicate."""
        rows = [
            key[1]
            for key in self._by_pred.get(predicate, ())
            if not self._facts[key].outdated
        ]
        rows.sort(key=lambda args: tuple(value_sort_key(v) for v in args))
        return rows

    def query(self, pattern: Literal) -> list[dict[str, Constant]]:
        """All substitutions grounding ``pattern`` to a non-outdated fact,
        sorted by the matched argument tuple."""
        if pattern.negated:
            raise ValueError("query pattern must be positive")
        bound: dict[int, object] = {}
        var_slots: list[tuple[int, str]] = []
        for pos, term in enumerate(pattern.args):
            if isinstance(term, Constant):
                bound[pos] = term.value
            else:
                var_slots.append((pos, term.name))
        matches = []
        for key in self.match(pattern.predicate, bound):
            if len(key[1]) != len(pattern.args):
                continue
            subst: dict[str, Constant] = {}
            ok = True
            for pos, name in var_slots:
                value = key[1][pos]
                if name in subst:
                    if subst[name].value != value:
                        ok = False
                        break
                else:
                    subst[name] = Constant(value)
            if ok:
                matches.append((key[1], subst))
        matches.sort(key=lambda m: tuple(value_sort_key(v) for v in m[0]))
        return [subst for _, subst in matches]

    def collect_unreferenced(self) -> "FactStore":
        """Drop outdated base facts no current derived fact references,
        following supports transitively."""
        referenced: set[FactKey] = set()
        stack = []
        for fact in self._facts.values():
            if fact.origin == DERIVED:
                stack.extend(fact.supports)
        while stack:
            key = stack.pop()
            if key in referenced:
                continue
            referenced.add(key)
            fact = self._facts.get(key)
            if fact is not None and fact.origin == DERIVED:
                stack.extend(fact.supports)
        doomed = [
            key
            for key, fact in self._facts.items()
            if fact.outdated and fact.origin != DERIVED and key not in referenced
        ]
        for key in doomed:
            self._remove(key)
        return self


# ---------------------------------------------------------------------------
# Dependency analysis and stratification
# ---------------------------------------------------------------------------

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass
class DependencyGraph:
    """Predicate dependency graph; edge (body_pred -> head_pred) with
    polarity, negative when any negated occurrence exists."""

    nodes: set[str] = field(default_factory=set)
    edges: dict[tuple[str, str], str] = field(default_factory=dict)

    def add_edge(self, src: str, dst: str, polarity: str) -> None:
        self.nodes.update((src, dst))
        if polarity == NEGATIVE or self.edges.get((src, dst)) != NEGATIVE:
            self.edges[(src, dst)] = polarity

    def successors(self, node: str) -> list[str]:
        return sorted(dst for (src, dst) in self.edges if src == node)


def build_dependency_graph(program: Program) -> DependencyGraph:
    """Predicate graph of a program: body predicates point at head predicates."""
    graph = DependencyGraph()
    for fact in program.facts:
        graph.nodes.add(fact.predicate)
    for rule in program.rules:
        graph.nodes.add(rule.head.predicate)
        for lit in rule.body:
            graph.add_edge(
                lit.predicate,
                rule.head.predicate,
                NEGATIVE if lit.negated else POSITIVE,
            )
    return graph


class UnstratifiableError(ValueError):
    """Raised when recursion passes through negation."""

    def __init__(self, cycle: list[str]):
        super().__init__(
            "cannot stratify: negation inside recursive cycle "
            + " -> ".join(cycle + cycle[:1])
        )
        self.cycle = cycle


@dataclass
class StratifiedProgram:
    strata: list[list[Rule]]
    predicate_stratum: dict[str, int]


def _strongly_connected_components(graph: DependencyGraph) -> dict[str, int]:
    """Tarjan (iterative); returns node -> component id."""
    index: dict[str, int] = {}
    lowlink: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    component: dict[str, int] = {}
    counter = [0]
    comp_counter = [0]

    for root in sorted(graph.nodes):
        if root in index:
            continue
        work = [(root, iter(graph.successors(root)))]
        index[root] = lowlink[root] = counter[0]
        counter[0] += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, succs = work[-1]
            advanced = False
            for succ in succs:
                if succ not in index:
                    index[succ] = lowlink[succ] = counter[0]
                    counter[0] += 1
                    stack.append(succ)
                    on_stack.add(succ)
                    work.append((succ, iter(graph.successors(succ))))
                    advanced = True
                    break
                if succ in on_stack:
                    lowlink[node] = min(lowlink[node], index[succ])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
            if lowlink[node] == index[node]:
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component[member] = comp_counter[0]
                    if member == node:
                        break
                comp_counter[0] += 1
    return component


def _negative_cycle(graph: DependencyGraph, src: str, dst: str) -> list[str]:
    # edge src->dst is negative and both share a component: close the loop
    # with a path dst -> ... -> src
    parents: dict[str, str | None] = {dst: None}
    queue = [dst]
    while queue:
        node = queue.pop(0)
        if node == src:
            path = [src]
            while parents[path[-1]] is not None:
                path.append(parents[path[-1]])  # type: ignore[arg-type]
            return list(reversed(path))
        for succ in graph.successors(node):
            if succ not in parents:
                parents[succ] = node
                queue.append(succ)
    return [dst, src]


def stratify(program: Program) -> StratifiedProgram:
    """Assign rules to strata so negated predicates are fully computed in
    earlier strata; raises :class:`UnstratifiableError` otherwise."""
    violations = check_safety(program)
    if violations:
        raise ValueError("unsafe program: " + "; ".join(str(v) for v in violations))
    graph = build_dependency_graph(program)
    component = _strongly_connected_components(graph)

    for (src, dst), polarity in graph.edges.items():
        if polarity == NEGATIVE and component[src] == component[dst]:
            raise UnstratifiableError(_negative_cycle(graph, src, dst))

    # condensation is a DAG; longest path counting negative edges
    comp_nodes: dict[int, list[str]] = {}
    for node, comp in component.items():
        comp_nodes.setdefault(comp, []).append(node)
    comp_edges: dict[int, set[tuple[int, int]]] = {}
    indegree: dict[int, int] = {comp: 0 for comp in comp_nodes}
    weights: dict[tuple[int, int], int] = {}
    for (src, dst), polarity in graph.edges.items():
        cs, cd = component[src], component[dst]
        if cs == cd:
            continue
        weight = 1 if polarity == NEGATIVE else 0
        if (cs, cd) not in weights:
            indegree[cd] += 1
            comp_edges.setdefault(cs, set()).add((cs, cd))
        weights[(cs, cd)] = max(weights.get((cs, cd), 0), weight)

    level: dict[int, int] = {comp: 0 for comp in comp_nodes}
    ready = [comp for comp, deg in indegree.items() if deg == 0]
    order: list[int] = []
    pending = dict(indegree)
    while ready:
        comp = ready.pop()
        order.append(comp)
        for cs, cd in sorted(comp_edges.get(comp, ())):
            level[cd] = max(level[cd], level[cs] + weights[(cs, cd)])
            pending[cd] -= 1
            if pending[cd] == 0:
                ready.append(cd)

    predicate_stratum = {
        node: level[comp] for node, comp in component.items()
    }
    if not program.rules:
        return StratifiedProgram([], predicate_stratum)
    depth = max(predicate_stratum[r.head.predicate] for r in program.rules) + 1
    strata: list[list[Rule]] = [[] for _ in range(depth)]
    for rule in program.rules:
        strata[predicate_stratum[rule.head.predicate]].append(rule)
    return StratifiedProgram(strata, predicate_stratum)


# ---------------------------------------------------------------------------
# Rule evaluation
# ---------------------------------------------------------------------------

FULL, DELTA, OLD = 0, 1, 2


@dataclass
class _CompiledLiteral:
    predicate: str
    negated: bool
    consts: list[tuple[int, object]]
    var_slots: list[tuple[int, str]]


@dataclass
class _CompiledRule:
    rule: Rule
    body: list[_CompiledLiteral]  # positives first, negatives appended
    head_pred: str
    head_terms: list


def _compile_rule(rule: Rule) -> _CompiledRule:
    positives = [lit for lit in rule.body if not lit.negated]
    negatives = [lit for lit in rule.body if lit.negated]
    compiled = []
    for lit in positives + negatives:
        consts = []
        var_slots = []
        for pos, term in enumerate(lit.args):
            if isinstance(term, Constant):
                consts.append((pos, term.value))
            else:
                var_slots.append((pos, term.name))
        compiled.append(_CompiledLiteral(lit.predicate, lit.negated, consts, var_slots))
    return _CompiledRule(rule, compiled, rule.head.predicate, list(rule.head.args))


def _head_key(compiled: _CompiledRule, subst: dict) -> FactKey:
    args = tuple(
        term.value if isinstance(term, Constant) else subst[term.name]
        for term in compiled.head_terms
    )
    return (compiled.head_pred, args)


def _match_restricted(
    store: FactStore,
    lit: _CompiledLiteral,
    bound: dict[int, object],
    mode: int,
    delta_by_pred: dict[str, dict[FactKey, None]],
) -> Iterable[FactKey]:
    if mode == FULL:
        return store.match(lit.predicate, bound)
    delta_keys = delta_by_pred.get(lit.predicate, {})
    if mode == DELTA:
        if not bound:
            return list(delta_keys)
        return [
            key
            for key in delta_keys
            if all(key[1][pos] == value for pos, value in bound.items())
        ]
    return [key for key in store.match(lit.predicate, bound) if key not in delta_keys]


def _derivations(
    store: FactStore,
    compiled: _CompiledRule,
    modes: list[int] | None = None,
    delta_by_pred: dict[str, dict[FactKey, None]] | None = None,
) -> Iterator[tuple[FactKey, tuple]]:
    """Enumerate (head fact key, supporting positive fact keys) for every
    substitution satisfying the rule body."""
    delta_by_pred = delta_by_pred or {}

    def extend(depth: int, subst: dict, used: tuple) -> Iterator[tuple[FactKey, tuple]]:
        if depth == len(compiled.body):
            yield _head_key(compiled, subst), used
            return
        lit = compiled.body[depth]
        bound = dict(lit.consts)
        free_slots = []
        for pos, name in lit.var_slots:
            if name in subst:
                bound[pos] = subst[name]
            else:
                free_slots.append((pos, name))
        if lit.negated:
            # safety guarantees groundness here; absence check only
            key = (lit.predicate, tuple(bound[i] for i in range(len(bound))))
            fact = store.get(key)
            if fact is None or fact.outdated:
                yield from extend(depth + 1, subst, used)
            return
        mode = modes[depth] if modes else FULL
        for key in _match_restricted(store, lit, bound, mode, delta_by_pred):
            args = key[1]
            if len(args) != len(lit.consts) + len(lit.var_slots):
                continue
            new_subst = subst
            ok = True
            copied = False
            for pos, name in free_slots:
                if name in new_subst:
                    if new_subst[name] != args[pos]:
                        ok = False
                        break
                else:
                    if not copied:
                        new_subst = dict(new_subst)
                        copied = True
                    new_subst[name] = args[pos]
            if ok:
                yield from extend(depth + 1, new_subst, used + (key,))

    yield from extend(0, {}, ())


def evaluate_naive(program: StratifiedProgram, store: FactStore) -> FactStore:
    """Fixpoint by re-running every rule against all facts per stratum."""
    result = store.copy()
    result.discard_derived()
    for stratum in program.strata:
        compiled = [_compile_rule(rule) for rule in stratum]
        changed = True
        while changed:
            changed = False
            for rule in compiled:
                for key, supports in _derivations(result, rule):
                    if key not in result:
                        result.add_derived(key, supports)
                        changed = True
    return result


def evaluate_seminaive(program: StratifiedProgram, store: FactStore) -> FactStore:
    """Fixpoint joining each recursive rule against the per-iteration delta;
    derives the same fact set as :func:`evaluate_naive`."""
    result = store.copy()
    result.discard_derived()
    for stratum in program.strata:
        compiled = [_compile_rule(rule) for rule in stratum]
        stratum_preds = {rule.head_pred for rule in compiled}

        delta: dict[FactKey, None] = {}
        for rule in compiled:
            for key, supports in _derivations(result, rule):
                if key not in result:
                    result.add_derived(key, supports)
                    delta[key] = None

        recursive = [
            (
                rule,
                [
                    i
                    for i, lit in enumerate(rule.body)
                    if not lit.negated and lit.predicate in stratum_preds
                ],
            )
            for rule in compiled
        ]
        while delta:
            delta_by_pred: dict[str, dict[FactKey, None]] = {}
            for key in delta:
                delta_by_pred.setdefault(key[0], {})[key] = None
            new_delta: dict[FactKey, None] = {}
            for rule, occurrences in recursive:
                for pivot in occurrences:
                    modes = []
                    for i, lit in enumerate(rule.body):
                        if lit.negated or lit.predicate not in stratum_preds:
                            modes.append(FULL)
                        elif i < pivot:
                            modes.append(FULL)
                        elif i == pivot:
                            modes.append(DELTA)
                        else:
                            modes.append(OLD)
                    for key, supports in _derivations(
                        result, rule, modes, delta_by_pred
                    ):
                        if key not in result and key not in new_delta:
                            result.add_derived(key, supports)
                            new_delta[key] = None
            delta = new_delta
    return result


def derived_facts(store: FactStore) -> list[StoredFact]:
    """Sorted derived facts of a store."""
    return [f for f in store.sorted_facts() if f.origin == DERIVED]

"""Bisimulation checking over configuration distributions.

Everything here answers one of three questions about a pair of distributions
living in a single System: are they ground bisimilar (state-based or
distribution-based), are they lambda-bisimilar for a given lambda, and what
verified lambda makes them lambda-bisimilar (an upper bound on the
bisimulation distance, never the infimum).

Two checking engines coexist.  The exhaustive engine enumerates extreme
strong moves and matches them against the convex closure of the candidate
relation by exact rational feasibility; it is the literal reading of the
definitions and is used for small systems and for replaying refutations.
The saturated engine applies only to certified systems (acyclic, free of
visible quantum input, every visibly-enabled configuration internally inert,
and tau-confluent as sampled by `confluence_check`); there, every internal
interleaving of a distribution shares one canonical saturation, so matching
collapses to comparing saturated transition-consistent classes.  That
collapse is what keeps protocol-sized witnesses small enough to re-verify.

Soundness of relation verdicts rests on three facts about the convex
closure: lifted transitions are linear and left-decomposable, the canonical
tc-decomposition of a convex mixture groups by the same signatures as its
components, and identity pairs satisfy every clause.  A verified finite
family therefore certifies its whole convex closure (implicit identity
pairs included), which is the relation the reports describe.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import calculus as ca
from .errors import (
    BudgetExceededError,
    CyclicModelError,
    QuantumInputFragmentError,
)
from .lp import combination_weights
from .quantum import _matrix_digest, apply_superop, random_superoperator, trace_distance
from .semantics import (
    TAU,
    ConfigDistribution,
    Configuration,
    Label,
    PLTS,
    System,
    combine,
)

_ATTACK_CAP = 4096      # extreme strong moves enumerated per distribution
_SUBSET_CAP = 4096      # matched-class subsets tried per lambda decomposition
_FAMILY_CAP = 512       # distributions kept by relation-search mode


# ---------------------------------------------------------------------------
# coercions and small helpers


def _system_of(context) -> System:
    if isinstance(context, System):
        return context
    if isinstance(context, PLTS):
        return context.system
    raise TypeError(f"expected a System or PLTS, got {type(context).__name__}")


def _as_dist(system: System, x) -> ConfigDistribution:
    if isinstance(x, Configuration):
        return system.dirac(x)
    if isinstance(x, ConfigDistribution):
        return x
    raise TypeError(f"expected a Configuration or ConfigDistribution, got {type(x).__name__}")


def _sig_key(sig) -> tuple:
    return tuple(sorted(str(label) for label in sig))


def _dist_json(dist: ConfigDistribution) -> list:
    return [[c.index, p] for c, p in sorted(dist, key=lambda kv: kv[0].index)]


def _environment(dist: ConfigDistribution):
    if dist._env is None:
        dist._env = dist.environment()
    return dist._env


def _env_distance(a: ConfigDistribution, b: ConfigDistribution):
    """Trace distance between environments, or None when qv sets differ.

    Arguments are ordered by matrix digest before subtracting so the float
    result is bit-identical under swapping, which the bound-symmetry
    contract relies on.
    """
    if a.held_qubits() != b.held_qubits():
        return None
    _, ma = _environment(a)
    _, mb = _environment(b)
    da, db = _matrix_digest(ma), _matrix_digest(mb)
    if da == db:
        return 0.0
    if db < da:
        ma, mb = mb, ma
    return trace_distance(ma, mb)


# ---------------------------------------------------------------------------
# transition consistency


class TcClass(NamedTuple):
    weight: float
    dist: ConfigDistribution
    signature: frozenset


@dataclass(frozen=True)
class TcDecomposition:
    """Coarsest split of a distribution into transition-consistent parts."""

    source: ConfigDistribution
    classes: tuple

    def to_json(self) -> dict:
        return {
            "classes": [
                {"weight": cls.weight,
                 "signature": list(_sig_key(cls.signature)),
                 "dist": _dist_json(cls.dist)}
                for cls in self.classes
            ]
        }


def is_transition_consistent(mu, context) -> bool:
    """True when every support configuration enables the same weak visible set."""
    system = _system_of(context)
    mu = _as_dist(system, mu)
    signatures = {system.weak_enabled(c) for c in mu.support}
    return len(signatures) <= 1


def tc_decompose(mu, context) -> TcDecomposition:
    """Group the support by enabled-weak-visible signature.

    This is the canonical coarsest tc-decomposition: every other one refines
    it, so matching these classes suffices for matching grouped classes.
    """
    system = _system_of(context)
    mu = _as_dist(system, mu)
    groups = {}
    for c, p in mu:
        bucket = groups.setdefault(system.weak_enabled(c), {})
        bucket[c] = bucket.get(c, 0.0) + p
    classes = []
    for sig in sorted(groups, key=_sig_key):
        probs = groups[sig]
        w = sum(probs.values())
        classes.append(TcClass(w, ConfigDistribution(
            {c: p / w for c, p in probs.items()}), sig))
    return TcDecomposition(mu, tuple(classes))


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class RelationCandidate:
    """A finite family of distribution pairs; symmetric closure implied.

    The relation a candidate denotes is the convex closure of its pairs,
    their mirror images, and all identity pairs; the checkers verify the
    generators and the closure follows from linearity.
    """

    pairs: tuple

    @classmethod
    def coerce(cls, obj, system: System) -> "RelationCandidate":
        if isinstance(obj, RelationCandidate):
            return obj
        pairs = tuple((_as_dist(system, a), _as_dist(system, b)) for a, b in obj)
        return cls(pairs)

    def to_json(self) -> dict:
        return {"pairs": [[_dist_json(a), _dist_json(b)] for a, b in self.pairs]}


@dataclass
class CheckReport:
    """Outcome of a relation check or decision.

    On failure, `clause` names the violated condition (i: quantum variables
    or environment, ii: an unmatched move, iii: decomposition matching),
    `pair` the offending pair, `label`/`attack` the unmatched move, and
    `direction` which side attacked.  `mode` records the engine that
    produced the verdict; refutations replay via `replay_refutation`.
    """

    holds: bool
    mode: str
    detail: str = ""
    clause: Optional[str] = None
    pair: Optional[tuple] = None
    direction: Optional[str] = None
    label: Optional[Label] = None
    attack: Optional[ConfigDistribution] = None
    witness: Optional[RelationCandidate] = None
    lam: Optional[float] = None
    tol: Optional[float] = None

    @property
    def verdict(self) -> str:
        return "holds" if self.holds else "fails"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "mode": self.mode,
            "detail": self.detail,
            "clause": self.clause,
            "pair": None if self.pair is None else
                [_dist_json(self.pair[0]), _dist_json(self.pair[1])],
            "direction": self.direction,
            "label": None if self.label is None else str(self.label),
            "attack": None if self.attack is None else _dist_json(self.attack),
            "witness": None if self.witness is None else self.witness.to_json(),
            "lambda": self.lam,
            "tolerance": self.tol,
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json(), indent=2)


@dataclass
class DistanceBound:
    """A verified upper bound on the bisimulation distance.

    `value` is a lambda for which `witness` passes `check_lambda_relation`;
    the infimum itself is never claimed.  `annotations` carries, per witness
    node, the matched and dropped class signatures and the local
    contributions that produced the bound.
    """

    value: float
    witness: RelationCandidate
    mode: str
    detail: str = ""
    annotations: tuple = ()

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "lambda": self.value,
            "mode": self.mode,
            "detail": self.detail,
            "witness": self.witness.to_json(),
            "annotations": list(self.annotations),
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json(), indent=2)


# ---------------------------------------------------------------------------
# canonical scheduler


def _first_choice(key, n: int) -> int:
    return 0


def _last_choice(key, n: int) -> int:
    return n - 1


def _random_choice(rng: random.Random):
    picks = {}

    def choose(key, n):
        got = picks.get(key)
        if got is None or got >= n:
            got = picks[key] = rng.randrange(n)
        return got

    return choose


class _ClassForm(NamedTuple):
    signature: frozenset
    weight: float
    qv: frozenset
    dist: ConfigDistribution
    children: tuple  # ((label, _Form), ...) in label order


class _Form(NamedTuple):
    sat: ConfigDistribution
    classes: tuple  # _ClassForm in signature order


class _Canon:
    """Canonical-scheduler engine: saturation, derivatives, behaviour forms.

    The scheduler resolves internal nondeterminism per configuration with
    `chooser` (first-transition by default) and saturates each support
    configuration independently; on confluent systems every schedule agrees
    with this one.  All tables memoize against the owning system's interned
    configurations.
    """

    _MISSING = object()

    def __init__(self, system: System, chooser=_first_choice):
        self.system = system
        self.chooser = chooser
        self._sat = {}
        self._der = {}
        self._forms = {}

    def config_sat(self, config: Configuration) -> ConfigDistribution:
        got = self._sat.get(config, self._MISSING)
        if got is self._MISSING:
            self._sat[config] = None
            taus = self.system.tau_transitions(config)
            if not taus:
                got = self.system.dirac(config)
            else:
                t = taus[self.chooser(config, len(taus))]
                self.system._spend(len(t.dist.probs))
                got = combine((q, self.config_sat(d)) for d, q in t.dist)
            self._sat[config] = got
        elif got is None:
            raise CyclicModelError(
                "internal cycle during canonical saturation; "
                "the canonical scheduler needs an acyclic internal graph")
        return got

    def saturate(self, dist: ConfigDistribution) -> ConfigDistribution:
        return combine((p, self.config_sat(c)) for c, p in dist)

    def derivative(self, dist: ConfigDistribution, label: Label) -> ConfigDistribution:
        """Fire `label` on every support configuration, then saturate.

        Defined on saturated distributions whose support all enables the
        label; support configurations are internally inert there, so the
        weakly enabled label is a strong transition.
        """
        key = (dist.digest, label)
        got = self._der.get(key)
        if got is None:
            parts = []
            for c, p in dist:
                moves = [t for t in self.system.step(c) if t.label == label]
                t = moves[self.chooser((c, label), len(moves))]
                parts.append((p, t.dist))
            got = self._der[key] = self.saturate(combine(parts))
        return got

    def form(self, dist: ConfigDistribution) -> _Form:
        sat = self.saturate(dist)
        got = self._forms.get(sat.digest)
        if got is None:
            decomp = tc_decompose(sat, self.system)
            classes = []
            for cls in decomp.classes:
                children = []
                for label in sorted(cls.signature, key=str):
                    children.append((label, self.form(self.derivative(cls.dist, label))))
                classes.append(_ClassForm(cls.signature, cls.weight,
                                          cls.dist.held_qubits(), cls.dist,
                                          tuple(children)))
            got = self._forms[sat.digest] = _Form(sat, tuple(classes))
        return got


def _form_key(form: _Form) -> tuple:
    return (form.sat.digest, tuple(
        (_sig_key(cls.signature), round(cls.weight, 10), tuple(sorted(cls.qv)),
         tuple((str(label), _form_key(child)) for label, child in cls.children))
        for cls in form.classes))


# ---------------------------------------------------------------------------
# certification: the preconditions of the canonical collapse


def _prepare(system: System, dists, max_configs=None) -> list:
    """Reachable configurations, with the decidable-fragment checks.

    Raises when a visible quantum input is reachable (the decision
    procedures cover the quantum-input-free fragment; inputs synchronised
    away under restriction are internal and fine) or when the graph has a
    cycle.
    """
    roots = [c for d in dists for c in d.support]
    configs = system.reachable(roots, max_configs=max_configs)
    for c in configs:
        for t in system.step(c):
            if t.label.kind == Label.QIN:
                raise QuantumInputFragmentError(
                    f"reachable visible quantum input {t.label} at {c!r}; "
                    "restrict the channel or use the relation checkers")
    if not system.is_acyclic(roots):
        raise CyclicModelError("the reachable transition graph has a cycle")
    return configs


def _scan_determinism(system: System, configs) -> tuple:
    """(deterministic, tau_normal): per-config scheduling freedom."""
    deterministic = True
    tau_normal = True
    for c in configs:
        taus = system.tau_transitions(c)
        vis = system.visible_transitions(c)
        if taus and vis:
            tau_normal = False
        if len(taus) > 1:
            deterministic = False
        seen = set()
        for t in vis:
            if t.label in seen:
                deterministic = False
            seen.add(t.label)
    return deterministic, tau_normal


def _confluent(system: System, dists, trials: int, seed: int) -> bool:
    choosers = [_first_choice, _last_choice]
    for i in range(max(0, trials - 2)):
        choosers.append(_random_choice(random.Random(seed * 1021 + i)))
    keys = None
    for chooser in choosers:
        canon = _Canon(system, chooser)
        got = tuple(_form_key(canon.form(d)) for d in dists)
        if keys is None:
            keys = got
        elif got != keys:
            return False
    return True


def confluence_check(context, trials: int = 4, seed: int = 0, roots=None) -> bool:
    """Do canonical forms survive re-scheduling of internal choices?

    Recomputes the behaviour forms of the roots under `trials` tie-breaking
    orders (first, last, and seeded random ones) and compares them exactly.
    True means the canonical scheduler's answers are schedule-independent
    on this graph, which is the completeness premise of canonical mode.
    """
    system = _system_of(context)
    if roots is None:
        if isinstance(context, PLTS):
            roots = [context.root]
        else:
            raise ValueError("pass a PLTS or explicit roots")
    dists = [_as_dist(system, r) for r in roots]
    _prepare(system, dists)
    return _confluent(system, dists, trials, seed)


def _certified(system: System, dists, configs, trials: int = 3, seed: int = 0):
    """Whether the canonical collapse is justified here, with a reason."""
    deterministic, tau_normal = _scan_determinism(system, configs)
    if not tau_normal:
        return False, "a visibly-enabled configuration has internal moves"
    if deterministic:
        return True, "certified: scheduling is deterministic"
    if _confluent(system, dists, trials, seed):
        return True, f"certified: confluent under {max(2, trials)} schedules (seed {seed})"
    return False, "internal nondeterminism is not confluent"


# ---------------------------------------------------------------------------
# feasibility queries: convex-closure membership and weak-move matching


def _member_lin(pairs, mu: ConfigDistribution, nu: ConfigDistribution) -> bool:
    """Is (mu, nu) a convex combination of `pairs` plus identity pairs?"""
    # all coefficients are nonnegative, so a usable pair cannot put mass
    # outside the target supports; dropping the rest is exact
    left = {c.index for c in mu.support}
    right = {d.index for d in nu.support}
    columns = []
    for mk, nk in pairs:
        if any(c.index not in left for c in mk.support):
            continue
        if any(d.index not in right for d in nk.support):
            continue
        col = {}
        for c, p in mk:
            col[("L", c.index)] = col.get(("L", c.index), 0.0) + p
        for d, q in nk:
            col[("R", d.index)] = col.get(("R", d.index), 0.0) + q
        columns.append(col)
    for c in mu.support:
        if nu.probability(c) > 0.0:
            columns.append({("L", c.index): 1.0, ("R", c.index): 1.0})
    target = {("L", c.index): p for c, p in mu}
    for d, q in nu:
        target[("R", d.index)] = q
    return combination_weights(columns, target) is not None


def _weak_extremes(system: System, config: Configuration, label: Label):
    if label == TAU:
        return system.weak_tau_extremes(config)
    return system.weak_visible_extremes(config, label)


def _match_weak(system: System, pairs, attack: ConfigDistribution,
                defender: ConfigDistribution, label: Label) -> bool:
    """Can the defender weakly answer `attack` inside the relation's closure?

    Searches for a weak hatted `label` derivative nu' of `defender` with
    (attack, nu') in the convex closure of `pairs` plus identities.  Weak
    derivatives of a distribution factor per support configuration (lifted
    transitions are linear and left-decomposable), so nu' ranges over
    independent convex mixtures of each configuration's extreme weak moves;
    the whole question is one exact-rational feasibility problem.
    """
    per_config = []
    for d in defender.support:
        extremes = _weak_extremes(system, d, label)
        if not extremes:
            return False
        per_config.append((d, extremes))

    # attack rows only ever receive nonnegative mass, so pairs reaching
    # outside the attack's support can never be used; dropping them is exact
    left = {c.index for c in attack.support}
    columns = []
    for mk, nk in pairs:
        if any(c.index not in left for c in mk.support):
            continue
        col = {}
        for c, p in mk:
            col[("L", c.index)] = col.get(("L", c.index), 0.0) + p
        for d, q in nk:
            col[("R", d.index)] = col.get(("R", d.index), 0.0) + q
        columns.append(col)
    for c in attack.support:  # identity carriers
        columns.append({("L", c.index): 1.0, ("R", c.index): 1.0})
    for d, extremes in per_config:
        for e in extremes:
            col = {("D", d.index): 1.0}
            for y, q in e:
                col[("R", y.index)] = col.get(("R", y.index), 0.0) - q
            columns.append(col)

    target = {("L", c.index): p for c, p in attack}
    for d, p in defender:
        target[("D", d.index)] = p
    return combination_weights(columns, target) is not None


def _match_decomposition(system: System, pairs, decomp: TcDecomposition,
                         defender: ConfigDistribution, lam: float, tol: float) -> bool:
    """Can the defender internally split to match the attacker's classes?

    Searches for a weak tau derivative of `defender` of the form
    sum_i p_i nu_i with (mu_i, nu_i) in the closure for every matched class
    and at most `lam` attacker mass unmatched.  Matched subsets are tried in
    order of decreasing matched mass.
    """
    classes = decomp.classes
    per_config = []
    for d in defender.support:
        extremes = system.weak_tau_extremes(d)
        per_config.append((d, extremes))
    free_keys = {("R", y.index)
                 for _, extremes in per_config for e in extremes for y, _ in e}

    def feasible(matched):
        columns = []
        for i in matched:
            cls = classes[i]
            # class rows only receive nonnegative mass: pairs reaching
            # outside the class support can never carry weight
            left = {c.index for c in cls.dist.support}
            for mk, nk in pairs:
                if any(c.index not in left for c in mk.support):
                    continue
                col = {}
                for c, p in mk:
                    col[("L", i, c.index)] = col.get(("L", i, c.index), 0.0) + p
                for d, q in nk:
                    col[("R", d.index)] = col.get(("R", d.index), 0.0) + q
                columns.append(col)
            for c in cls.dist.support:
                columns.append({("L", i, c.index): 1.0, ("R", c.index): 1.0})
        for d, extremes in per_config:
            for e in extremes:
                col = {("D", d.index): 1.0}
                for y, q in e:
                    col[("R", y.index)] = col.get(("R", y.index), 0.0) - q
                columns.append(col)
        if len(matched) < len(classes):
            for key in sorted(free_keys, key=repr):  # defender mass on unmatched classes
                columns.append({key: 1.0})
        target = {}
        for i in matched:
            cls = classes[i]
            for c, p in cls.dist:
                target[("L", i, c.index)] = cls.weight * p
        for d, p in defender:
            target[("D", d.index)] = p
        return combination_weights(columns, target) is not None

    indices = range(len(classes))
    options = []
    for r in range(len(classes), -1, -1):
        for matched in itertools.combinations(indices, r):
            unmatched_mass = sum(classes[i].weight for i in indices if i not in matched)
            if unmatched_mass <= lam + tol:
                options.append((unmatched_mass, matched))
            if len(options) > _SUBSET_CAP:
                raise BudgetExceededError(
                    "too many matched-class subsets", budget=_SUBSET_CAP)
    options.sort(key=lambda ow: (ow[0], tuple(ow[1])))
    return any(feasible(matched) for _, matched in options)


def _strong_attacks(system: System, dist: ConfigDistribution, cache: dict) -> tuple:
    """Extreme strong hatted moves of a distribution.

    Internal attacks let each support configuration halt or fire one of its
    tau alternatives (the all-halt combination is dropped: it is matched
    reflexively); a visible attack needs every support configuration to
    fire the label at once.  Extreme points suffice because the set of
    matchable attacks is convex.
    """
    got = cache.get(dist.digest)
    if got is not None:
        return got
    support = dist.support
    found = {}

    options = []
    for c in support:
        options.append([system.dirac(c)] +
                       [t.dist for t in system.tau_transitions(c)])
    total = 1
    for opts in options:
        total *= len(opts)
        if total > _ATTACK_CAP:
            raise BudgetExceededError(
                "attack enumeration exceeded the cap", budget=_ATTACK_CAP)
    first = True
    for pick in itertools.product(*options):
        if first:
            first = False
            continue
        moved = combine((dist.probability(c), d) for c, d in zip(support, pick))
        found.setdefault((TAU, moved.digest), (TAU, moved))

    shared = None
    for c in support:
        labels = {t.label for t in system.visible_transitions(c)}
        shared = labels if shared is None else shared & labels
        if not shared:
            break
    for label in sorted(shared or (), key=str):
        options = [[t.dist for t in system.step(c) if t.label == label]
                   for c in support]
        total = 1
        for opts in options:
            total *= len(opts)
            if total > _ATTACK_CAP:
                raise BudgetExceededError(
                    "attack enumeration exceeded the cap", budget=_ATTACK_CAP)
        for pick in itertools.product(*options):
            moved = combine((dist.probability(c), d) for c, d in zip(support, pick))
            found.setdefault((label, moved.digest), (label, moved))

    got = cache[dist.digest] = tuple(found.values())
    return got


# ---------------------------------------------------------------------------
# relation checking


def _oriented(pairs) -> tuple:
    out = []
    seen = set()
    for a, b in pairs:
        for x, y in ((a, b), (b, a)):
            key = (x.digest, y.digest)
            if key not in seen:
                seen.add(key)
                out.append((x, y))
    return tuple(out)


def _check_exhaustive(system: System, relation: RelationCandidate,
                      lam: float, tol: float) -> CheckReport:
    rel = _oriented(relation.pairs)
    attack_cache = {}
    for x, y in rel:
        if x.held_qubits() != y.held_qubits():
            return CheckReport(
                False, "exhaustive", clause="i", pair=(x, y), lam=lam, tol=tol,
                detail=f"quantum variables differ: {sorted(x.held_qubits())} "
                       f"vs {sorted(y.held_qubits())}")
        dist = _env_distance(x, y)
        if dist > lam + tol:
            return CheckReport(
                False, "exhaustive", clause="i", pair=(x, y), lam=lam, tol=tol,
                detail=f"environment trace distance {dist:.6g} exceeds {lam + tol:.6g}")
        for label, attack in _strong_attacks(system, x, attack_cache):
            if not _match_weak(system, rel, attack, y, label):
                return CheckReport(
                    False, "exhaustive", clause="ii", pair=(x, y), lam=lam, tol=tol,
                    direction="left", label=label, attack=attack,
                    detail=f"strong {label} move has no weak match in the closure")
        if not is_transition_consistent(x, system):
            decomp = tc_decompose(x, system)
            if not _match_decomposition(system, rel, decomp, y, lam, tol):
                return CheckReport(
                    False, "exhaustive", clause="iii", pair=(x, y), lam=lam, tol=tol,
                    direction="left", label=TAU,
                    detail="no internal split of the right side matches the "
                           "transition-consistent classes within the allowed mass")
    return CheckReport(True, "exhaustive", lam=lam, tol=tol, witness=relation,
                       detail=f"{len(rel)} oriented pairs verified by enumeration")


def _check_saturated(system: System, relation: RelationCandidate,
                     lam: float, tol: float, certificate: str) -> CheckReport:
    canon = _Canon(system)
    digests = {(a.digest, b.digest) for a, b in relation.pairs}
    digests |= {(b, a) for a, b in digests}
    rel = _oriented(relation.pairs)
    memo = {}

    def related(a, b):
        key = (a.digest, b.digest)
        if key[0] == key[1] or key in digests:
            return True
        got = memo.get(key)
        if got is None:
            got = memo[key] = _member_lin(rel, a, b)
        return got

    for x, y in rel:
        if x.held_qubits() != y.held_qubits():
            return CheckReport(
                False, "saturated", clause="i", pair=(x, y), lam=lam, tol=tol,
                detail=f"quantum variables differ: {sorted(x.held_qubits())} "
                       f"vs {sorted(y.held_qubits())}")
        dist = _env_distance(x, y)
        if dist > lam + tol:
            return CheckReport(
                False, "saturated", clause="i", pair=(x, y), lam=lam, tol=tol,
                detail=f"environment trace distance {dist:.6g} exceeds {lam + tol:.6g}")

        sx, sy = canon.saturate(x), canon.saturate(y)
        if sx.digest != x.digest or sy.digest != y.digest:
            # internal attacks re-converge to the saturation on certified
            # systems, so the saturated pair carries this pair's obligations
            if not related(sx, sy):
                return CheckReport(
                    False, "saturated", clause="ii", pair=(x, y), lam=lam, tol=tol,
                    direction="left", label=TAU, attack=sx,
                    detail="canonical saturation of the pair is not in the closure")
            continue

        left = tc_decompose(x, system)
        right = tc_decompose(y, system)
        by_sig = {cls.signature: cls for cls in right.classes}

        shared_x = frozenset.intersection(*(cls.signature for cls in left.classes))
        shared_y = frozenset.intersection(*(cls.signature for cls in right.classes))
        if shared_x != shared_y:
            odd = sorted(shared_x ^ shared_y, key=str)[0]
            side = x if odd in shared_x else y
            return CheckReport(
                False, "saturated", clause="ii", pair=(x, y), lam=lam, tol=tol,
                direction="left" if odd in shared_x else "right", label=odd,
                attack=canon.derivative(side, odd),
                detail=f"whole-distribution move {odd} is enabled on one side only")
        for label in sorted(shared_x, key=str):
            dx, dy = canon.derivative(x, label), canon.derivative(y, label)
            if not related(dx, dy):
                return CheckReport(
                    False, "saturated", clause="ii", pair=(x, y), lam=lam, tol=tol,
                    direction="left", label=label, attack=dx,
                    detail=f"whole-distribution {label} derivatives are unrelated")

        matched = 0.0
        for cls in left.classes:
            partner = by_sig.get(cls.signature)
            if partner is None or cls.dist.held_qubits() != partner.dist.held_qubits():
                continue
            if not related(cls.dist, partner.dist):
                continue
            ok = True
            for label in sorted(cls.signature, key=str):
                if not related(canon.derivative(cls.dist, label),
                               canon.derivative(partner.dist, label)):
                    ok = False
                    break
            if ok:
                matched += min(cls.weight, partner.weight)
        if 1.0 - matched > lam + tol:
            return CheckReport(
                False, "saturated", clause="iii", pair=(x, y), lam=lam, tol=tol,
                direction="left", label=TAU,
                detail=f"only {matched:.6g} class mass matches; "
                       f"{1.0 - matched:.6g} exceeds the allowed {lam + tol:.6g}")

    return CheckReport(True, "saturated", lam=lam, tol=tol, witness=relation,
                       detail=f"{len(rel)} oriented pairs verified; {certificate}")


def check_lambda_relation(relation, lam: float, context, tol: float = None,
                          mode: str = "auto", trials: int = 3, seed: int = 0) -> CheckReport:
    """Verify that a pair family is a lambda-bisimulation up to lambda.

    Every pair, in both orientations, must keep quantum variables equal and
    environments within lambda in trace distance; strong hatted moves must
    be weakly matched inside the convex closure of the family; and when the
    left side is not transition consistent, its canonical classes must be
    matched by an internal split of the right side with at most lambda mass
    unmatched.  At lambda 0 this is the ground-bisimulation check.

    `mode` picks the engine: "exhaustive" enumerates attacks literally,
    "saturated" uses the canonical collapse and requires certification,
    "auto" certifies and falls back to enumeration.
    """
    system = _system_of(context)
    tol = system.tol if tol is None else tol
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    relation = RelationCandidate.coerce(relation, system)
    if not relation.pairs:
        return CheckReport(True, "exhaustive", lam=lam, tol=tol,
                           witness=relation, detail="empty relation holds vacuously")

    dists = [d for pair in relation.pairs for d in pair]
    if mode == "exhaustive":
        return _check_exhaustive(system, relation, lam, tol)
    configs = system.reachable([c for d in dists for c in d.support])
    quantum_input = any(
        t.label.kind == Label.QIN for c in configs for t in system.step(c))
    if mode == "saturated":
        if quantum_input:
            raise QuantumInputFragmentError(
                "saturated checking covers the quantum-input-free fragment")
        if not system.is_acyclic([c for d in dists for c in d.support]):
            raise CyclicModelError("saturated checking needs an acyclic graph")
        ok, why = _certified(system, dists, configs, trials, seed)
        return _check_saturated(system, relation, lam, tol,
                                why if ok else f"forced ({why})")
    if mode != "auto":
        raise ValueError(f"unknown mode {mode!r}")
    if not quantum_input and system.is_acyclic([c for d in dists for c in d.support]):
        ok, why = _certified(system, dists, configs, trials, seed)
        if ok:
            return _check_saturated(system, relation, lam, tol, why)
    return _check_exhaustive(system, relation, lam, tol)


def check_ground_bisim_relation(relation, context, tol: float = None,
                                mode: str = "auto") -> CheckReport:
    """Verify a candidate ground bisimulation (lambda 0)."""
    return check_lambda_relation(relation, 0.0, context, tol=tol, mode=mode)


# ---------------------------------------------------------------------------
# deciding distribution bisimilarity


def _compare_forms(canon: _Canon, fl: _Form, fr: _Form, tol: float,
                   pairs: list, seen: set):
    """Structural equality of behaviour forms, with failure evidence.

    Returns None when the forms agree within tolerance, recording every
    compared pair of distributions in `pairs`; otherwise returns the
    failing CheckReport fragment as a dict of keyword arguments.
    """
    key = (fl.sat.digest, fr.sat.digest)
    if key in seen:
        return None
    seen.add(key)
    pairs.append((fl.sat, fr.sat))

    held_l, held_r = fl.sat.held_qubits(), fr.sat.held_qubits()
    if held_l != held_r:
        return dict(clause="i", pair=(fl.sat, fr.sat),
                    detail=f"quantum variables differ: {sorted(held_l)} vs {sorted(held_r)}")
    dist = _env_distance(fl.sat, fr.sat)
    if dist > tol:
        return dict(clause="i", pair=(fl.sat, fr.sat),
                    detail=f"environment trace distance {dist:.6g} exceeds {tol:.6g}")

    by_sig_l = {cls.signature: cls for cls in fl.classes}
    by_sig_r = {cls.signature: cls for cls in fr.classes}
    for sig, cls, side, other in (
            [(c.signature, c, "left", by_sig_r) for c in fl.classes] +
            [(c.signature, c, "right", by_sig_l) for c in fr.classes]):
        if sig in other:
            continue
        visible = sorted((l for l in sig if l.visible), key=str)
        if visible:
            evidence = (cls.dist, fr.sat) if side == "left" else (fl.sat, cls.dist)
            return dict(clause="ii", direction=side, label=visible[0],
                        pair=evidence,
                        attack=canon.derivative(cls.dist, visible[0]),
                        detail=f"class with weight {cls.weight:.6g} enables "
                               f"{visible[0]} on the {side} side only")
        return dict(clause="iii", direction=side, pair=(fl.sat, fr.sat),
                    detail=f"the {side} side can stall silently with mass "
                           f"{cls.weight:.6g}, the other side cannot")

    for sig in sorted(by_sig_l, key=_sig_key):
        cl, cr = by_sig_l[sig], by_sig_r[sig]
        if abs(cl.weight - cr.weight) > tol:
            return dict(clause="iii", pair=(fl.sat, fr.sat),
                        detail=f"class {list(_sig_key(sig))} has weight "
                               f"{cl.weight:.6g} vs {cr.weight:.6g}")
        if cl.qv != cr.qv:
            return dict(clause="i", pair=(cl.dist, cr.dist),
                        detail=f"class quantum variables differ: "
                               f"{sorted(cl.qv)} vs {sorted(cr.qv)}")
        dist = _env_distance(cl.dist, cr.dist)
        if dist > tol:
            return dict(clause="i", pair=(cl.dist, cr.dist),
                        detail=f"class environment trace distance {dist:.6g} "
                               f"exceeds {tol:.6g}")
        pairs.append((cl.dist, cr.dist))
        for (label, child_l), (_, child_r) in zip(cl.children, cr.children):
            bad = _compare_forms(canon, child_l, child_r, tol, pairs, seen)
            if bad is not None:
                return bad

    if len(fl.classes) > 1:
        # whole-distribution moves shared by every class, so the witness
        # carries their mixed derivatives as literal pairs
        shared = frozenset.intersection(*(c.signature for c in fl.classes))
        for label in sorted(shared, key=str):
            pairs.append((canon.derivative(fl.sat, label),
                          canon.derivative(fr.sat, label)))
    return None


def _unique_pairs(pairs) -> tuple:
    out = []
    seen = set()
    for a, b in pairs:
        key = (a.digest, b.digest)
        if key not in seen:
            seen.add(key)
            out.append((a, b))
    return tuple(out)


def _decide_canonical(system: System, mu, nu, tol: float, certificate: str,
                      chooser=_first_choice) -> CheckReport:
    canon = _Canon(system, chooser)
    pairs = [(mu, nu)]

    if mu.held_qubits() != nu.held_qubits():
        return CheckReport(
            False, "canonical", clause="i", pair=(mu, nu), tol=tol,
            detail=f"quantum variables differ: {sorted(mu.held_qubits())} "
                   f"vs {sorted(nu.held_qubits())}; {certificate}")
    dist = _env_distance(mu, nu)
    if dist > tol:
        return CheckReport(
            False, "canonical", clause="i", pair=(mu, nu), tol=tol,
            detail=f"environment trace distance {dist:.6g} exceeds {tol:.6g}; {certificate}")

    bad = _compare_forms(canon, canon.form(mu), canon.form(nu), tol, pairs, set())
    if bad is not None:
        bad.setdefault("pair", (mu, nu))
        detail = bad.pop("detail", "")
        return CheckReport(False, "canonical", tol=tol,
                           detail=f"{detail}; {certificate}", **bad)
    witness = RelationCandidate(_unique_pairs(pairs))
    return CheckReport(True, "canonical", tol=tol, witness=witness,
                       detail=f"behaviour forms coincide; {certificate}")


def _relation_search(system: System, mu, nu, tol: float) -> CheckReport:
    """Greatest fixpoint over a finite family of reachable distributions.

    The family holds the queried pair, every point distribution, every
    one-step target, canonical saturations, and the canonical classes of
    each member.  Pairs violating a clause against the surviving family are
    deleted until stable; the verdict is whether the queried pair survives.
    Complete only as far as the family reaches, which covers the acyclic
    desk-scale systems this mode is meant for.
    """
    family = {}

    def add(d):
        if d.digest not in family:
            if len(family) >= _FAMILY_CAP:
                raise BudgetExceededError(
                    "relation-search family exceeded its cap", budget=_FAMILY_CAP)
            family[d.digest] = d

    add(mu), add(nu)
    configs = system.reachable([c for d in (mu, nu) for c in d.support])
    for c in configs:
        add(system.dirac(c))
        for t in system.step(c):
            add(t.dist)
    canon = _Canon(system)
    for d in (mu, nu):
        add(canon.saturate(d))
    for d in list(family.values()):
        for cls in tc_decompose(d, system).classes:
            add(cls.dist)

    members = sorted(family.values(), key=lambda d: d.digest)
    # (is-tc, shared signature); tc members related in any ground
    # bisimulation must agree on their weak visible sets, so mismatched
    # tc pairs can be discarded before any feasibility work
    shapes = []
    for m in members:
        sigs = {system.weak_enabled(c) for c in m.support}
        shapes.append(sigs.pop() if len(sigs) == 1 else None)
    alive = set()
    for i, a in enumerate(members):
        for j in range(i, len(members)):
            b = members[j]
            if a.held_qubits() != b.held_qubits():
                continue
            if (shapes[i] is not None and shapes[j] is not None
                    and shapes[i] != shapes[j]):
                continue
            e = _env_distance(a, b)
            if e is not None and e <= tol:
                alive.add((i, j))

    attack_cache = {}

    def violation(a, b, rel):
        for x, y in ((a, b), (b, a)):
            for label, attack in _strong_attacks(system, x, attack_cache):
                if not _match_weak(system, rel, attack, y, label):
                    return dict(clause="ii", label=label, attack=attack,
                                direction="left" if x is a else "right",
                                detail=f"strong {label} move has no weak match")
            if not is_transition_consistent(x, system):
                if not _match_decomposition(system, rel, tc_decompose(x, system),
                                            y, 0.0, tol):
                    return dict(clause="iii", direction="left" if x is a else "right",
                                detail="transition-consistent classes unmatched")
        return None

    changed = True
    while changed:
        changed = False
        rel = _oriented([(members[i], members[j]) for i, j in sorted(alive)])
        # chaotic sweep: deletions shrink the relation, so survivors are
        # re-validated on the next pass and the final pass is exact
        for i, j in sorted(alive):
            if violation(members[i], members[j], rel) is not None:
                alive.discard((i, j))
                changed = True

    pos = {m.digest: k for k, m in enumerate(members)}
    root = tuple(sorted((pos[mu.digest], pos[nu.digest])))
    if root in alive or mu.digest == nu.digest:
        witness = RelationCandidate(tuple(
            (members[i], members[j]) for i, j in sorted(alive)))
        return CheckReport(True, "relation-search", tol=tol, witness=witness,
                           detail=f"{len(alive)} pairs survive over a family of "
                                  f"{len(members)} distributions")
    rel = _oriented([(members[i], members[j]) for i, j in sorted(alive)])
    if mu.held_qubits() != nu.held_qubits():
        return CheckReport(False, "relation-search", clause="i", pair=(mu, nu),
                           tol=tol, detail="quantum variables differ")
    e = _env_distance(mu, nu)
    if e > tol:
        return CheckReport(False, "relation-search", clause="i", pair=(mu, nu),
                           tol=tol, detail=f"environment trace distance {e:.6g}")
    bad = violation(mu, nu, rel + ((mu, nu), (nu, mu)))
    detail = bad.pop("detail", "") if bad else "deleted during refinement"
    return CheckReport(False, "relation-search", pair=(mu, nu), tol=tol,
                       detail=detail, **(bad or {}))


def decide_bisim(mu, nu, context, tol: float = None, mode: str = "auto") -> CheckReport:
    """Decide distribution-based ground bisimilarity of two distributions.

    Preconditions: the reachable graph is acyclic and free of visible
    quantum input.  Canonical mode compares behaviour forms under the
    canonical scheduler, which is complete on certified systems;
    relation-search mode runs the greatest-fixpoint refinement.  "auto"
    certifies first and picks accordingly; the report records the mode.
    """
    system = _system_of(context)
    tol = system.tol if tol is None else tol
    mu, nu = _as_dist(system, mu), _as_dist(system, nu)
    configs = _prepare(system, (mu, nu))
    if mode not in ("auto", "canonical", "relation-search"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "relation-search":
        return _relation_search(system, mu, nu, tol)
    ok, why = _certified(system, (mu, nu), configs)
    if mode == "canonical":
        return _decide_canonical(system, mu, nu, tol,
                                 why if ok else f"forced canonical ({why})")
    if ok:
        return _decide_canonical(system, mu, nu, tol, why)
    return _relation_search(system, mu, nu, tol)


# ---------------------------------------------------------------------------
# deciding state-based bisimilarity


def decide_state_based(c, d, context, tol: float = None) -> CheckReport:
    """Decide state-based ground bisimilarity of two configurations.

    Greatest-fixpoint refinement over configuration pairs: candidates agree
    on quantum variables and environment, and every strong move of one side
    must be weakly matched by the other with successor distributions in the
    lifting of the surviving candidates.  Complete on acyclic
    quantum-input-free systems.
    """
    system = _system_of(context)
    tol = system.tol if tol is None else tol
    if isinstance(c, ConfigDistribution):
        (c,) = c.support
    if isinstance(d, ConfigDistribution):
        (d,) = d.support
    _prepare(system, (system.dirac(c), system.dirac(d)))

    configs = system.reachable([c, d])
    sigs = [system.weak_enabled(x) for x in configs]
    alive = set()
    for i, a in enumerate(configs):
        for j in range(i, len(configs)):
            b = configs[j]
            if a.qv != b.qv or sigs[i] != sigs[j]:
                continue
            e = _env_distance(system.dirac(a), system.dirac(b))
            if e is not None and e <= tol:
                alive.add((i, j))

    def rel_pairs():
        out = []
        for i, j in sorted(alive):
            out.append((system.dirac(configs[i]), system.dirac(configs[j])))
            if i != j:
                out.append((system.dirac(configs[j]), system.dirac(configs[i])))
        return tuple(out)

    def violation(a, b, rel):
        for x, y in ((a, b), (b, a)):
            for t in system.step(x):
                if not _match_weak(system, rel, t.dist, system.dirac(y), t.label):
                    return dict(clause="ii", label=t.label, attack=t.dist,
                                direction="left" if x is a else "right",
                                detail=f"strong {t.label} move of "
                                       f"{ca.pretty(x.term)} has no weak match")
        return None

    changed = True
    while changed:
        changed = False
        rel = rel_pairs()
        # chaotic sweep: deletions shrink the relation, so survivors are
        # re-validated on the next pass and the final pass is exact
        for i, j in sorted(alive):
            if violation(configs[i], configs[j], rel) is not None:
                alive.discard((i, j))
                changed = True

    index = {x: i for i, x in enumerate(configs)}
    root = tuple(sorted((index[c], index[d])))
    if c is d or root in alive:
        witness = RelationCandidate(rel_pairs())
        return CheckReport(True, "state-based", tol=tol, witness=witness,
                           detail=f"{len(alive)} configuration pairs survive")
    if c.qv != d.qv:
        return CheckReport(False, "state-based", clause="i", tol=tol,
                           pair=(system.dirac(c), system.dirac(d)),
                           detail=f"quantum variables differ: {sorted(c.qv)} "
                                  f"vs {sorted(d.qv)}")
    e = _env_distance(system.dirac(c), system.dirac(d))
    if e > tol:
        return CheckReport(False, "state-based", clause="i", tol=tol,
                           pair=(system.dirac(c), system.dirac(d)),
                           detail=f"environment trace distance {e:.6g} exceeds {tol:.6g}")
    bad = violation(c, d, rel_pairs() + ((system.dirac(c), system.dirac(d)),
                                         (system.dirac(d), system.dirac(c))))
    detail = bad.pop("detail", "") if bad else "deleted during refinement"
    return CheckReport(False, "state-based", tol=tol,
                       pair=(system.dirac(c), system.dirac(d)),
                       detail=detail, **(bad or {}))


# ---------------------------------------------------------------------------
# distance bounds


def distance_upper_bound(mu, nu, context, tol: float = None) -> DistanceBound:
    """A verified upper bound on the bisimulation distance of two distributions.

    On certified systems, walks both canonical behaviour forms in parallel
    and takes the maximum over all visited pairs of the environment trace
    distance and the transition-consistent class mass left unmatched; the
    per-node matched subset is chosen greedily to minimise that maximum.
    The visited pairs form a witness passing `check_lambda_relation` at the
    returned value.  Elsewhere the bound degrades to 0 (when relation-search
    proves bisimilarity) or the trivial 1.
    """
    system = _system_of(context)
    tol = system.tol if tol is None else tol
    mu, nu = _as_dist(system, mu), _as_dist(system, nu)
    configs = _prepare(system, (mu, nu))
    ok, why = _certified(system, (mu, nu), configs)
    if not ok:
        report = _relation_search(system, mu, nu, tol)
        if report.holds:
            return DistanceBound(0.0, report.witness, "relation-search",
                                 detail=f"bisimilar by refinement; {why}")
        return DistanceBound(1.0, RelationCandidate(()), "relation-search",
                             detail=f"trivial bound; {why}; {report.detail}")

    canon = _Canon(system)
    memo = {}
    annotations = []

    def rec(fl: _Form, fr: _Form):
        key = (fl.sat.digest, fr.sat.digest)
        got = memo.get(key)
        if got is not None:
            return got
        node_pairs = [(fl.sat, fr.sat)]
        if fl.sat.held_qubits() != fr.sat.held_qubits():
            got = memo[key] = (1.0, ())
            return got
        lam = _env_distance(fl.sat, fr.sat)

        shared_l = frozenset.intersection(*(c.signature for c in fl.classes))
        shared_r = frozenset.intersection(*(c.signature for c in fr.classes))
        if shared_l != shared_r:
            got = memo[key] = (1.0, ())
            return got
        for label in sorted(shared_l, key=str):
            sub, sub_pairs = rec(canon.form(canon.derivative(fl.sat, label)),
                                 canon.form(canon.derivative(fr.sat, label)))
            lam = max(lam, sub)
            node_pairs.extend(sub_pairs)

        by_sig_r = {c.signature: c for c in fr.classes}
        candidates = []
        for cl in fl.classes:
            cr = by_sig_r.get(cl.signature)
            if cr is None or cl.qv != cr.qv:
                continue
            env = _env_distance(cl.dist, cr.dist)
            pairs_s = [(cl.dist, cr.dist)]
            worst = env
            for (label, child_l), (_, child_r) in zip(cl.children, cr.children):
                sub, sub_pairs = rec(child_l, child_r)
                worst = max(worst, sub)
                pairs_s.extend(sub_pairs)
            candidates.append((worst, min(cl.weight, cr.weight),
                               _sig_key(cl.signature), cl.signature, pairs_s))

        # pick the prefix (by per-class cost) minimising the overall maximum
        candidates.sort(key=lambda item: (item[0], item[2]))
        best_lam, best_k = 1.0, 0
        for k in range(len(candidates), -1, -1):
            matched_mass = sum(item[1] for item in candidates[:k])
            cost = max([1.0 - matched_mass] + [item[0] for item in candidates[:k]])
            if cost <= best_lam:
                best_lam, best_k = cost, k
        lam = max(lam, best_lam)
        for item in candidates[:best_k]:
            node_pairs.extend(item[4])
        annotations.append({
            "pair": [_dist_json(fl.sat), _dist_json(fr.sat)],
            "matched": [list(item[2]) for item in candidates[:best_k]],
            "dropped": [list(_sig_key(c.signature)) for c in fl.classes
                        if c.signature not in {item[3] for item in candidates[:best_k]}],
            "unmatched_mass": max(0.0, 1.0 - sum(item[1] for item in candidates[:best_k])),
            "env_distance": _env_distance(fl.sat, fr.sat),
        })
        got = memo[key] = (lam, tuple(node_pairs))
        return got

    if mu.held_qubits() != nu.held_qubits():
        return DistanceBound(1.0, RelationCandidate(()), "canonical",
                             detail="quantum variables differ; no lambda relates them")
    lam = _env_distance(mu, nu)
    sub, pairs = rec(canon.form(mu), canon.form(nu))
    lam = max(lam, sub)
    if lam >= 1.0:
        return DistanceBound(1.0, RelationCandidate(()), "canonical",
                             detail=f"no matching found; {why}")
    witness = RelationCandidate(_unique_pairs([(mu, nu)] + list(pairs)))
    return DistanceBound(lam, witness, "canonical", detail=why,
                         annotations=tuple(annotations))


# ---------------------------------------------------------------------------
# super-operator closure sampling


def superop_closure_sample_test(relation, context, samples: int = 20,
                                seed: int = 0, tol: float = None,
                                kraus_count: int = 2) -> CheckReport:
    """Sample random channels on unheld qubits and re-check the relation.

    Each sample draws one trace-preserving map on the qubits no pair's
    support holds, applies it to every configuration of every pair, and
    re-runs the ground check on the transformed family (one map per sample
    keeps the auxiliary pairs coherent with the pairs they serve).  For
    quantum-input-free processes a complement channel commutes with every
    transition rule, so validity is provably preserved; the sampling gives
    direct evidence for that and covers relations with quantum inputs,
    where it can genuinely fail.  Full quantification over all channels is
    not enumerable, so a pass is evidence, not proof; a failure names the
    counterexample channel.
    """
    system = _system_of(context)
    tol = system.tol if tol is None else tol
    relation = RelationCandidate.coerce(relation, system)

    held = frozenset()
    for a, b in relation.pairs:
        held |= a.held_qubits() | b.held_qubits()
    complement = [q for q in system.register.names if q not in held]
    if not complement:
        return CheckReport(True, "sampled-closure", tol=tol, witness=relation,
                           detail="no untouched qubits; closure holds vacuously")

    rng = np.random.default_rng(seed)
    for i in range(samples):
        sop = random_superoperator(rng, len(complement), kraus_count,
                                   name=f"sample{i}")
        transformed = []
        for a, b in relation.pairs:
            mapped = []
            for dist in (a, b):
                probs = {}
                for c, p in dist:
                    nc = system._intern(c.term, apply_superop(
                        sop, c.matrix, system.register, complement))
                    probs[nc] = probs.get(nc, 0.0) + p
                mapped.append(ConfigDistribution(probs))
            transformed.append(tuple(mapped))
        inner = check_lambda_relation(RelationCandidate(tuple(transformed)),
                                      0.0, system, tol=tol)
        if not inner.holds:
            return CheckReport(
                False, "sampled-closure", tol=tol, clause=inner.clause,
                pair=inner.pair, direction=inner.direction, label=inner.label,
                attack=inner.attack,
                detail=f"channel sample {i} (seed {seed}) on {complement} broke "
                       f"the relation: {inner.detail}")
    return CheckReport(True, "sampled-closure", tol=tol, witness=relation,
                       detail=f"{samples} random trace-preserving channels on "
                              f"{complement} preserved the relation (seed {seed}); "
                              "statistical evidence only")


# ---------------------------------------------------------------------------
# refutation replay


def replay_refutation(report: CheckReport, context, max_configs: int = 5000) -> bool:
    """Re-derive a refutation independently of the engine that produced it.

    Confirms the reported evidence against the raw semantics: clause (i)
    violations are recomputed from the configurations, reported moves must
    exist in the transition graph, and decomposition evidence must name a
    genuine inconsistency.  When the reachable graph fits in `max_configs`,
    the offending pair is additionally re-decided by a second procedure
    (a re-scheduled canonical run, the fixpoint refinement, or a fresh
    state-based decision).  Used by the test suite on every refutation.
    """
    system = _system_of(context)
    if report.holds:
        raise ValueError("only refutations replay")
    if report.pair is None:
        return False
    x, y = report.pair
    tol = report.tol if report.tol is not None else system.tol
    lam = report.lam if report.lam is not None else 0.0

    if report.clause == "i":
        if x.held_qubits() != y.held_qubits():
            return True
        e = _env_distance(x, y)
        return e is not None and e > lam + tol

    attacker = x if report.direction != "right" else y
    confirmed = False
    if report.label is not None and report.attack is not None:
        if not _attack_exists(system, attacker, report.label, report.attack):
            return False
        confirmed = True
    if report.clause == "iii" and report.attack is None:
        defender = y if report.direction != "right" else x
        left = {cls.signature: cls.weight
                for cls in tc_decompose(attacker, system).classes}
        right = {cls.signature: cls.weight
                 for cls in tc_decompose(defender, system).classes}
        excess = sum(max(0.0, w - right.get(sig, 0.0)) for sig, w in left.items())
        if set(left) != set(right) or excess > lam + tol:
            confirmed = True  # the canonical decompositions genuinely disagree

    try:
        system.reachable([c for d in (x, y) for c in d.support],
                         max_configs=max_configs)
    except BudgetExceededError:
        # too large to re-decide; stand on the directly verified evidence
        return confirmed

    if report.mode == "state-based":
        (a,) = x.support
        (b,) = y.support
        return not decide_state_based(a, b, system, tol=tol).holds
    if lam > 0.0:
        fresh = check_lambda_relation([(x, y)], lam, system, tol=tol)
        return not fresh.holds
    if report.mode == "canonical":
        fresh = _decide_canonical(system, x, y, tol, "replay", chooser=_last_choice)
        return not fresh.holds
    return not decide_bisim(x, y, system, tol=tol, mode="relation-search").holds


def _attack_exists(system: System, attacker: ConfigDistribution,
                   label: Label, attack: ConfigDistribution) -> bool:
    """Is the reported move a real (possibly weak) step of the attacker?"""
    try:
        for got_label, got in _strong_attacks(system, attacker, {}):
            if got_label == label and got.digest == attack.digest:
                return True
    except BudgetExceededError:
        pass
    # canonical evidence reports saturated derivatives of weak moves
    try:
        canon = _Canon(system)
        if label == TAU:
            return canon.saturate(attacker).digest == attack.digest
        if all(label in system.weak_enabled(c) for c in attacker.support):
            sat = canon.saturate(attacker)
            return canon.derivative(sat, label).digest == attack.digest
    except (CyclicModelError, BudgetExceededError):
        pass
    return False

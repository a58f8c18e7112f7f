"""Structural learning: incoherence classification and predictive/dual construction.

Events are labelled along two axes.  ``kind`` says what went wrong:

* ``I``  an existing predictive schema mispredicted while both endpoints were active;
* ``U1`` a brand-new cause-effect relation was extracted;
* ``U2`` an existing predictive schema mispredicted while one endpoint was silent.

``trend`` says whether the system got closer to (``A``) or farther from
(``B``) the goal over the trial window.  Only U1.A builds a new pair; U2.B
re-engages an existing pair.  Everything else is logged and left alone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .kernel import BehaviorResult, Network, SchemaNode, activity_of, rng_for
from .maps import DifferentiableMap
from .predictive import DualSchema, PredictiveSchema, dual_node, predictive_node


class ConstructionError(Exception):
    pass


class NoGoalSchemaForEffect(ConstructionError):
    pass


class DuplicatePair(ConstructionError):
    pass


class NoFreeModulatoryChannel(ConstructionError):
    pass


class Kind(str, enum.Enum):
    I = "IncorrectExpectation"
    U1 = "UnexpectedNewRelation"
    U2 = "UnexpectedInactiveEndpoint"


class Trend(str, enum.Enum):
    CLOSER = "Closer"
    FARTHER = "Farther"


@dataclass(frozen=True)
class IncoherenceEvent:
    kind: Kind
    effect: str
    cause: str
    tau: int
    goal_trend: Trend
    tick: int
    magnitude: float

    @property
    def label(self) -> str:
        return f"{self.kind.name}.{'A' if self.goal_trend is Trend.CLOSER else 'B'}"


@dataclass(frozen=True)
class ConstructionRecord:
    trigger: IncoherenceEvent
    action: str  # "construct" | "activate" | "unresolved"
    built: tuple[str, str] | None
    adapted_cause: str | None
    wired_goal: str | None
    tick: int

    def to_dict(self) -> dict:
        ev = self.trigger
        return {
            "event": {"kind": ev.kind.name, "effect": ev.effect, "cause": ev.cause, "tau": ev.tau,
                      "trend": ev.goal_trend.value, "tick": ev.tick, "magnitude": ev.magnitude},
            "action": self.action, "built": list(self.built) if self.built else None,
            "adapted_cause": self.adapted_cause, "wired_goal": self.wired_goal, "tick": self.tick,
        }


@dataclass(frozen=True)
class PairObservation:
    """What an existing predictive schema saw on one tick."""

    effect: str
    cause: str
    tau: int
    error: float
    effect_active: bool
    cause_active: bool


def goal_trend(start: float, now: float) -> Trend:
    return Trend.CLOSER if now < start else Trend.FARTHER


def classify(new_relations: Iterable, observations: Iterable[PairObservation],
             trends: Mapping[str, Trend], tick: int, error_threshold: float = 0.05,
             default_trend: Trend = Trend.FARTHER) -> list[IncoherenceEvent]:
    """Label this tick's incoherences.

    ``new_relations`` are freshly extracted relations (objects with
    effect/cause/tau/r) that no predictive schema covers yet; ``trends`` maps
    an effect name to its goal trend over the trial window.
    """
    events = []
    for rel in new_relations:
        events.append(IncoherenceEvent(Kind.U1, rel.effect, rel.cause, rel.tau,
                                       trends.get(rel.effect, default_trend), tick, float(rel.r)))
    for ob in observations:
        if ob.error <= error_threshold:
            continue
        kind = Kind.I if (ob.effect_active and ob.cause_active) else Kind.U2
        events.append(IncoherenceEvent(kind, ob.effect, ob.cause, ob.tau,
                                       trends.get(ob.effect, default_trend), tick, float(ob.error)))
    return events


def select_events(events: Iterable[IncoherenceEvent]) -> list[IncoherenceEvent]:
    """One event per effect: largest magnitude, then earliest tick, then cause name."""
    best: dict[tuple[Kind, str], IncoherenceEvent] = {}
    for ev in events:
        key = (ev.kind, ev.effect)
        cur = best.get(key)
        if cur is None or (-ev.magnitude, ev.tick, ev.cause) < (-cur.magnitude, cur.tick, cur.cause):
            best[key] = ev
    return sorted(best.values(), key=lambda e: (e.tick, e.kind.name, e.effect))


# -- cause-schema adaptation -------------------------------------------

def override_behavior(original: Callable, mod_port: str, out_port: str, theta: float) -> Callable:
    """Wrap ``original`` so an active modulatory input replaces ``out_port``."""

    def behavior(inp, params, tick, rng):
        res = original(inp, params, tick, rng)
        if not isinstance(res, BehaviorResult):
            res = BehaviorResult(dict(res))
        m = np.asarray(inp[mod_port], dtype=float)
        if activity_of(m) <= theta:
            return res
        outs = dict(res.outputs)
        outs[out_port] = m.copy()
        return BehaviorResult(outs, res.params, None)

    behavior.original = original
    return behavior


def free_modulatory_port(net: Network, schema: str) -> str:
    node = net.schemas[schema]
    wired = {c.target.port for c in net.incoming(schema)}
    for p in node.inputs:
        if p.modulatory and p.name not in wired:
            return p.name
    raise NoFreeModulatoryChannel(schema)


def adapt_cause_schema(net: Network, cause: str, dual: str, theta: float = 0.05) -> str:
    """Turn S^y into S^y': wire ``dual``'s output into a free modulatory port
    and let that input override the schema's primary output while active."""
    port = free_modulatory_port(net, cause)
    node = net.schemas[cause]
    out_port = node.default_out
    adapted = SchemaNode(node.name, node.inputs, node.outputs,
                         override_behavior(node.behavior, port, out_port, theta),
                         node.params, kind="adapted", activity=node.activity)
    net.replace_schema(adapted)
    net.connect(f"{dual}.out", f"{cause}.{port}")
    return cause


# -- construction --------------------------------------------------------

@dataclass
class GoalBinding:
    node: str          # network schema emitting the goal pattern
    schema: object     # the GoalSchema behind it


@dataclass
class Pair:
    predictive: PredictiveSchema
    dual: DualSchema
    tau: int
    gain: float = 1.0
    tuning: bool = False  # dual learns online only while an incoherence is unresolved


@dataclass
class Constructor:
    """Owns structural mutation of ``net`` at tick boundaries."""

    net: Network
    goals: dict[str, GoalBinding]
    context: str | None = None
    seed: int = 0
    hidden: int = 0
    p_lr: float = 0.05
    d_lr: float = 0.02
    intensify: float = 4.0
    theta: float = 0.05
    cause_scale: float = 1.0  # input gain on the cause inside P, for small-amplitude commands
    pairs: dict[tuple[str, str], Pair] = field(default_factory=dict)
    log: list[ConstructionRecord] = field(default_factory=list)

    def _dim(self, schema: str) -> int:
        node = self.net.schemas[schema]
        return node.output_spec(node.default_out).dim

    def pair_for_effect(self, effect: str) -> Pair | None:
        for (c, e), p in self.pairs.items():
            if e == effect:
                return p
        return None

    def construct_pair(self, ev: IncoherenceEvent) -> ConstructionRecord:
        if self.net._in_tick:
            raise ConstructionError("construction requested mid-tick")
        if ev.kind is Kind.U1 and ev.goal_trend is Trend.CLOSER:
            return self._build(ev)
        if ev.kind is Kind.U2 and ev.goal_trend is Trend.FARTHER:
            return self._activate(ev)
        raise ConstructionError(f"event {ev.label} is not constructive")

    def _build(self, ev: IncoherenceEvent) -> ConstructionRecord:
        if ev.effect not in self.goals:
            raise NoGoalSchemaForEffect(ev.effect)
        if (ev.cause, ev.effect) in self.pairs:
            raise DuplicatePair(f"{ev.cause}->{ev.effect}")
        free_modulatory_port(self.net, ev.cause)  # fail before mutating anything
        net, goal = self.net, self.goals[ev.effect]
        e_dim, c_dim = self._dim(ev.effect), self._dim(ev.cause)
        ctx_dim = self._dim(self.context) if self.context else None
        extra = [ctx_dim] if ctx_dim else []
        p_map = DifferentiableMap([e_dim, c_dim] + extra, e_dim,
                                  rng_for(self.seed, f"construct:P:{ev.effect}:{ev.cause}"), hidden=self.hidden,
                                  in_scales=[1.0, self.cause_scale] + [1.0] * len(extra))
        d_map = DifferentiableMap([e_dim, e_dim] + extra, c_dim,
                                  rng_for(self.seed, f"construct:D:{ev.cause}:{ev.effect}"), hidden=self.hidden)
        tau = max(int(ev.tau), 1)
        p = PredictiveSchema(ev.effect, ev.cause, p_map, self.context, lr=self.p_lr, cause_delay=tau - 1)
        d = DualSchema(ev.effect, ev.cause, goal.node, d_map, p, self.context, lr=self.d_lr,
                       lag=tau + 2, engaged=False)
        net.add_schema(predictive_node(p, e_dim, c_dim, ctx_dim))
        net.add_schema(dual_node(d, e_dim, ctx_dim))
        net.connect(f"{ev.effect}.{net.schemas[ev.effect].default_out}", f"{p.name}.effect")
        net.connect(f"{ev.cause}.{net.schemas[ev.cause].default_out}", f"{p.name}.cause", tau - 1)
        net.connect(f"{ev.effect}.{net.schemas[ev.effect].default_out}", f"{d.name}.effect")
        net.connect(f"{goal.node}.out", f"{d.name}.goal")
        if self.context:
            ref = f"{self.context}.{net.schemas[self.context].default_out}"
            net.connect(ref, f"{p.name}.context")
            net.connect(ref, f"{d.name}.context")
        adapt_cause_schema(net, ev.cause, d.name, self.theta)
        self.pairs[(ev.cause, ev.effect)] = Pair(p, d, tau)
        rec = ConstructionRecord(ev, "construct", (p.name, d.name), ev.cause, goal.node, net.tick)
        self.log.append(rec)
        return rec

    def _activate(self, ev: IncoherenceEvent) -> ConstructionRecord:
        pair = self.pairs.get((ev.cause, ev.effect))
        if pair is None:
            rec = ConstructionRecord(ev, "unresolved", None, None, None, self.net.tick)
        else:
            first = not pair.dual.engaged
            pair.dual.engaged = True
            pair.tuning = True
            pair.gain = self.intensify if first else 1.0
            rec = ConstructionRecord(ev, "activate", (pair.predictive.name, pair.dual.name),
                                     ev.cause, pair.dual.goal, self.net.tick)
        self.log.append(rec)
        return rec

    def handle(self, events: Iterable[IncoherenceEvent]) -> list[ConstructionRecord]:
        """Apply every constructive event; non-constructive ones are only logged."""
        done = []
        for ev in select_events(events):
            if ev.label == "U1.A":
                if (ev.cause, ev.effect) in self.pairs or self.pair_for_effect(ev.effect) is not None:
                    continue
                try:
                    done.append(self._build(ev))
                except NoGoalSchemaForEffect:
                    self.log.append(ConstructionRecord(ev, "unresolved", None, None, None, self.net.tick))
            elif ev.label == "U2.B":
                pair = self.pairs.get((ev.cause, ev.effect))
                if pair is not None and pair.tuning:
                    continue
                done.append(self._activate(ev))
        return done

    # -- online tuning of built pairs ---------------------------------

    def tune_pairs(self, learn_dual: bool = True) -> dict[str, float]:
        """Commit-phase learning for every built pair; returns predictive errors."""
        net, errs = self.net, {}
        for pair in self.pairs.values():
            p, d = pair.predictive, pair.dual
            inp = net.last_step_inputs(p.name)
            p.last_inputs = p._inputs(inp["effect"], inp["cause"], inp.get("context"))
            p.last_prediction = p.map.evaluate(p.last_inputs)
            errs[p.name] = p.tune(net.out(p.effect))
            if d.engaged:
                dinp = net.last_step_inputs(d.name)
                d.record(d._inputs(dinp["effect"], dinp["goal"], dinp.get("context")), net.out(d.name))
                if learn_dual and pair.tuning:
                    xs, _ = d.records[0]
                    d.tune(net.out(d.effect), xs[1], gain=pair.gain)
        return errs

    def observations(self, errors: Mapping[str, float]) -> list[PairObservation]:
        out = []
        for (cause, effect), pair in self.pairs.items():
            out.append(PairObservation(
                effect, cause, pair.tau, errors.get(pair.predictive.name, 0.0),
                activity_of(self.net.out(effect)) > self.theta,
                activity_of(self.net.out(cause, pair.tau)) > self.theta))
        return out


def topology(net: Network) -> tuple:
    """Hashable summary of schemas and wiring, for replay comparisons."""
    schemas = tuple(sorted((n, s.kind) for n, s in net.schemas.items()))
    conns = tuple(sorted((str(c.source), str(c.target), c.delay_ticks) for c in net.connections.values()))
    return schemas, conns


def replay(log: Iterable[ConstructionRecord], constructor: Constructor) -> Constructor:
    """Re-apply a construction log to a fresh constructor/network."""
    for rec in log:
        if rec.action == "construct":
            constructor._build(rec.trigger)
        elif rec.action == "activate":
            constructor._activate(rec.trigger)
        else:
            constructor.log.append(rec)
    return constructor

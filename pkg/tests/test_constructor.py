import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schemalearn.causal import Relation
from schemalearn.constructor import (
    ConstructionError, Constructor, DuplicatePair, GoalBinding, IncoherenceEvent, Kind, NoFreeModulatoryChannel,
    NoGoalSchemaForEffect, PairObservation, Trend, adapt_cause_schema, classify, goal_trend, replay, topology,
)
from schemalearn.kernel import MidTickMutation, Network, SchemaNode, inport, outport


def cause_behavior(inp, params, tick, rng):
    return {"out": np.array([np.sin(0.3 * tick), 0.5])}


def world(with_mod=True):
    net = Network()
    net.add_schema(SchemaNode("CTX", [], [outport("out", 3)], lambda i, p, t, r: {"out": np.full(3, 0.2)}))
    mods = [inport("mod", 2, modulatory=True)] if with_mod else []
    net.add_schema(SchemaNode("CAU", mods, [outport("out", 2)], cause_behavior))
    net.add_schema(SchemaNode("EFF", [inport("in", 2)], [outport("out", 4)],
                              lambda i, p, t, r: {"out": np.tanh(np.r_[i["in"], i["in"]])}))
    net.add_schema(SchemaNode("GOAL", [], [outport("out", 4)], lambda i, p, t, r: {"out": np.full(4, 0.3)}))
    net.connect("CAU.out", "EFF.in")
    return net


def constructor(net):
    return Constructor(net, {"EFF": GoalBinding("GOAL", None)}, context="CTX", seed=4)


def u1a(effect="EFF", cause="CAU", tick=0):
    return IncoherenceEvent(Kind.U1, effect, cause, 1, Trend.CLOSER, tick, 0.9)


def test_trend_from_goal_distance():
    assert goal_trend(2.0, 1.0) is Trend.CLOSER
    assert goal_trend(1.0, 1.0) is Trend.FARTHER


def test_classify_labels_each_case():
    rel = Relation("MHM", "SIDE", 2, 0.6, 0.1)
    obs = [PairObservation("JAW_REC", "LM", 3, 0.4, False, True),
           PairObservation("A", "B", 1, 0.4, True, True),
           PairObservation("C", "D", 1, 0.01, False, True)]
    trends = {"MHM": Trend.CLOSER, "JAW_REC": Trend.FARTHER}
    evs = classify([rel], obs, trends, tick=7)
    assert [e.label for e in evs] == ["U1.A", "U2.B", "I.B"]
    assert evs[0].cause == "SIDE" and evs[0].tau == 2


def test_classify_with_nothing_happening_is_empty():
    assert classify([], [], {}, 0) == []


def test_u1a_builds_wired_pair():
    net = world()
    c = constructor(net)
    before = set(net.schemas)
    rec = c.construct_pair(u1a())
    assert set(net.schemas) - before == {"P[EFF,CAU]", "D[CAU,EFF]"}
    wires = {(str(x.source), str(x.target)) for x in net.connections.values()}
    assert {("EFF.out", "P[EFF,CAU].effect"), ("CAU.out", "P[EFF,CAU].cause"), ("EFF.out", "D[CAU,EFF].effect"),
            ("GOAL.out", "D[CAU,EFF].goal"), ("CTX.out", "P[EFF,CAU].context"), ("CTX.out", "D[CAU,EFF].context"),
            ("D[CAU,EFF].out", "CAU.mod")} <= wires
    assert net.schemas["CAU"].kind == "adapted"
    assert rec.built == ("P[EFF,CAU]", "D[CAU,EFF]") and rec.wired_goal == "GOAL"


def test_duplicate_event_leaves_network_alone():
    net = world()
    c = constructor(net)
    c.construct_pair(u1a())
    snap = topology(net)
    with pytest.raises(DuplicatePair):
        c.construct_pair(u1a(tick=5))
    assert topology(net) == snap
    assert c.handle([u1a(tick=6)]) == []


def test_missing_goal_schema_is_rejected_without_mutation():
    net = world()
    c = Constructor(net, {}, context="CTX")
    snap = topology(net)
    with pytest.raises(NoGoalSchemaForEffect):
        c.construct_pair(u1a())
    assert topology(net) == snap


def test_no_free_modulatory_channel():
    net = world(with_mod=False)
    snap = topology(net)
    with pytest.raises(NoFreeModulatoryChannel):
        constructor(net).construct_pair(u1a())
    assert topology(net) == snap


def test_non_constructive_kinds_refused():
    c = constructor(world())
    for kind, trend in [(Kind.I, Trend.CLOSER), (Kind.U1, Trend.FARTHER), (Kind.U2, Trend.CLOSER)]:
        with pytest.raises(ConstructionError):
            c.construct_pair(IncoherenceEvent(kind, "EFF", "CAU", 1, trend, 0, 1.0))
    assert c.handle([IncoherenceEvent(Kind.I, "EFF", "CAU", 1, Trend.CLOSER, 0, 1.0)]) == []
    assert c.pairs == {}


def test_u2b_activates_existing_pair_or_logs_unresolved():
    c = constructor(world())
    ev = IncoherenceEvent(Kind.U2, "EFF", "CAU", 1, Trend.FARTHER, 3, 0.5)
    assert c.construct_pair(ev).action == "unresolved"
    c.construct_pair(u1a())
    pair = c.pairs[("CAU", "EFF")]
    assert not pair.dual.engaged
    rec = c.construct_pair(ev)
    assert rec.action == "activate" and pair.dual.engaged and pair.tuning
    assert pair.gain == c.intensify


def test_construction_refused_mid_tick():
    net = world()
    c = constructor(net)
    net.add_schema(SchemaNode("X", [], [outport("out", 1)],
                              lambda i, p, t, r: (c.construct_pair(u1a()), {"out": np.zeros(1)})[1]))
    with pytest.raises((ConstructionError, MidTickMutation)):
        net.step()


def test_override_follows_modulatory_activity():
    net = world()
    net.add_schema(SchemaNode("M", [], [outport("out", 2)],
                              lambda i, p, t, r: {"out": np.array([0.9, -0.4]) if t % 2 else np.zeros(2)}))
    adapt_cause_schema(net, "CAU", "M")
    for _ in range(10):
        mod = net.snapshot_inputs("CAU")["mod"]
        t = net.tick
        net.step()
        expect = mod if np.mean(np.abs(mod)) > 0.05 else cause_behavior({}, {}, t, None)["out"]
        assert np.array_equal(net.out("CAU"), expect)
    with pytest.raises(NoFreeModulatoryChannel):
        adapt_cause_schema(net, "CAU", "M")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2))
def test_inactive_modulation_is_transparent(vals):
    plain, adapted = world(), world()
    adapted.add_schema(SchemaNode("M", [], [outport("out", 2)], lambda i, p, t, r: {"out": np.array(vals) * 0.04}))
    adapt_cause_schema(adapted, "CAU", "M")
    for _ in range(4):
        plain.step()
        adapted.step()
        assert np.array_equal(plain.out("CAU"), adapted.out("CAU"))


def test_replaying_the_log_reproduces_topology():
    net = world()
    c = constructor(net)
    net.run(3)
    c.handle([u1a(tick=3), IncoherenceEvent(Kind.I, "EFF", "CAU", 1, Trend.CLOSER, 3, 2.0)])
    c.handle([IncoherenceEvent(Kind.U2, "EFF", "CAU", 1, Trend.FARTHER, 9, 0.5)])
    fresh = world()
    replay(c.log, constructor(fresh))
    assert topology(fresh) == topology(net)


def test_built_pair_learns_while_running():
    net = world()
    c = constructor(net)
    c.construct_pair(u1a())
    errs = []
    for _ in range(600):
        net.step()
        errs.append(c.tune_pairs()["P[EFF,CAU]"])
    assert np.mean(errs[-50:]) < 0.5 * np.mean(errs[:50])

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from schemalearn.kernel import activity_of
from schemalearn.snap import (
    GOAL_NODE, JP, PREMOTOR, TP, BodyState, SnapLearner, SnapParams, SnapRig, aperture_law, lesion, program_for,
)

SP = SnapParams()


@pytest.fixture(scope="module")
def healthy():
    learner = SnapLearner(0)
    learner.healthy_phase()
    return learner


def timing_law_holds(o):
    return (o.aperture > 0) == (o.lm_lag >= 2)


def test_program_follows_prey_size():
    assert program_for(SP.small_prey, SP) == TP
    assert program_for(SP.large_prey, SP) == JP


@given(st.integers(-1, 40), st.integers(-1, 40), st.floats(0.1, 1.0))
def test_aperture_law(dm, lm, amp):
    a = aperture_law(dm, lm, amp, 1.0)
    assert a >= 0
    if dm >= 0 and lm >= 0:
        assert (a > 0) == (lm - dm >= 2)


def test_healthy_tongue_capture_with_delayed_levator():
    rig = SnapRig(SP, seed=0)
    for _ in range(8):
        o = rig.run_capture(SP.small_prey)
        assert o.program == TP and o.captured
        assert 3 <= o.lm_lag <= 5
        assert timing_law_holds(o)


@pytest.mark.parametrize("size", [SP.small_prey, SP.large_prey])
def test_lesioned_mouth_stays_shut(size):
    rig = SnapRig(SP, seed=1)
    lesion(rig.body)
    for _ in range(4):
        o = rig.run_capture(size)
        assert not o.mouth_opened and not o.captured
        assert not o.traces["HG_REC"].any()
        assert timing_law_holds(o)


def test_lesion_is_idempotent():
    b = lesion(lesion(BodyState()))
    assert b.lesioned and b == lesion(BodyState())


def test_goal_leads_the_observed_jaw_profile(healthy):
    g, jaw = [], []
    healthy.learning = healthy.accumulating = False
    healthy.rig.hooks.append(lambda net: (g.append(net.out(GOAL_NODE)[0]), jaw.append(net.out("JAW_REC")[0])))
    try:
        healthy.rig.run_capture(SP.large_prey)
    finally:
        healthy.rig.hooks.pop()
        healthy.learning = healthy.accumulating = True
    lead = healthy.pair.tau + 3
    g, jaw = np.array(g), np.array(jaw)
    assert abs(int(np.argmax(g)) + lead - int(np.argmax(jaw))) <= 1
    assert g.max() > 0.5 * jaw.max()


def test_lesion_leaves_other_parameters_alone():
    learner = SnapLearner(2)
    learner.healthy_phase(10)
    net = learner.rig.net

    def frozen():
        out = {}
        for name, node in net.schemas.items():
            if name == "HG_REC":
                continue
            for k, v in node.params.items():
                if hasattr(v, "map"):
                    out[(name, k)] = {p: a.copy() for p, a in v.map.params.items()}
        return out

    before = frozen()
    assert len(before) >= 3  # goal, predictive and dual maps
    lesion(learner.rig.body)
    learner.test(3)
    after = frozen()
    assert before.keys() == after.keys()
    for k in before:
        for p in before[k]:
            assert np.array_equal(before[k][p], after[k][p])


def test_recovery_obeys_override_and_timing_laws():
    learner = SnapLearner(1)
    learner.healthy_phase()
    lesion(learner.rig.body)
    learner.accumulating = False
    net = learner.rig.net
    audits = []

    def audit(net):
        mod = net.last_step_inputs("LM")["mod"]
        if activity_of(mod) > learner.cons.theta:
            audits.append(np.array_equal(net.out("LM"), mod))

    learner.rig.hooks.append(audit)
    outcomes = [learner.trial(SP.large_prey) for _ in range(8)]
    assert any(o.captured for o in outcomes)
    assert audits and all(audits)
    assert all(timing_law_holds(o) for o in outcomes)
    assert learner.pair.dual.engaged
    assert any(r.trigger.label == "U2.B" and r.action == "activate" for r in learner.cons.log)
    assert set(PREMOTOR) <= set(net.schemas)

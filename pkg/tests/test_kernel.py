import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schemalearn.kernel import (
    BehaviorPanic, BehaviorResult, DuplicateName, JsonlTrace, LagBeyondHorizon, MemoryTrace, MidTickMutation,
    Network, SchemaNode, TypeMismatch, UnknownPort, inport, outport, rng_for,
)


def source(name, values, dim=1):
    """Emits values[tick] (zero past the end)."""
    def behavior(inp, params, tick, rng):
        v = values[tick] if tick < len(values) else 0.0
        return {"out": np.full(dim, v)}
    return SchemaNode(name, [], [outport("out", dim)], behavior)


def relay(name, dim=1):
    return SchemaNode(name, [inport("in", dim)], [outport("out", dim)], lambda inp, p, t, r: {"out": inp["in"]})


def test_add_schema_registers_with_zero_outputs():
    net = Network()
    net.add_schema(source("PREY", [1.0]))
    assert list(net.schemas) == ["PREY"]
    assert net.tick == 0
    assert net.out("PREY").tolist() == [0.0]


def test_duplicate_name_rejected():
    net = Network()
    net.add_schema(source("A", []))
    with pytest.raises(DuplicateName):
        net.add_schema(source("A", []))


def test_mutation_during_behavior_rejected():
    net = Network()

    def sneaky(inp, params, tick, rng):
        net.add_schema(source("B", []))
        return {"out": np.zeros(1)}

    net.add_schema(SchemaNode("A", [], [outport("out", 1)], sneaky))
    with pytest.raises(MidTickMutation):
        net.step()
    assert "B" not in net.schemas


def test_dimension_mismatch_and_unknown_port():
    net = Network()
    net.add_schema(source("A", [], dim=8))
    net.add_schema(relay("B", dim=4))
    with pytest.raises(TypeMismatch):
        net.connect("A.out", "B.in")
    with pytest.raises(UnknownPort):
        net.connect("A.nope", "B.in")
    with pytest.raises(UnknownPort):
        net.connect("A.out", "C.in")


def test_delay_zero_reads_previous_commit():
    net = Network()
    net.add_schema(source("A", [1.0, 2.0, 3.0]))
    net.add_schema(relay("B"))
    net.connect("A.out", "B.in")
    net.run(3)
    # B's commit k holds A's commit k - 1
    assert [net.read_port("B.out", lag).item() for lag in (2, 1, 0)] == [0.0, 1.0, 2.0]


def test_delay_three_reads_three_commits_back():
    vals = [float(i + 1) for i in range(20)]
    net = Network()
    net.add_schema(source("A", vals))
    net.add_schema(relay("B"))
    net.connect("A.out", "B.in", delay_ticks=3)
    net.run(10)
    assert net.tick == 10
    # the step taken at tick 10 reads A's commit from tick 7
    assert net.snapshot_inputs("B")["in"].item() == net.read_port("A.out", 3).item() == vals[6]
    net.step()
    assert net.out("B").item() == vals[6]


def test_read_port_lags():
    net = Network(horizon=8)
    net.add_schema(source("A", [5.0]))
    net.step()
    assert net.read_port("A.out", 0).item() == 5.0
    assert net.read_port("A.out", 5).item() == 0.0
    with pytest.raises(LagBeyondHorizon):
        net.read_port("A.out", 9)
    net.add_schema(relay("B"))
    with pytest.raises(LagBeyondHorizon):
        net.connect("A.out", "B.in", delay_ticks=9)


def test_nan_output_names_schema():
    net = Network()
    net.add_schema(SchemaNode("BAD", [], [outport("out", 2)], lambda i, p, t, r: {"out": np.array([0.0, np.nan])}))
    with pytest.raises(BehaviorPanic, match="BAD"):
        net.step()


def test_wrong_output_dim_rejected():
    net = Network()
    net.add_schema(SchemaNode("A", [], [outport("out", 2)], lambda i, p, t, r: {"out": np.zeros(3)}))
    with pytest.raises(TypeMismatch):
        net.step()


def test_port_spec_invariants():
    with pytest.raises(ValueError):
        outport("x", 0)
    with pytest.raises(DuplicateName):
        SchemaNode("A", [inport("x", 1)], [outport("x", 1)], lambda *a: {})


def _mutual(order):
    net = Network(seed=3)
    for name in ("A", "B"):
        def beh(inp, params, tick, rng, name=name):
            return BehaviorResult({"out": np.tanh(inp["in"] + 0.5) + 0.1 * rng.standard_normal(2)},
                                  {"n": params.get("n", 0) + 1})
        net.add_schema(SchemaNode(name, [inport("in", 2)], [outport("out", 2)], beh))
    net.connect("A.out", "B.in")
    net.connect("B.out", "A.in")
    for _ in range(6):
        net.step(order)
    return net.out("A"), net.out("B"), net.schemas["A"].params["n"]


def test_evaluation_order_does_not_matter():
    a1, b1, n1 = _mutual(["A", "B"])
    a2, b2, n2 = _mutual(["B", "A"])
    assert np.array_equal(a1, a2) and np.array_equal(b1, b2) and n1 == n2 == 6


def test_trace_is_bit_identical_across_runs(tmp_path):
    def run(path):
        sink = JsonlTrace(path)
        net = Network(seed=11, trace=sink)
        net.add_schema(SchemaNode("N", [], [outport("out", 3)], lambda i, p, t, r: {"out": r.standard_normal(3)}))
        net.add_schema(relay("R", 3))
        net.connect("N.out", "R.in", 2)
        net.run(15)
        sink.close()
        return path.read_bytes()

    a, b = run(tmp_path / "a.jsonl"), run(tmp_path / "b.jsonl")
    assert a == b
    row = json.loads(a.splitlines()[0])
    assert set(row) == {"tick", "schema", "port", "values"}


def test_activity_defaults_to_clamped_max_abs():
    net = Network()
    net.add_schema(SchemaNode("A", [], [outport("out", 2)], lambda i, p, t, r: {"out": np.array([-3.0, 0.2])}))
    rep = net.step()
    assert rep.activities["A"] == 1.0


def test_rng_streams_are_label_independent():
    a = rng_for(1, "x").random(4)
    assert np.array_equal(a, rng_for(1, "x").random(4))
    assert not np.array_equal(a, rng_for(1, "y").random(4))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=30), st.integers(0, 10))
def test_delay_property(signal, k):
    net = Network(horizon=16)
    net.add_schema(source("A", signal))
    net.add_schema(relay("B"))
    net.connect("A.out", "B.in", k)
    seen = MemoryTrace()
    for _ in range(len(signal) + k + 2):
        seen.append((net.tick, net.snapshot_inputs("B")["in"].item()))
        net.step()
    for t, v in seen:
        # A's commit at tick c is signal[c - 1]; the read at tick t is commit t - k
        c = t - k
        expect = signal[c - 1] if 1 <= c <= len(signal) else 0.0
        assert v == expect


@settings(max_examples=25, deadline=None)
@given(st.permutations(["A", "B", "C"]))
def test_commit_order_property(order):
    def build():
        net = Network(seed=5)
        for n in "ABC":
            net.add_schema(SchemaNode(n, [inport("in", 1)], [outport("out", 1)],
                                      lambda i, p, t, r: {"out": i["in"] * 0.9 + r.random(1)}))
        net.connect("A.out", "B.in")
        net.connect("B.out", "C.in", 1)
        net.connect("C.out", "A.in")
        return net

    ref, net = build(), build()
    for _ in range(5):
        ref.step()
        net.step(order)
    for n in "ABC":
        assert np.array_equal(ref.out(n), net.out(n))

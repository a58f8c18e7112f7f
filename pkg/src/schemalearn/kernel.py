"""Schema network runtime.

Schemas are port automata: named input/output ports carrying fixed-length
activity patterns, a parameter store and a pure behavior function.  The
network advances in discrete ticks with a two-phase update: every behavior
reads a frozen snapshot of committed port values, then all outputs are
committed together.

Tick convention: ``net.tick`` counts completed steps.  Commit ``k`` holds the
outputs produced by the k-th step; commit 0 is the all-zero start state.
While evaluating step ``t + 1`` a connection with delay ``d`` delivers commit
``t - d`` (so delay 0 means "last committed value").
"""

from __future__ import annotations

import json
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, NamedTuple

import numpy as np

DEFAULT_HORIZON = 64


class KernelError(Exception):
    pass


class DuplicateName(KernelError):
    pass


class MidTickMutation(KernelError):
    pass


class TypeMismatch(KernelError):
    pass


class UnknownPort(KernelError):
    pass


class LagBeyondHorizon(KernelError):
    pass


class BehaviorPanic(KernelError):
    def __init__(self, schema: str, detail: str = ""):
        super().__init__(f"schema {schema!r} emitted a non-finite pattern {detail}".rstrip())
        self.schema = schema


def zeros(dim: int) -> np.ndarray:
    return np.zeros(dim, dtype=float)


def activity_of(pattern: np.ndarray) -> float:
    """Mean absolute value of a pattern; the scalar used for activity tests."""
    if pattern.size == 0:
        return 0.0
    return float(np.mean(np.abs(pattern)))


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Independent generator for a fixed label, so streams never interleave."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode())])


@dataclass(frozen=True)
class PortSpec:
    name: str
    dim: int
    direction: str = "output"
    tag: str = ""
    modulatory: bool = False

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"port {self.name!r}: dimension must be positive")
        if self.direction not in ("input", "output"):
            raise ValueError(f"port {self.name!r}: direction must be input or output")
        if self.modulatory and self.direction != "input":
            raise ValueError(f"port {self.name!r}: only input ports can be modulatory")


def inport(name: str, dim: int, tag: str = "", modulatory: bool = False) -> PortSpec:
    return PortSpec(name, dim, "input", tag, modulatory)


def outport(name: str, dim: int, tag: str = "") -> PortSpec:
    return PortSpec(name, dim, "output", tag)


class BehaviorResult(NamedTuple):
    outputs: dict[str, np.ndarray]
    params: dict[str, Any] | None = None
    activity: float | None = None


# behavior(inputs, params, tick, rng) -> BehaviorResult | dict of outputs
Behavior = Callable[[Mapping[str, np.ndarray], Mapping[str, Any], int, np.random.Generator], Any]


@dataclass
class SchemaNode:
    name: str
    inputs: list[PortSpec]
    outputs: list[PortSpec]
    behavior: Behavior
    params: dict[str, Any] = field(default_factory=dict)
    kind: str = "basic"
    activity: float = 0.0

    def __post_init__(self):
        names = [p.name for p in self.inputs] + [p.name for p in self.outputs]
        if len(set(names)) != len(names):
            raise DuplicateName(f"schema {self.name!r} has duplicate port names")
        for p in self.inputs:
            if p.direction != "input":
                raise ValueError(f"{self.name}.{p.name} listed as input but declared output")
        for p in self.outputs:
            if p.direction != "output":
                raise ValueError(f"{self.name}.{p.name} listed as output but declared input")

    def input_spec(self, port: str) -> PortSpec:
        for p in self.inputs:
            if p.name == port:
                return p
        raise UnknownPort(f"{self.name}.{port} is not an input port")

    def output_spec(self, port: str) -> PortSpec:
        for p in self.outputs:
            if p.name == port:
                return p
        raise UnknownPort(f"{self.name}.{port} is not an output port")

    @property
    def default_out(self) -> str:
        return self.outputs[0].name


@dataclass(frozen=True)
class PortRef:
    schema: str
    port: str

    @classmethod
    def parse(cls, ref: "PortRef | str | tuple[str, str]") -> "PortRef":
        if isinstance(ref, PortRef):
            return ref
        if isinstance(ref, tuple):
            return cls(*ref)
        schema, _, port = ref.partition(".")
        return cls(schema, port or "out")

    def __str__(self):
        return f"{self.schema}.{self.port}"


@dataclass(frozen=True)
class Connection:
    id: int
    source: PortRef
    target: PortRef
    delay_ticks: int = 0


@dataclass
class TickReport:
    tick: int
    activities: dict[str, float]


class JsonlTrace:
    """Trace sink writing one JSON line per (tick, schema, port)."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def __call__(self, record: dict):
        self._fh.write(json.dumps(record, separators=(",", ":")) + "\n")

    def close(self):
        self._fh.close()


class MemoryTrace(list):
    def __call__(self, record: dict):
        self.append(record)


class Network:
    def __init__(self, horizon: int = DEFAULT_HORIZON, seed: int = 0, trace: Callable[[dict], None] | None = None):
        self.horizon = horizon
        self.seed = seed
        self.trace = trace
        self.tick = 0
        self.schemas: dict[str, SchemaNode] = {}
        self.connections: dict[int, Connection] = {}
        self._next_conn = 0
        self._history: dict[PortRef, deque] = {}
        self._rngs: dict[str, np.random.Generator] = {}
        self._in_tick = False

    # -- structure -----------------------------------------------------

    def _check_mutable(self):
        if self._in_tick:
            raise MidTickMutation("structural change requested while a tick is executing")

    def _new_history(self, dim: int) -> deque:
        return deque([zeros(dim)], maxlen=self.horizon + 1)

    def add_schema(self, node: SchemaNode) -> str:
        self._check_mutable()
        if node.name in self.schemas:
            raise DuplicateName(node.name)
        self.schemas[node.name] = node
        for p in node.outputs:
            self._history[PortRef(node.name, p.name)] = self._new_history(p.dim)
        self._rngs[node.name] = rng_for(self.seed, "schema:" + node.name)
        return node.name

    def replace_schema(self, node: SchemaNode):
        """Swap a schema's definition, keeping output history and incoming wiring."""
        self._check_mutable()
        old = self.schemas.get(node.name)
        if old is None:
            raise UnknownPort(f"no schema {node.name!r}")
        for p in old.outputs:
            if node.output_spec(p.name).dim != p.dim:
                raise TypeMismatch(f"{node.name}.{p.name} changes dimension")
        for c in self.connections.values():
            if c.target.schema == node.name:
                node.input_spec(c.target.port)
        self.schemas[node.name] = node

    def remove_schema(self, name: str):
        self._check_mutable()
        node = self.schemas.pop(name)
        for p in node.outputs:
            del self._history[PortRef(name, p.name)]
        for cid in [c.id for c in self.connections.values() if name in (c.source.schema, c.target.schema)]:
            del self.connections[cid]
        del self._rngs[name]

    def connect(self, src, dst, delay_ticks: int = 0) -> int:
        self._check_mutable()
        src, dst = PortRef.parse(src), PortRef.parse(dst)
        if src.schema not in self.schemas:
            raise UnknownPort(str(src))
        if dst.schema not in self.schemas:
            raise UnknownPort(str(dst))
        s = self.schemas[src.schema].output_spec(src.port)
        d = self.schemas[dst.schema].input_spec(dst.port)
        if s.dim != d.dim:
            raise TypeMismatch(f"{src} (dim {s.dim}) -> {dst} (dim {d.dim})")
        if delay_ticks < 0 or delay_ticks > self.horizon:
            raise LagBeyondHorizon(f"delay {delay_ticks} outside [0, {self.horizon}]")
        if any(c.target == dst for c in self.connections.values()):
            raise TypeMismatch(f"{dst} already has an incoming connection")
        cid = self._next_conn
        self._next_conn += 1
        self.connections[cid] = Connection(cid, src, dst, delay_ticks)
        return cid

    def disconnect(self, cid: int):
        self._check_mutable()
        del self.connections[cid]

    def incoming(self, schema: str) -> list[Connection]:
        return [c for c in self.connections.values() if c.target.schema == schema]

    # -- reading -------------------------------------------------------

    def read_port(self, port, lag: int = 0) -> np.ndarray:
        ref = PortRef.parse(port)
        if ref not in self._history:
            raise UnknownPort(str(ref))
        if lag < 0:
            raise ValueError("lag must be nonnegative")
        if lag > self.horizon:
            raise LagBeyondHorizon(f"lag {lag} > horizon {self.horizon}")
        hist = self._history[ref]
        if lag >= len(hist):
            return zeros(hist[0].size)
        return hist[-1 - lag].copy()

    def read_lags(self, port, lags: Iterable[int]) -> np.ndarray:
        """Stack of ``read_port(port, lag)`` for each lag, shape (len(lags), dim)."""
        ref = PortRef.parse(port)
        if ref not in self._history:
            raise UnknownPort(str(ref))
        lags = list(lags)
        if lags and max(lags) > self.horizon:
            raise LagBeyondHorizon(f"lag {max(lags)} > horizon {self.horizon}")
        hist = self._history[ref]
        n, dim = len(hist), hist[0].size
        out = np.zeros((len(lags), dim))
        for i, lag in enumerate(lags):
            if lag < n:
                out[i] = hist[n - 1 - lag]
        return out

    def out(self, schema: str, lag: int = 0) -> np.ndarray:
        return self.read_port(PortRef(schema, self.schemas[schema].default_out), lag)

    def snapshot_inputs(self, name: str) -> dict[str, np.ndarray]:
        node = self.schemas[name]
        inputs = {p.name: zeros(p.dim) for p in node.inputs}
        for c in self.incoming(name):
            inputs[c.target.port] = self.read_port(c.source, c.delay_ticks)
        return inputs

    def last_step_inputs(self, name: str) -> dict[str, np.ndarray]:
        """Inputs schema ``name`` saw during the most recent step."""
        node = self.schemas[name]
        inputs = {p.name: zeros(p.dim) for p in node.inputs}
        if self.tick == 0:
            return inputs
        for c in self.incoming(name):
            inputs[c.target.port] = self.read_port(c.source, c.delay_ticks + 1)
        return inputs

    # -- stepping ------------------------------------------------------

    def _evaluate(self, name: str, inputs: dict[str, np.ndarray]):
        node = self.schemas[name]
        res = node.behavior(inputs, node.params, self.tick, self._rngs[name])
        if not isinstance(res, BehaviorResult):
            res = BehaviorResult(dict(res))
        outs = {}
        for p in node.outputs:
            v = np.asarray(res.outputs.get(p.name, zeros(p.dim)), dtype=float).reshape(-1)
            if v.size != p.dim:
                raise TypeMismatch(f"{name}.{p.name} emitted dim {v.size}, declared {p.dim}")
            if not np.all(np.isfinite(v)):
                raise BehaviorPanic(name, f"on port {p.name!r}")
            outs[p.name] = v
        if res.activity is None:
            act = max((float(np.max(np.abs(v))) for v in outs.values()), default=0.0)
        else:
            act = float(res.activity)
        return outs, res.params, min(max(act, 0.0), 1.0)

    def step(self, order: Iterable[str] | None = None) -> TickReport:
        names = list(order) if order is not None else sorted(self.schemas)
        snapshot = {n: self.snapshot_inputs(n) for n in self.schemas}
        pending = {}
        self._in_tick = True
        try:
            for n in names:
                pending[n] = self._evaluate(n, snapshot[n])
        finally:
            self._in_tick = False
        self.tick += 1
        activities = {}
        for n in sorted(pending):
            outs, params, act = pending[n]
            node = self.schemas[n]
            for port, v in outs.items():
                self._history[PortRef(n, port)].append(v)
            if params:
                node.params.update(params)
            node.activity = act
            activities[n] = act
            if self.trace is not None:
                for port in sorted(outs):
                    self.trace({"tick": self.tick, "schema": n, "port": port,
                                "values": [float(x) for x in outs[port]]})
        return TickReport(self.tick, activities)

    def run(self, ticks: int) -> list[TickReport]:
        return [self.step() for _ in range(ticks)]

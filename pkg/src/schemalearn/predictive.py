"""Predictive (forward) and dual (inverse) schemas.

A predictive schema anticipates the effect schema's next pattern from the
effect's current pattern, the cause's pattern and optional context.  Its
dual maps (effect, goal, context) to a command pattern for the cause schema
and is trained by distal supervised learning: the performance error in
effect space is carried back into cause space through the predictive map's
input Jacobian.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernel import BehaviorResult, SchemaNode, activity_of, inport, outport, zeros
from .maps import DifferentiableMap, DimensionMismatch


class NoPairedPredictive(Exception):
    pass


@dataclass
class PredictiveSchema:
    effect: str
    cause: str
    map: DifferentiableMap
    context: str | None = None
    lr: float = 0.05
    cause_delay: int = 0
    window: int = 100
    last_prediction: np.ndarray | None = None
    last_inputs: list | None = None
    errors: deque = field(default_factory=lambda: deque(maxlen=100))

    @property
    def name(self) -> str:
        return f"P[{self.effect},{self.cause}]"

    @property
    def effect_dim(self) -> int:
        return self.map.out_dim

    def _inputs(self, effect_now, cause_now, ctx):
        xs = [np.asarray(effect_now, float), np.asarray(cause_now, float)]
        if len(self.map.in_dims) == 3:
            xs.append(np.asarray(ctx, float) if ctx is not None else zeros(self.map.in_dims[2]))
        return xs

    def predict(self, effect_now, cause_now, ctx=None) -> np.ndarray:
        xs = self._inputs(effect_now, cause_now, ctx)
        pred = self.map.evaluate(xs)
        self.last_inputs, self.last_prediction = xs, pred
        return pred

    def tune(self, observed) -> float:
        """Gradient step on the squared error of the last prediction; returns the error norm."""
        if self.last_prediction is None:
            return 0.0
        observed = np.asarray(observed, float)
        if observed.size != self.effect_dim:
            raise DimensionMismatch("observed effect has the wrong dimension")
        err = observed - self.last_prediction
        self.map.step(self.last_inputs, err, self.lr)
        norm = float(np.sqrt(np.mean(err * err)))
        self.errors.append(float(np.mean(err * err)))
        return norm

    def windowed_error(self) -> float:
        return float(np.mean(self.errors)) if self.errors else float("inf")

    def cause_jacobian(self, effect_now, cause_now, ctx=None) -> np.ndarray:
        return self.map.jacobian_input(self._inputs(effect_now, cause_now, ctx), 1)

    def distal_to_proximal(self, effect_now, cause_now, ctx, distal_error) -> np.ndarray:
        """Transport an effect-space error into cause space (J^T e)."""
        return self.map.vjp_input(self._inputs(effect_now, cause_now, ctx), distal_error, 1)


@dataclass
class DualSchema:
    effect: str
    cause: str
    goal: str
    map: DifferentiableMap
    predictive: PredictiveSchema | None
    context: str | None = None
    lr: float = 0.02
    lag: int = 1
    engaged: bool = True
    # optional (effect, goal) -> bool; the dual stays silent while it is False
    gate: Callable | None = None
    records: deque = field(default_factory=deque)

    @property
    def name(self) -> str:
        return f"D[{self.cause},{self.effect}]"

    @property
    def cause_dim(self) -> int:
        return self.map.out_dim

    def _inputs(self, effect_now, goal, ctx):
        xs = [np.asarray(effect_now, float), np.asarray(goal, float)]
        if len(self.map.in_dims) == 3:
            xs.append(np.asarray(ctx, float) if ctx is not None else zeros(self.map.in_dims[2]))
        return xs

    def command(self, effect_now, goal, ctx=None) -> np.ndarray:
        """Pure evaluation: zero command when no goal is posted."""
        if self.predictive is None:
            raise NoPairedPredictive(self.name)
        goal = np.asarray(goal, float)
        if not np.any(goal):
            return zeros(self.cause_dim)
        if self.gate is not None and not self.gate(np.asarray(effect_now, float), goal):
            return zeros(self.cause_dim)
        return self.map.evaluate(self._inputs(effect_now, goal, ctx))

    def emit(self, effect_now, goal, ctx=None) -> np.ndarray:
        out = self.command(effect_now, goal, ctx)
        self.record(self._inputs(effect_now, goal, ctx), out)
        return out

    def record(self, inputs, out):
        self.records.append(([np.asarray(x, float) for x in inputs], np.asarray(out, float)))
        while len(self.records) > self.lag:
            self.records.popleft()

    def tune(self, observed_effect, goal, gain: float = 1.0) -> float:
        """Distal step for the emission made ``lag`` ticks ago.

        Returns the RMS performance error.
        """
        if self.predictive is None:
            raise NoPairedPredictive(self.name)
        if len(self.records) < self.lag:
            return 0.0
        xs, out = self.records[0]
        distal = np.asarray(goal, float) - np.asarray(observed_effect, float)
        if not np.any(xs[1]) or not np.any(distal):
            return float(np.sqrt(np.mean(distal * distal)))
        ctx = xs[2] if len(xs) == 3 else None
        proximal = self.predictive.distal_to_proximal(xs[0], out, ctx, distal)
        self.map.step(xs, proximal, self.lr * gain)
        return float(np.sqrt(np.mean(distal * distal)))


def predict(p: PredictiveSchema, effect_now, cause_now, ctx=None):
    return p.predict(effect_now, cause_now, ctx)


def tune_predictive(p: PredictiveSchema, observed) -> PredictiveSchema:
    p.tune(observed)
    return p


def dual_emit(d: DualSchema, effect_now, goal, ctx=None):
    return d.emit(effect_now, goal, ctx)


def tune_dual(d: DualSchema, observed_effect, goal) -> DualSchema:
    d.tune(observed_effect, goal)
    return d


# -- kernel nodes -------------------------------------------------------

def predictive_node(p: PredictiveSchema, effect_dim: int, cause_dim: int, ctx_dim: int | None = None) -> SchemaNode:
    inputs = [inport("effect", effect_dim), inport("cause", cause_dim)]
    if ctx_dim:
        inputs.append(inport("context", ctx_dim))

    def behavior(inp, params, tick, rng):
        p = params["schema"]
        pred = p.map.evaluate(p._inputs(inp["effect"], inp["cause"], inp.get("context")))
        return BehaviorResult({"out": pred}, activity=min(1.0, activity_of(pred)))

    return SchemaNode(p.name, inputs, [outport("out", effect_dim, "prediction")], behavior,
                      params={"schema": p}, kind="predictive")


def dual_node(d: DualSchema, effect_dim: int, ctx_dim: int | None = None) -> SchemaNode:
    inputs = [inport("effect", effect_dim), inport("goal", effect_dim)]
    if ctx_dim:
        inputs.append(inport("context", ctx_dim))

    def behavior(inp, params, tick, rng):
        dual = params["schema"]
        if not dual.engaged:
            return {"out": zeros(dual.cause_dim)}
        return {"out": dual.command(inp["effect"], inp["goal"], inp.get("context"))}

    return SchemaNode(d.name, inputs, [outport("out", d.cause_dim, "modulatory")], behavior,
                      params={"schema": d}, kind="dual")

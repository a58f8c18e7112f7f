"""Hunger drive dynamics and goal schemas."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .kernel import activity_of, zeros
from .maps import DifferentiableMap, DimensionMismatch


@dataclass(frozen=True)
class DriveState:
    value: float
    d_max: float = 1.0
    alpha_d: float = 0.1
    kind: str = "appetitive"


def update_drive(s: DriveState, reduction: float = 0.0, incentive: float = 0.0) -> DriveState:
    """One step of drive growth, incentive and reduction, clamped to [0, d_max]."""
    if not (np.isfinite(reduction) and np.isfinite(incentive)):
        raise ValueError("drive inputs must be finite")
    d = s.value
    gap = abs(s.d_max - d)
    nxt = d + s.alpha_d * gap - reduction * abs(d) + incentive * gap
    return replace(s, value=float(min(max(nxt, 0.0), s.d_max)))


@dataclass
class GoalSchema:
    """Maps the triggering source schema's pattern to a desired pattern for an objective schema.

    ``source`` and ``objective`` are schema names.  The goal is only posted
    while the source is active; otherwise the zero pattern is returned.
    """

    source: str
    objective: str
    map: DifferentiableMap
    theta_act: float = 0.05
    lr: float = 0.05
    # when False the source only gates the goal; the map sees the context inputs
    source_in_map: bool = True
    tune_count: int = field(default=0, compare=False)

    @property
    def out_dim(self) -> int:
        return self.map.out_dim

    def emit(self, source_out: np.ndarray, *context: np.ndarray) -> np.ndarray:
        source_out = np.asarray(source_out, dtype=float)
        inputs = [source_out, *context] if self.source_in_map else list(context)
        if self.source_in_map and source_out.size != self.map.in_dims[0]:
            raise DimensionMismatch(f"source pattern dim {source_out.size}, goal map expects {self.map.in_dims[0]}")
        if activity_of(source_out) <= self.theta_act:
            return zeros(self.out_dim)
        return self.map.evaluate(inputs)

    def tune(self, inputs, observed: np.ndarray, eligible: bool = True) -> float:
        """One gated regression step of the emitted goal toward ``observed``.

        Returns the squared error norm before the step.  Non-eligible
        (non drive-reducing) trials leave the parameters untouched.
        """
        inputs = list(inputs) if isinstance(inputs, (list, tuple)) else [inputs]
        goal = self.map.evaluate(inputs)
        err = np.asarray(observed, dtype=float) - goal
        if eligible:
            self.map.step(inputs, err, self.lr)
            self.tune_count += 1
        return float(err @ err)


def goal_emit(g: GoalSchema, source_out, context=None) -> np.ndarray:
    return g.emit(source_out) if context is None else g.emit(source_out, context)


def goal_tune(g: GoalSchema, inputs, observed, eligible: bool = True) -> GoalSchema:
    g.tune(inputs, observed, eligible)
    return g


def goal_node(g: GoalSchema, name: str, source_dim: int, context_dims=()):
    """Kernel node posting ``g``'s goal; ports ``source`` and ``ctx0``, ``ctx1``..."""
    from .kernel import SchemaNode, inport, outport

    inputs = [inport("source", source_dim)] + [inport(f"ctx{i}", d) for i, d in enumerate(context_dims)]

    def behavior(inp, params, tick, rng):
        ctx = [inp[f"ctx{i}"] for i in range(len(context_dims))]
        return {"out": params["schema"].emit(inp["source"], *ctx)}

    return SchemaNode(name, inputs, [outport("out", g.out_dim, "goal")], behavior, {"schema": g}, kind="goal")

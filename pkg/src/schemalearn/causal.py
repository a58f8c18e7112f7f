"""Online discovery of delayed cause-effect relations between schema outputs.

For every (effect, cause, delay) triple an instantaneous score is computed
each tick::

    c = active(effect(t)) * active(cause(t - tau)) - alpha * dist(cause(t - tau), effect(t))

and folded into a reliability accumulator ``r += beta * c``.  Triples whose
reliability exceeds a threshold are reported as relations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .kernel import LagBeyondHorizon


def theta(v, theta_act: float = 0.05) -> float:
    """1.0 iff the pattern's mean absolute value exceeds ``theta_act``."""
    v = np.asarray(v, dtype=float)
    return 1.0 if v.size and float(np.mean(np.abs(v))) > theta_act else 0.0


def pattern_distance(y, x) -> float:
    """Mean squared difference, or squared difference of activity summaries when dims differ."""
    y = np.asarray(y, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if y.size != x.size:
        return (float(np.mean(np.abs(y))) - float(np.mean(np.abs(x)))) ** 2
    return float(np.mean((y - x) ** 2))


def instantaneous_c(o_x_now, o_y_lagged, alpha: float = 0.5, theta_act: float = 0.05) -> float:
    return theta(o_x_now, theta_act) * theta(o_y_lagged, theta_act) - alpha * pattern_distance(o_y_lagged, o_x_now)


@dataclass(frozen=True)
class Relation:
    effect: str
    cause: str
    tau: int
    r: float
    margin: float  # r(best tau) - r(runner-up tau)


class ReliabilityMatrix:
    def __init__(self, effects: Sequence[str], causes: Sequence[str], delays: Sequence[int] = range(9),
                 alpha: float = 0.5, beta: float = 0.01, theta_act: float = 0.05, r_threshold: float = 0.3):
        if alpha <= 0 or beta <= 0:
            raise ValueError("alpha and beta must be positive")
        triples = [(e, c, t) for e in effects for c in causes for t in delays]
        if len(set(triples)) != len(triples):
            raise ValueError("candidate space contains duplicate triples")
        self.effects = list(effects)
        self.causes = list(causes)
        self.delays = [int(t) for t in delays]
        self.alpha, self.beta = float(alpha), float(beta)
        self.theta_act, self.r_threshold = float(theta_act), float(r_threshold)
        self.r = np.zeros((len(self.effects), len(self.causes), len(self.delays)))
        self.updates = 0

    def copy(self) -> "ReliabilityMatrix":
        m = ReliabilityMatrix(self.effects, self.causes, self.delays, self.alpha, self.beta,
                              self.theta_act, self.r_threshold)
        m.r = self.r.copy()
        m.updates = self.updates
        return m

    def value(self, effect: str, cause: str, tau: int) -> float:
        return float(self.r[self.effects.index(effect), self.causes.index(cause), self.delays.index(tau)])

    def scores(self, effect_now: Mapping[str, np.ndarray],
               cause_lagged: Callable[[str, int], np.ndarray] | None = None,
               cause_stacks: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
        """Instantaneous c for every triple at one tick.

        Lagged causes come either from ``cause_lagged(name, tau)`` or from
        precomputed ``cause_stacks[name]`` of shape (len(delays), dim).
        """
        alpha, th = self.alpha, self.theta_act
        X = [np.asarray(effect_now[e], dtype=float).reshape(-1) for e in self.effects]
        ax = np.array([np.mean(np.abs(x)) for x in X])
        tx = (ax > th).astype(float)
        by_dim: dict[int, list[int]] = {}
        for i, x in enumerate(X):
            by_dim.setdefault(x.size, []).append(i)
        groups = {k: (idx, np.stack([X[i] for i in idx])) for k, idx in by_dim.items()}
        c = np.empty_like(self.r)
        for j, cause in enumerate(self.causes):
            if cause_stacks is not None:
                Y = np.asarray(cause_stacks[cause], dtype=float)
            else:
                Y = np.stack([np.asarray(cause_lagged(cause, t), dtype=float).reshape(-1) for t in self.delays])
            ay = np.mean(np.abs(Y), axis=1)
            ty = (ay > th).astype(float)
            d = (ay[None, :] - ax[:, None]) ** 2
            if Y.shape[1] in groups:
                idx, Xg = groups[Y.shape[1]]
                d[idx] = np.mean((Y[None, :, :] - Xg[:, None, :]) ** 2, axis=2)
            c[:, j] = tx[:, None] * ty[None, :] - alpha * d
        return c

    def accumulate(self, effect_now: Mapping[str, np.ndarray],
                   cause_lagged: Callable[[str, int], np.ndarray] | None = None,
                   cause_stacks: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
        c = self.scores(effect_now, cause_lagged, cause_stacks)
        self.r += self.beta * c
        self.updates += 1
        return c

    def accumulate_network(self, net) -> np.ndarray:
        """Fold one tick of a running network into the matrix."""
        if max(self.delays) > net.horizon:
            raise LagBeyondHorizon(f"delay {max(self.delays)} exceeds retention {net.horizon}")
        effect_now = {e: net.out(e) for e in self.effects}
        stacks = {c: net.read_lags(f"{c}.{net.schemas[c].default_out}", self.delays) for c in self.causes}
        return self.accumulate(effect_now, cause_stacks=stacks)

    def extract(self, r_threshold: float | None = None) -> list[Relation]:
        thr = self.r_threshold if r_threshold is None else r_threshold
        found = []
        for i, e in enumerate(self.effects):
            for j, c in enumerate(self.causes):
                row = self.r[i, j]
                k = int(np.argmax(row))
                if row[k] > thr:
                    rest = np.delete(row, k)
                    margin = float(row[k] - rest.max()) if rest.size else float("inf")
                    found.append(Relation(e, c, self.delays[k], float(row[k]), margin))
        found.sort(key=lambda rel: (-rel.r, rel.effect, rel.cause))
        return found

    def pairs(self, r_threshold: float | None = None) -> set[tuple[str, str]]:
        """Extracted relations as (cause, effect) pairs."""
        return {(rel.cause, rel.effect) for rel in self.extract(r_threshold)}

    def dump(self) -> str:
        """Tab-separated table: effect, cause, tau, r."""
        lines = ["effect\tcause\ttau\tr"]
        for i, e in enumerate(self.effects):
            for j, c in enumerate(self.causes):
                for k, t in enumerate(self.delays):
                    lines.append(f"{e}\t{c}\t{t}\t{float(self.r[i, j, k])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str, **kw) -> "ReliabilityMatrix":
        rows = [ln.split("\t") for ln in text.strip().splitlines()[1:]]
        effects = list(dict.fromkeys(r[0] for r in rows))
        causes = list(dict.fromkeys(r[1] for r in rows))
        delays = sorted({int(r[2]) for r in rows})
        m = cls(effects, causes, delays, **kw)
        for e, c, t, v in rows:
            m.r[effects.index(e), causes.index(c), delays.index(int(t))] = float(v)
        return m


def accumulate_trace(m: ReliabilityMatrix, trace: Mapping[str, np.ndarray]) -> ReliabilityMatrix:
    """Replay a recorded trace (name -> array of shape (T, dim)) through ``m``.

    Ticks before the trace start read as zero patterns.
    """
    T = len(next(iter(trace.values())))
    arrays = {k: np.asarray(v, dtype=float).reshape(T, -1) for k, v in trace.items()}
    lead = max(m.delays)
    padded = {c: np.vstack([np.zeros((lead, arrays[c].shape[1])), arrays[c]]) for c in m.causes}
    rows = np.array(m.delays)
    for t in range(T):
        stacks = {c: padded[c][lead + t - rows] for c in m.causes}
        m.accumulate({e: arrays[e][t] for e in m.effects}, cause_stacks=stacks)
    return m

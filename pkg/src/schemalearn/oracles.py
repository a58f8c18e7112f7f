"""Reference computations that check the engine against independent answers.

Each suite returns an :class:`OracleReport` whose rows carry the computed
reference values, so a failing report shows what the engine should have
produced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernel import rng_for


@dataclass
class OracleReport:
    suite: str
    passed: bool
    rows: list = field(default_factory=list)
    reference: dict = field(default_factory=dict)

    def text(self) -> str:
        head = f"{self.suite}: {'PASS' if self.passed else 'FAIL'}"
        return "\n".join([head] + [f"  {r}" for r in self.rows]) + "\n"


def planted_stream(seed: int, ticks: int = 400, causes: int = 3, planted=(2, 5),
                   pulse_prob: float = 0.15, noise: float = 0.02):
    """Random binary cause pulses; effect ``E{i}`` echoes ``C{i}`` after ``planted[i]`` ticks.

    Returns (trace, truth) with truth a list of (cause, effect, delay).
    """
    if len(planted) > causes:
        raise ValueError("more planted delays than causes")
    rng = rng_for(seed, "oracle:planted")
    trace = {f"C{j}": (rng.random(ticks) < pulse_prob).astype(float) for j in range(causes)}
    truth = []
    for i, tau in enumerate(planted):
        src = trace[f"C{i}"]
        e = np.zeros(ticks)
        e[tau:] = src[:ticks - tau]
        trace[f"E{i}"] = np.clip(e + noise * rng.standard_normal(ticks), 0.0, None)
        truth.append((f"C{i}", f"E{i}", int(tau)))
    return trace, truth


def brute_force_reliability(trace: dict, effects, causes, delays, alpha: float, beta: float,
                            theta_act: float = 0.05) -> dict:
    """Scalar-loop reliability for every triple, written independently of the matrix code."""
    T = len(next(iter(trace.values())))
    r = {}
    for e in effects:
        for c in causes:
            for tau in delays:
                acc = 0.0
                for t in range(T):
                    x = float(trace[e][t])
                    y = float(trace[c][t - tau]) if t - tau >= 0 else 0.0
                    hit = (1.0 if abs(x) > theta_act else 0.0) * (1.0 if abs(y) > theta_act else 0.0)
                    acc += beta * (hit - alpha * (y - x) ** 2)
                r[(e, c, tau)] = acc
    return r


def causal_suite(seed: int = 0) -> OracleReport:
    from .causal import ReliabilityMatrix, accumulate_trace

    trace, truth = planted_stream(seed, ticks=300)
    effects = sorted(k for k in trace if k[0] == "E")
    causes = sorted(k for k in trace if k[0] == "C")
    delays = list(range(9))
    m = accumulate_trace(ReliabilityMatrix(effects, causes, delays, 0.5, 0.01), trace)
    ref = brute_force_reliability(trace, effects, causes, delays, 0.5, 0.01)
    worst = max(abs(m.value(e, c, t) - v) for (e, c, t), v in ref.items())
    # exhaustive scan: best delay per pair above threshold
    ref_set = set()
    for e in effects:
        for c in causes:
            best = max(delays, key=lambda t: ref[(e, c, t)])
            if ref[(e, c, best)] > 0.3:
                ref_set.add((c, e, best))
    got = {(r.cause, r.effect, r.tau) for r in m.extract()}
    planted = {tuple(x) for x in truth}
    rows = [f"max |r - r_ref| = {worst:.3e}", f"reference set = {sorted(ref_set)}", f"extracted set = {sorted(got)}",
            f"planted set = {sorted(planted)}"]
    ok = worst < 1e-9 and got == ref_set == planted
    return OracleReport("causal", ok, rows, {"extraction": sorted(ref_set)})


def gradient_suite(seed: int = 0, probes: int = 100, eps: float = 1e-6) -> OracleReport:
    """Central-difference check of input and parameter gradients across map shapes."""
    from .maps import DifferentiableMap

    rng = rng_for(seed, "oracle:gradient")
    shapes = [([3, 2], 4, 0, None), ([5, 1, 3], 2, 6, None), ([4, 1], 3, 0, [1.0, 10.0]), ([2, 2], 2, 5, [0.5, 3.0])]
    rows, worst_all = [], 0.0
    for dims, out, hidden, scales in shapes:
        f = DifferentiableMap(dims, out, rng, init_scale=0.5, hidden=hidden, in_scales=scales)
        worst = 0.0
        for _ in range(probes):
            xs = [rng.standard_normal(d) * 0.5 for d in dims]
            v = rng.standard_normal(out)
            k = int(rng.integers(len(dims)))
            g = f.vjp_input(xs, v, k)
            num = np.zeros(dims[k])
            for i in range(dims[k]):
                hi = [x.copy() for x in xs]
                lo = [x.copy() for x in xs]
                hi[k][i] += eps
                lo[k][i] -= eps
                num[i] = (v @ f.evaluate(hi) - v @ f.evaluate(lo)) / (2 * eps)
            worst = max(worst, _rel(g, num))
            gp = f.vjp_params(xs, v)
            for name, arr in f.params.items():
                idx = tuple(int(rng.integers(s)) for s in arr.shape)
                keep = arr[idx]
                arr[idx] = keep + eps
                up = v @ f.evaluate(xs)
                arr[idx] = keep - eps
                dn = v @ f.evaluate(xs)
                arr[idx] = keep
                worst = max(worst, _rel(np.array([gp[name][idx]]), np.array([(up - dn) / (2 * eps)])))
        rows.append(f"dims={dims} out={out} hidden={hidden} scales={scales}: max rel err {worst:.2e}")
        worst_all = max(worst_all, worst)
    return OracleReport("gradient", worst_all < 1e-4, rows, {"max_rel_err": worst_all})


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.maximum(np.abs(a), np.abs(b)))))


class LinearPlant:
    """Exactly linear forward model ``y = gain * u`` with the map interface the dual needs."""

    def __init__(self, gain: float = 2.0):
        self.gain, self.in_dims, self.out_dim = float(gain), [1, 1], 1

    def evaluate(self, xs):
        return self.gain * np.asarray(xs[1], float)

    def vjp_input(self, xs, v, k):
        return self.gain * np.asarray(v, float) if k == 1 else np.zeros(1)


def _linear_inverse(seed: int, gain: float = 2.0, steps: int = 2000, span: float = 0.2):
    from .maps import DifferentiableMap
    from .predictive import DualSchema, PredictiveSchema

    plant = PredictiveSchema("Y", "U", LinearPlant(gain))
    # a gain on the goal input keeps small goals from starving the gradient
    dual = DualSchema("Y", "U", "G", DifferentiableMap([1, 1], 1, rng_for(seed, "oracle:dual-lin"),
                                                       in_scales=[1.0, 5.0]), plant)
    rng, zero = rng_for(seed, "oracle:goals-lin"), np.zeros(1)
    for _ in range(steps):
        g = np.array([rng.uniform(-span, span)])
        dual.tune(gain * dual.emit(zero, g), g)
    grid = np.linspace(-span, span, 9)
    learned = np.array([dual.command(zero, np.array([g]))[0] for g in grid])
    return grid, learned, grid / gain


def _tanh_inverse(seed: int, gain: float = 2.0, epochs: int = 600):
    from .maps import DifferentiableMap
    from .predictive import DualSchema, PredictiveSchema

    p_map = DifferentiableMap([1, 1], 1, rng_for(seed, "oracle:plant"))
    p_map.params["W"][:] = [[0.0, gain, 0.0]]  # effect input ignored, no bias
    plant = PredictiveSchema("Y", "U", p_map)
    dual = DualSchema("Y", "U", "G", DifferentiableMap([1, 1], 1, rng_for(seed, "oracle:dual")), plant)
    rng = rng_for(seed, "oracle:goals")
    zero = np.zeros(1)
    for ep in range(epochs):
        dual.lr = 0.2 * (1.0 - ep / epochs) + 1e-3
        for g in rng.uniform(-0.7, 0.7, 16):
            goal = np.array([g])
            u = dual.emit(zero, goal)
            dual.tune(plant.predict(zero, u), goal)
    grid = np.linspace(-0.6, 0.6, 13)
    learned = np.array([dual.command(zero, np.array([g]))[0] for g in grid])
    return grid, learned, np.arctanh(grid) / gain


def dual_inverse_suite(seed: int = 0, gain: float = 2.0) -> OracleReport:
    """Distal learning against analytic inverses.

    The linear plant ``y = gain * u`` must be inverted to within 1e-3 after
    2000 steps.  The squashed plant ``y = tanh(gain * u)`` is a harder
    check at 0.05; its goals are sampled a little beyond the checked range
    so the grid ends are not extrapolations, and the step size is annealed.
    """
    g1, u1, ref1 = _linear_inverse(seed, gain)
    err_lin = float(np.max(np.abs(u1 - ref1)))
    g2, u2, ref2 = _tanh_inverse(seed, gain)
    err_u = float(np.max(np.abs(u2 - ref2)))
    err_y = float(np.max(np.abs(np.tanh(gain * u2) - g2)))
    rows = [f"linear plant: max |u - g/{gain}| = {err_lin:.2e} (tol 1e-3)",
            f"tanh plant: max |u - atanh(g)/{gain}| = {err_u:.4f} (tol 0.05)",
            f"tanh plant: max |plant(u) - g| = {err_y:.4f} (tol 0.05)"]
    ok = err_lin < 1e-3 and err_u < 0.05 and err_y < 0.05
    ref = {"linear": {"grid": g1.tolist(), "learned": u1.tolist(), "analytic": ref1.tolist()},
           "tanh": {"grid": g2.tolist(), "learned": u2.tolist(), "analytic": ref2.tolist()}}
    return OracleReport("dual-inverse", ok, rows, ref)


SUITES = {"causal": causal_suite, "gradient": gradient_suite, "dual-inverse": dual_inverse_suite}


def run_oracles(names=("all",), out: str | Path | None = None, seed: int = 0) -> list[OracleReport]:
    chosen = list(SUITES) if "all" in names else list(names)
    unknown = [n for n in chosen if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown oracle suite(s): {', '.join(unknown)}")
    reports = [SUITES[n](seed) for n in chosen]
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle_report.txt").write_text("".join(r.text() for r in reports))
        for r in reports:
            (out / f"oracle_{r.suite}.json").write_text(json.dumps(r.reference, indent=1, sort_keys=True))
    return reports

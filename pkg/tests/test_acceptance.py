"""End-to-end acceptance checks.

Each test records one ``PASS``/``FAIL`` line with the measured numbers.
The lines are printed as they are produced and again in the pytest
terminal summary.  Run directly with ``python tests/test_acceptance.py``
to get only the lines.
"""

import statistics
import time

import numpy as np
import pytest

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run outside pytest's rootdir
    ACCEPTANCE_LINES = []

from schemalearn.causal import ReliabilityMatrix, accumulate_trace, instantaneous_c
from schemalearn.config import parse_config
from schemalearn.detour import DetourLearner, innate_trial
from schemalearn.drives import DriveState, update_drive
from schemalearn.harness import run_experiment
from schemalearn.kernel import activity_of, rng_for
from schemalearn.oracles import dual_inverse_suite, gradient_suite
from schemalearn.snap import SnapLearner, discover_causes

DETOUR_SEEDS = range(10)
SNAP_SEEDS = range(5)


def report(name: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok


# -- shared runs ---------------------------------------------------------

_cache: dict = {}


def detour_runs():
    if "detour" not in _cache:
        t0 = time.perf_counter()
        runs = {}
        for seed in DETOUR_SEEDS:
            learner = DetourLearner(seed, 20.0)
            runs[seed] = (learner, learner.run(5))
        _cache["detour"] = (runs, time.perf_counter() - t0)
    return _cache["detour"]


def first_learned_capture(trials):
    """Index of the first zero-bump capture after the pair was built, if any."""
    built = False
    for i, rec in enumerate(trials):
        if built and rec.outcome.captured and rec.outcome.bumps == 0:
            return i
        built = built or any(ev.label == "U1.A" for ev in rec.events)
    return None


# -- criteria --------------------------------------------------------------

def test_detour_innate():
    t0 = time.perf_counter()
    outs = [innate_trial(10.0, s) for s in DETOUR_SEEDS]
    dt = time.perf_counter() - t0
    good = sum(o.captured and o.bumps == 0 and o.ticks <= 200 for o in outs)
    ok = good == 10 and dt < 5.0
    assert report("detour innate (10 cm)", ok,
                  f"{good}/10 zero-bump captures within 200 ticks, max ticks {max(o.ticks for o in outs)}, "
                  f"{dt:.1f}s (limit 5s)")


def test_detour_failure_then_learning():
    runs, dt = detour_runs()
    naive = sum(not t[0].outcome.captured and t[0].outcome.bumps >= 3 for _, t in runs.values())
    learned = [first_learned_capture(t) for _, t in runs.values()]
    within = sum(i is not None and i <= 4 for i in learned)
    ok = naive == 10 and within >= 9 and dt < 30.0
    assert report("detour failure then learning (20 cm)", ok,
                  f"trial 1 fails with >=3 bumps in {naive}/10; zero-bump capture within 4 learning trials "
                  f"in {within}/10 (trial index {learned}); {dt:.1f}s (limit 30s)")


def test_detour_median_bumps_non_increasing():
    runs, _ = detour_runs()
    medians = [statistics.median(t[k].outcome.bumps for _, t in runs.values()) for k in range(5)]
    ok = all(b <= a for a, b in zip(medians, medians[1:]))
    assert report("detour median bumps non-increasing", ok, f"medians per trial {medians}")


def test_detour_post_learning_transfer():
    runs, _ = detour_runs()
    clean = sum(all(r.outcome.bumps == 0 for r in t[2:]) for _, t in runs.values())
    assert report("detour no frontal bumping after learning", clean >= 9,
                  f"zero bumps on every trial after trial 2 in {clean}/10 seeds (need 9)")


def test_anticipatory_pattern():
    runs, _ = detour_runs()
    leads = []
    for learner, trials in runs.values():
        i = first_learned_capture(trials)
        leads.append(None if i is None else learner.lead(trials[i]))
    good = sum(x is not None and x >= 2 for x in leads)
    assert report("anticipatory lobe in predicted mhm", good == 10,
                  f"lead >= 2 ticks in {good}/10 seeds (need 10); leads {leads}")


def test_snap_lesion_and_recovery():
    t0 = time.perf_counter()
    curves, audits = [], []
    for seed in SNAP_SEEDS:
        learner = SnapLearner(seed)

        def audit(net, learner=learner):
            if learner.rig.body.lesioned and learner.pair is not None:
                mod = net.last_step_inputs("LM")["mod"]
                if activity_of(mod) > learner.cons.theta:
                    audits.append(np.array_equal(net.out("LM"), mod))

        learner.rig.hooks.append(audit)
        curves.append(learner.run())
    dt = time.perf_counter() - t0
    pre = min(c.pre_rate for c in curves)
    probe = max(c.probe_rate for c in curves)
    firsts = [c.first_success_trial for c in curves]
    overshoot = all(c.first_success_aperture is not None and c.first_success_aperture > c.pre_mean_aperture
                    for c in curves)
    final = min(c.final_rate for c in curves)
    ok = (pre >= 0.95 and probe == 0.0 and all(f is not None and f <= 20 for f in firsts) and overshoot
          and final >= 0.95 and dt < 60.0)
    _cache["override_audits"] = audits
    assert report("snap lesion collapse and recovery", ok,
                  f"pre-lesion rate >= {pre:.2f}; post-lesion rate <= {probe:.2f}; first success at trials {firsts}; "
                  f"first-success aperture {[round(c.first_success_aperture or 0, 2) for c in curves]} vs "
                  f"pre-lesion mean {[round(c.pre_mean_aperture, 2) for c in curves]}; final rate >= {final:.2f}; "
                  f"{len(curves)} seeds in {dt:.1f}s (limit 60s)")


EXPECTED_COMBINED = {("DM", "JAW_REC"), ("LM", "JAW_REC"), ("GG", "TONGUE_REC"), ("HO", "TONGUE_REC"),
                     ("LU", "DISTX"), ("LU", "DISTY"), ("HE", "DISTY")}


def test_cause_sets_per_program():
    t0 = time.perf_counter()
    tp, jp, both = (discover_causes(p) for p in ("TP", "JP", "both"))
    dt = time.perf_counter() - t0
    combined = both.pairs()
    lm_tau = next((r.tau for r in both.extract() if (r.cause, r.effect) == ("LM", "JAW_REC")), None)
    accidental = (("GG", "JAW_REC") in tp.pairs() and ("LU", "JAW_REC") in jp.pairs()
                  and not {("GG", "JAW_REC"), ("LU", "JAW_REC")} & combined)
    hg_free = not any(e == "HG_REC" for m in (tp, jp, both) for _, e in m.pairs())
    ok = combined == EXPECTED_COMBINED and lm_tau == 3 and accidental and hg_free and dt < 30.0
    assert report("cause-effect sets after TP, JP and both", ok,
                  f"combined set exact: {combined == EXPECTED_COMBINED}; (LM,JAW_REC) tau={lm_tau}; "
                  f"accidental pairs resolved: {accidental}; HG_REC causeless: {hg_free}; {dt:.1f}s (limit 30s)")


def test_equation_properties():
    checks = {}
    checks["drive fixed points"] = (update_drive(DriveState(1.0)).value == 1.0
                                    and abs(update_drive(DriveState(0.0, alpha_d=0.1)).value - 0.1) < 1e-15
                                    and update_drive(DriveState(1.0), reduction=1.0).value == 0.0)
    rng = rng_for(0, "acceptance:drive")
    s, bounded = DriveState(0.3), True
    for _ in range(2000):
        s = update_drive(s, float(rng.uniform(0, 3)), float(rng.uniform(0, 3)))
        bounded &= 0.0 <= s.value <= 1.0
    checks["drive bounded"] = bounded
    m = ReliabilityMatrix(["E"], ["C"], [0])
    for _ in range(100):
        m.accumulate({"E": np.ones(1)}, lambda c, t: np.ones(1))
    checks["c and r closed forms"] = (instantaneous_c(0, 0) == 0 and instantaneous_c(0.5, 0.5) == 1
                                      and instantaneous_c(0.0, 1.0) == -0.5 and abs(m.value("E", "C", 0) - 1.0) < 1e-12)
    false = 0
    for seed in range(20):
        r = rng_for(seed, "acceptance:mc")
        trace = {n: (r.random(2000) < 0.15).astype(float) for n in ("C0", "C1", "E0", "E1")}
        false += len(accumulate_trace(ReliabilityMatrix(["E0", "E1"], ["C0", "C1"]), trace).extract())
    checks["0 false extractions / 20 seeds"] = false == 0
    audits = _cache.get("override_audits")
    if audits is None:
        pytest.skip("override audit comes from the snap recovery run")
    checks[f"override law ({len(audits)} ticks audited)"] = bool(audits) and all(audits)
    grad = gradient_suite()
    checks[f"gradients (max rel err {grad.reference['max_rel_err']:.1e})"] = grad.passed
    dual = dual_inverse_suite()
    checks["distal inverse on scalar plant"] = dual.passed
    ok = all(checks.values())
    assert report("equation property suites", ok, "; ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in checks.items()))


DET_CFGS = {
    "detour": "[experiment]\nscenario = detour\nseed = 5\ntrials = 3\n",
    "snap": "[experiment]\nscenario = snap\nseed = 2\ntrials = 6\n[snap.learn]\nhealthy_trials = 10\ntest_trials = 4\n",
    "synthetic-cause-effect": "[experiment]\nscenario = synthetic-cause-effect\nseed = 9\n",
}


def test_determinism(tmp_path):
    same = {}
    for name, text in DET_CFGS.items():
        cfg = parse_config(text)
        a = run_experiment(cfg, tmp_path / name / "a")
        b = run_experiment(cfg, tmp_path / name / "b")
        same[name] = a.digest == b.digest
    assert report("determinism", all(same.values()),
                  ", ".join(f"{k} manifest hashes {'equal' if v else 'DIFFER'}" for k, v in same.items()))


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    for fn in [test_detour_innate, test_detour_failure_then_learning, test_detour_median_bumps_non_increasing,
               test_detour_post_learning_transfer, test_anticipatory_pattern, test_snap_lesion_and_recovery,
               test_cause_sets_per_program, test_equation_properties]:
        try:
            fn()
        except AssertionError:
            pass
    with tempfile.TemporaryDirectory() as d:
        try:
            test_determinism(Path(d))
        except AssertionError:
            pass
    sys.exit(0 if all(x.startswith("PASS") for x in ACCEPTANCE_LINES) else 1)

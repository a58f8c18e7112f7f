"""Seeded experiment runs and their on-disk artifacts.

A run directory holds:

    resolved.ini        every setting, defaults included (output location aside)
    manifest.json       config hash, engine version, outcomes, log, artifact hashes
    metrics.csv         one row per trial
    construction.jsonl  one constructor record per line
    matrix.tsv          final reliability matrix
    traces/trial_NNN.json
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig

METRIC_COLUMNS = ["trial", "captured", "bumps", "ticks", "aperture", "construction_events"]


class ScenarioFailure(RuntimeError):
    def __init__(self, scenario: str, trial: int | None, cause: BaseException):
        where = "" if trial is None else f" in trial {trial}"
        super().__init__(f"{scenario} failed{where}: {type(cause).__name__}: {cause}")
        self.scenario, self.trial, self.cause = scenario, trial, cause


@dataclass
class RunManifest:
    config_hash: str
    engine_version: str
    scenario: str
    seed: int
    outcomes: list
    construction_log: list
    matrix: dict
    artifacts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass
class ScenarioResult:
    outcomes: list    # one metrics dict per trial
    traces: list      # one JSON-ready dict per trial
    log: list         # constructor records as dicts
    matrix_tsv: str


def _arr(x) -> list:
    return np.asarray(x, dtype=float).round(12).tolist()


# -- scenarios --------------------------------------------------------------

def _run_detour(cfg: ExperimentConfig) -> ScenarioResult:
    from .detour import DetourLearner

    dp, lp = cfg.section("detour.world"), cfg.section("detour.learn")
    width = cfg.section("detour").barrier_width
    learner = DetourLearner(cfg.seed, width, dp, lp)
    learner.pretrain_goal()
    outcomes, traces = [], []
    for i in range(cfg.experiment.trials):
        try:
            rec = learner.trial()
        except Exception as e:
            raise ScenarioFailure("detour", i + 1, e) from e
        o = rec.outcome
        outcomes.append({"trial": i + 1, "captured": o.captured, "bumps": o.bumps, "ticks": o.ticks,
                         "aperture": None, "construction_events": [ev.label for ev in rec.events]})
        traces.append({
            "scenario": "detour", "trial": i + 1, "drive": rec.drive,
            "barrier": {"y": dp.fence_y, "width": width}, "prey": [0.0, dp.prey_y],
            "path": [list(p) for p in o.path],
            "commands": [[c.kind, c.magnitude] for c in o.commands],
            "mhm": _arr(rec.mhm), "predicted": _arr(rec.predicted),
        })
    return ScenarioResult(outcomes, traces, [r.to_dict() for r in learner.cons.log], learner.matrix.dump())


def _run_snap(cfg: ExperimentConfig) -> ScenarioResult:
    from .snap import PREMOTOR, PROPRIO, SnapLearner

    lp = dataclasses.replace(cfg.section("snap.learn"), recovery_trials=cfg.experiment.trials)
    learner = SnapLearner(cfg.seed, cfg.section("snap.body"), lp)
    try:
        curve = learner.run()
    except Exception as e:
        raise ScenarioFailure("snap", None, e) from e
    by_tick: dict[int, list] = {}
    for r in curve.records:
        by_tick.setdefault(r.tick, []).append(r.trigger.label)
    outcomes, traces = [], []
    ticks_per = learner.sp.trial_ticks
    for i, o in enumerate(curve.outcomes):
        outcomes.append({"trial": i + 1, "captured": o.captured, "bumps": None, "ticks": ticks_per,
                         "aperture": round(o.aperture, 12), "construction_events": []})
        traces.append({"scenario": "snap", "trial": i + 1, "program": o.program, "captured": o.captured,
                       "rows": {n: _arr(o.traces[n]) for n in PREMOTOR + PROPRIO}})
    # recovery-phase construction events, attached to the trial they closed
    first_tick = learner.rig.net.tick - len(curve.outcomes) * (ticks_per + 2)
    for tick, labels in sorted(by_tick.items()):
        k = (tick - first_tick - 1) // (ticks_per + 2)
        if 0 <= k < len(outcomes):
            outcomes[k]["construction_events"] += labels
    summary = {"pre_rate": curve.pre_rate, "pre_mean_aperture": curve.pre_mean_aperture,
               "probe_rate": curve.probe_rate, "first_success_trial": curve.first_success_trial,
               "first_success_aperture": curve.first_success_aperture, "final_rate": curve.final_rate}
    traces.append({"scenario": "snap", "summary": summary})
    return ScenarioResult(outcomes, traces, [r.to_dict() for r in curve.records], learner.matrix.dump())


def _run_synthetic(cfg: ExperimentConfig) -> ScenarioResult:
    from .causal import ReliabilityMatrix, accumulate_trace
    from .oracles import planted_stream

    sp = cfg.section("synthetic")
    trace, truth = planted_stream(cfg.seed, sp.ticks, sp.causes, sp.planted, sp.pulse_prob, sp.noise)
    causes = sorted(k for k in trace if k.startswith("C"))
    effects = sorted(k for k in trace if k.startswith("E"))
    m = ReliabilityMatrix(effects, causes, range(sp.max_delay + 1), sp.alpha, sp.beta, r_threshold=sp.r_threshold)
    try:
        accumulate_trace(m, trace)
    except Exception as e:
        raise ScenarioFailure("synthetic-cause-effect", None, e) from e
    found = [[r.cause, r.effect, r.tau] for r in m.extract()]
    outcomes = [{"trial": 1, "captured": None, "bumps": None, "ticks": sp.ticks, "aperture": None,
                 "construction_events": [f"{c}->{e}@{t}" for c, e, t in found]}]
    traces = [{"scenario": "synthetic-cause-effect", "trial": 1, "planted": [list(x) for x in truth],
               "extracted": found, "rows": {k: _arr(v) for k, v in trace.items()}}]
    return ScenarioResult(outcomes, traces, [], m.dump())


SCENARIO_RUNNERS = {"detour": _run_detour, "snap": _run_snap, "synthetic-cause-effect": _run_synthetic}


# -- artifacts --------------------------------------------------------------

def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _metrics_csv(outcomes: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for o in outcomes:
        row = []
        for c in METRIC_COLUMNS:
            v = o[c]
            row.append(";".join(v) if isinstance(v, list) else ("" if v is None else v))
        w.writerow(row)
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> RunManifest:
    """Execute the configured scenario and write its artifacts; returns the manifest."""
    out = Path(out if out is not None else cfg.experiment.out)
    res = SCENARIO_RUNNERS[cfg.scenario](cfg)
    files: dict[str, bytes] = {
        "resolved.ini": cfg.to_ini(with_out=False).encode(),  # location-free, so hashes match across dirs
        "metrics.csv": _metrics_csv(res.outcomes).encode(),
        "construction.jsonl": "".join(json.dumps(r, sort_keys=True) + "\n" for r in res.log).encode(),
        "matrix.tsv": res.matrix_tsv.encode(),
    }
    for i, t in enumerate(res.traces):
        name = f"traces/trial_{i + 1:03d}.json" if "trial" in t else "traces/summary.json"
        files[name] = json.dumps(t, sort_keys=True).encode()
    manifest = RunManifest(
        config_hash=cfg.digest(), engine_version=__version__, scenario=cfg.scenario, seed=cfg.seed,
        outcomes=res.outcomes, construction_log=res.log,
        matrix={"file": "matrix.tsv", "sha256": _sha(files["matrix.tsv"])},
        artifacts={k: _sha(v) for k, v in sorted(files.items())},
    )
    (out / "traces").mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        (out / name).write_bytes(data)
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_manifest(run_dir) -> dict:
    from .plots import MissingArtifact

    p = Path(run_dir) / "manifest.json"
    if not p.is_file():
        raise MissingArtifact(str(p))
    return json.loads(p.read_text())

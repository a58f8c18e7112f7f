"""Learning to snap: the prey-catching motor circuit and hypoglossal lesion.

Premotor schemas (LU, HE, DM, LM, GG, HO) play raised-cosine burst
schedules clocked by the INT1 interneuron.  A BODY schema integrates them
into jaw, tongue and lunge kinematics and exposes proprioceptive signals that
the perceptual schemas (HG_REC, JAW_REC, TONGUE_REC, DISTX, DISTY) relay.

Jaw opening depends on timing: the levator (LM) peak must trail the
depressor (DM) peak by at least two ticks.  With an intact hypoglossal
nerve the LM burst is delayed; after a lesion LM fires with DM and the mouth
stays shut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .causal import ReliabilityMatrix
from .constructor import Constructor, GoalBinding, Kind, Trend, classify
from .drives import DriveState, GoalSchema, goal_node, update_drive
from .kernel import BehaviorResult, Network, SchemaNode, activity_of, inport, outport, rng_for, zeros
from .maps import DifferentiableMap

PREMOTOR = ["LU", "HE", "DM", "LM", "GG", "HO"]
PROPRIO = ["HG_REC", "JAW_REC", "TONGUE_REC", "DISTX", "DISTY"]
TP, JP = "TP", "JP"


@dataclass(frozen=True)
class Burst:
    onset: float
    width: float
    amp: float


# Burst tables per program, in INT1 phase ticks.  LM's onset is relative to
# DM's and gets the hypoglossal delay added on top when the nerve is intact.
DEFAULT_PROGRAMS = {
    TP: {"LU": Burst(0, 6, 0.03), "HE": Burst(0, 6, 0.0), "DM": Burst(0, 8, 0.9),
         "LM": Burst(0, 8, 0.9), "GG": Burst(4, 8, 0.45), "HO": Burst(8, 8, 0.45)},
    JP: {"LU": Burst(2, 10, 0.8), "HE": Burst(12, 6, 0.4), "DM": Burst(0, 10, 0.9),
         "LM": Burst(0, 10, 0.9), "GG": Burst(0, 6, 0.0), "HO": Burst(0, 6, 0.0)},
}


@dataclass
class SnapParams:
    trial_ticks: int = 40
    phase_dim: int = 24
    hg_delay: int = 4
    lag_jitter: int = 1
    onset_jitter: int = 1
    body_delay: int = 1
    aperture_gain: float = 1.0
    aperture_ref: float = 0.5
    size_factor: float = 0.8
    tongue_reach: float = 4.0
    tongue_ref: float = 0.4
    lunge_reach: float = 6.0
    small_prey: float = 0.5
    large_prey: float = 1.0
    prey_distance: float = 3.0
    resp_period: int = 17
    resp_amp: float = 0.8
    resp_duty: float = 0.35
    programs: dict = field(default_factory=lambda: DEFAULT_PROGRAMS)


def raised_cosine(phase: float, b: Burst) -> float:
    if b.amp == 0.0 or b.width <= 0:
        return 0.0
    x = (phase - b.onset) / b.width
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return b.amp * 0.5 * (1.0 - math.cos(2.0 * math.pi * x))


@dataclass
class BodyState:
    """Per-animal body and the current trial's prey; set by the harness between ticks."""

    lesioned: bool = False
    program: str = TP
    prey_size: float = 0.5
    prey_distance: float = 3.0
    prey_visible: bool = False
    onset_shift: dict = field(default_factory=dict)
    lm_lag: int = 4


@dataclass(frozen=True)
class Kinematics:
    """Trial-local plant state carried in the BODY schema's params."""

    trial_tick: int = 0
    dm_peak: float = 0.0
    dm_peak_tick: int = -1
    lm_peak: float = 0.0
    lm_peak_tick: int = -1
    tongue_ext: float = 0.0
    lunge: float = 0.0
    buffers: tuple = ()


def lesion(body: BodyState) -> BodyState:
    body.lesioned = True
    return body


def aperture_law(dm_peak_tick: int, lm_peak_tick: int, dm_amp: float, gain: float) -> float:
    """Jaw aperture from burst timing: positive iff LM peaks >= 2 ticks after DM."""
    if dm_peak_tick < 0 or lm_peak_tick < 0:
        return 0.0
    return gain * max(0, lm_peak_tick - dm_peak_tick - 1) * dm_amp


def program_for(size: float, params: SnapParams) -> str:
    return TP if size < 0.5 * (params.small_prey + params.large_prey) else JP


# -- schema behaviors -----------------------------------------------------

def _prey_node(body: BodyState) -> SchemaNode:
    def behavior(inp, params, tick, rng):
        b = params["body"]
        if not b.prey_visible:
            return {"out": zeros(3)}
        return {"out": np.array([1.0, b.prey_size, b.prey_distance / 10.0])}

    return SchemaNode("PREY", [], [outport("out", 3, "perceptual")], behavior, {"body": body})


def _int1_node(sp: SnapParams) -> SchemaNode:
    """Phase clock: one-hot of ticks since prey onset, scaled by prey size."""

    def behavior(inp, params, tick, rng):
        prey = inp["prey"]
        out = zeros(sp.phase_dim)
        if prey[0] > 0.5:
            k = params["count"]
            if k < sp.phase_dim:
                out[k] = prey[1]
            return BehaviorResult({"out": out}, {"count": k + 1})
        return BehaviorResult({"out": out}, {"count": 0})

    return SchemaNode("INT1", [inport("prey", 3)], [outport("out", sp.phase_dim, "sensorimotor")],
                      behavior, {"count": 0})


def _premotor_node(name: str, body: BodyState, sp: SnapParams) -> SchemaNode:
    def behavior(inp, params, tick, rng):
        b: BodyState = params["body"]
        phase_code = inp["phase"]
        if not np.any(phase_code):
            return {"out": zeros(1)}
        phase = float(np.argmax(phase_code))
        burst = sp.programs[b.program][name]
        onset = burst.onset + b.onset_shift.get(name, 0)
        if name == "LM":
            onset = b.onset_shift.get("DM", 0) + burst.onset + (0 if b.lesioned else b.lm_lag)
        if b.lesioned and name in ("GG", "HO"):
            return {"out": zeros(1)}
        v = raised_cosine(phase, Burst(onset, burst.width, burst.amp))
        return {"out": np.array([v])}

    ports = [inport("phase", sp.phase_dim), inport("mod", 1, "modulatory", modulatory=True)]
    return SchemaNode(name, ports, [outport("out", 1, "premotor")], behavior, {"body": body})


def _body_node(body: BodyState, sp: SnapParams) -> SchemaNode:
    """Plant: integrates premotor drive into kinematics and proprioception."""

    def behavior(inp, params, tick, rng):
        b: BodyState = params["body"]
        k: Kinematics = params["kin"]
        v = [float(inp[n][0]) for n in PREMOTOR]
        dm, lm, gg, ho, lu = v[2], v[3], v[4], v[5], v[0]
        t = k.trial_tick
        dm_peak, dm_tick = (dm, t) if dm > k.dm_peak else (k.dm_peak, k.dm_peak_tick)
        lm_peak, lm_tick = (lm, t) if lm > k.lm_peak else (k.lm_peak, k.lm_peak_tick)
        bufs = k.buffers or tuple((0.0,) * (sp.body_delay + 1) for _ in PREMOTOR)
        bufs = tuple(buf[1:] + (x,) for buf, x in zip(bufs, v))
        lag = {n: buf[0] for n, buf in zip(PREMOTOR, bufs)}
        nk = Kinematics(
            trial_tick=t + 1, dm_peak=dm_peak, dm_peak_tick=dm_tick, lm_peak=lm_peak, lm_peak_tick=lm_tick,
            tongue_ext=max(k.tongue_ext, sp.tongue_reach * min(1.0, (gg + ho) / sp.tongue_ref)),
            lunge=max(k.lunge, sp.lunge_reach * min(1.0, lu / 0.8)),
            buffers=bufs,
        )
        ap = aperture_law(dm_tick, lm_tick, dm_peak, sp.aperture_gain)
        jaw = min(1.0, ap / sp.aperture_ref) * lag["LM"]
        if b.lesioned:
            hg = 0.0
        else:
            ph = ((tick + params["resp_phase"]) % sp.resp_period) / sp.resp_period
            hg = sp.resp_amp * math.sin(math.pi * ph / sp.resp_duty) if ph < sp.resp_duty else 0.0
        out = {
            "HG_REC": [hg],
            "JAW_REC": [jaw],
            "TONGUE_REC": [min(1.0, lag["GG"] + lag["HO"])],
            "DISTX": [lag["LU"]],
            "DISTY": [0.5 * lag["LU"] + lag["HE"]],
        }
        return BehaviorResult({n: np.array(x) for n, x in out.items()}, {"kin": nk})

    inputs = [inport(n, 1) for n in PREMOTOR]
    outputs = [outport(n, 1, "proprioceptive") for n in PROPRIO]
    return SchemaNode("BODY", inputs, outputs, behavior, {"body": body, "resp_phase": 0, "kin": Kinematics()})


def _relay_node(name: str) -> SchemaNode:
    def behavior(inp, params, tick, rng):
        return {"out": inp["in"]}

    return SchemaNode(name, [inport("in", 1)], [outport("out", 1, "perceptual")], behavior)


def build_network(body: BodyState, sp: SnapParams, seed: int = 0, trace=None) -> Network:
    net = Network(seed=seed, trace=trace)
    net.add_schema(_prey_node(body))
    net.add_schema(_int1_node(sp))
    net.connect("PREY.out", "INT1.prey")
    for n in PREMOTOR:
        net.add_schema(_premotor_node(n, body, sp))
        net.connect("INT1.out", f"{n}.phase")
    bnode = _body_node(body, sp)
    bnode.params["resp_phase"] = int(rng_for(seed, "snap:resp").integers(sp.resp_period))
    net.add_schema(bnode)
    for n in PREMOTOR:
        net.connect(f"{n}.out", f"BODY.{n}")
    for n in PROPRIO:
        net.add_schema(_relay_node(n))
        net.connect(f"BODY.{n}", f"{n}.in")
    return net


# -- trials ---------------------------------------------------------------

@dataclass
class CaptureOutcome:
    program: str
    mouth_opened: bool
    contact: bool
    captured: bool
    aperture: float
    lm_lag: int
    traces: dict


def _peak_tick(x: np.ndarray) -> int:
    return int(np.argmax(x)) if np.any(x > 0) else -1


class SnapRig:
    """A network plus the harness-side state needed to run capture trials."""

    def __init__(self, sp: SnapParams | None = None, seed: int = 0, trace=None):
        self.sp = sp or SnapParams()
        self.seed = seed
        self.body = BodyState(prey_distance=self.sp.prey_distance)
        self.net = build_network(self.body, self.sp, seed, trace)
        self.jitter = rng_for(seed, "snap:jitter")
        self.hooks: list = []  # callables(net) run after every committed tick
        self.trial = 0

    def _tick(self):
        self.net.step()
        for h in self.hooks:
            h(self.net)

    def run_capture(self, size: float, gap: int = 2) -> CaptureOutcome:
        b, sp = self.body, self.sp
        b.prey_size = size
        b.program = program_for(size, sp)
        j = self.jitter
        b.onset_shift = {n: int(j.integers(-sp.onset_jitter, sp.onset_jitter + 1)) for n in PREMOTOR}
        b.lm_lag = sp.hg_delay + int(j.integers(-sp.lag_jitter, sp.lag_jitter + 1))
        b.prey_visible = False
        for _ in range(gap):
            self._tick()
        self.net.schemas["BODY"].params["kin"] = Kinematics()
        b.prey_visible = True
        rec = {n: [] for n in PREMOTOR + PROPRIO}
        jaw_open = []
        for _ in range(sp.trial_ticks):
            self._tick()
            for n in rec:
                rec[n].append(float(self.net.out(n)[0]))
            jaw_open.append(float(self.net.read_port("BODY.JAW_REC")[0]))
        b.prey_visible = False
        self.trial += 1
        kin: Kinematics = self.net.schemas["BODY"].params["kin"]
        traces = {n: np.array(v) for n, v in rec.items()}
        aperture = aperture_law(kin.dm_peak_tick, kin.lm_peak_tick, kin.dm_peak, sp.aperture_gain)
        lag = _peak_tick(traces["LM"]) - _peak_tick(traces["DM"])
        reach = kin.tongue_ext + kin.lunge
        opened = aperture > 0.0
        contact = reach >= b.prey_distance
        captured = opened and contact and aperture >= sp.size_factor * size
        return CaptureOutcome(b.program, opened, contact, captured, aperture, lag, traces)


# -- learning protocol ---------------------------------------------------

GOAL_NODE = "G[PREY,JAW_REC]"


@dataclass
class LearnParams:
    alpha: float = 3.0
    beta: float = 0.01
    r_threshold: float = 0.3
    healthy_trials: int = 30
    test_trials: int = 40
    probe_trials: int = 10
    recovery_trials: int = 40
    final_window: int = 20
    goal_lr: float = 0.2
    p_lr: float = 0.1
    d_lr: float = 0.05
    intensify: float = 10.0
    error_threshold: float = 0.1
    sim_epochs: int = 2
    hidden: int = 0


@dataclass
class RecoveryCurve:
    pre_rate: float
    pre_mean_aperture: float
    probe_rate: float
    first_success_trial: int | None
    first_success_aperture: float | None
    success: list
    apertures: list
    final_rate: float
    records: list
    outcomes: list = field(default_factory=list)


class SnapLearner:
    """Healthy learning, lesion and constructor-driven recovery on one rig."""

    def __init__(self, seed: int = 0, sp: SnapParams | None = None, lp: LearnParams | None = None, trace=None):
        self.sp, self.lp = sp or SnapParams(), lp or LearnParams()
        self.rig = SnapRig(self.sp, seed, trace)
        self.seed = seed
        net = self.rig.net
        self.goal = GoalSchema("PREY", "JAW_REC",
                               DifferentiableMap([self.sp.phase_dim], 1, rng_for(seed, "snap:goal")),
                               lr=self.lp.goal_lr, source_in_map=False)
        net.add_schema(goal_node(self.goal, GOAL_NODE, 3, [self.sp.phase_dim]))
        net.connect("PREY.out", f"{GOAL_NODE}.source")
        net.connect("INT1.out", f"{GOAL_NODE}.ctx0")
        self.matrix = ReliabilityMatrix(PROPRIO, PREMOTOR, range(9), self.lp.alpha, self.lp.beta,
                                        r_threshold=self.lp.r_threshold)
        self.cons = Constructor(net, {"JAW_REC": GoalBinding(GOAL_NODE, self.goal)}, seed=seed, hidden=self.lp.hidden,
                                p_lr=self.lp.p_lr, d_lr=self.lp.d_lr, intensify=self.lp.intensify)
        self.drive = DriveState(0.8)
        self.learning = True
        self.accumulating = True
        self._unresolved: set = set()
        self._hist: dict[str, list] = {}
        self._obs: list = []
        self.rig.hooks.append(self._after_tick)

    @property
    def pair(self):
        return self.cons.pairs.get(("LM", "JAW_REC"))

    def _after_tick(self, net):
        if self.accumulating:
            self.matrix.accumulate_network(net)
        h = self._hist
        h.setdefault("int1", []).append(net.out("INT1"))
        h.setdefault("jaw", []).append(net.out("JAW_REC"))
        h.setdefault("goal", []).append(net.out(GOAL_NODE))
        if self.learning and self.cons.pairs:
            errs = self.cons.tune_pairs()
            self._obs.extend((net.tick, ob) for ob in self.cons.observations(errs))

    def _train_goal(self, tau: int):
        lead = tau + 3
        int1, jaw = self._hist["int1"], self._hist["jaw"]
        for m in range(lead, len(jaw)):
            if np.any(int1[m - lead]):
                self.goal.tune([int1[m - lead]], jaw[m])

    def _simulate_dual(self, pair):
        """Imprint the dual by mental simulation through the predictive map."""
        p, d, tau = pair.predictive, pair.dual, pair.tau
        jaw, goal = self._hist["jaw"], self._hist["goal"]
        for _ in range(self.lp.sim_epochs):
            for k in range(1, len(jaw) - tau - 1):
                if not np.any(goal[k - 1]):
                    continue
                xs = [jaw[k - 1], goal[k - 1]]
                u = d.map.evaluate(xs)
                pin = [jaw[k + tau], u]
                err = goal[k - 1] - p.map.evaluate(pin)
                prox = p.map.vjp_input(pin, err, 1)
                d.map.step(xs, prox, d.lr)

    def trial(self, size: float) -> CaptureOutcome:
        self._hist, self._obs = {}, []
        known = self.matrix.pairs() if self.learning else set()
        d0 = self.drive.value
        out = self.rig.run_capture(size)
        self.drive = update_drive(self.drive, reduction=0.9 if out.captured else 0.0)
        if self.learning:
            self._end_of_trial(out, d0, known)
        return out

    def _end_of_trial(self, out: CaptureOutcome, d0: float, known: set):
        trend = Trend.CLOSER if out.captured and self.drive.value < d0 else Trend.FARTHER
        tick = self.rig.net.tick
        covered = set(self.cons.pairs)
        new = [r for r in self.matrix.extract()
               if (r.cause, r.effect) not in covered and (r.cause, r.effect) not in self._unresolved]
        worst = {}
        for t, ob in self._obs:
            key = (ob.cause, ob.effect)
            if key not in worst or ob.error > worst[key][1].error:
                worst[key] = (t, ob)
        events = classify(new, [ob for _, ob in worst.values()], {"JAW_REC": trend}, tick,
                          self.lp.error_threshold, default_trend=trend)
        for rec in self.cons.handle(events):
            if rec.action == "unresolved":
                self._unresolved.add((rec.trigger.cause, rec.trigger.effect))
        for rec in self.cons.log:
            if rec.action == "unresolved":
                self._unresolved.add((rec.trigger.cause, rec.trigger.effect))
        pair = self.pair
        if pair is not None and out.captured and pair.dual.engaged:
            pair.tuning = False  # capture recovered; tuning resumes on the next U2.B
        if pair is not None and out.captured and not self.rig.body.lesioned:
            self._train_goal(pair.tau)
            self._simulate_dual(pair)

    def healthy_phase(self, trials: int | None = None) -> list[CaptureOutcome]:
        n = self.lp.healthy_trials if trials is None else trials
        return [self.trial(self._size(i)) for i in range(n)]

    def _size(self, i: int) -> float:
        return self.sp.small_prey if i % 2 == 0 else self.sp.large_prey

    def test(self, n: int) -> list[CaptureOutcome]:
        was, acc = self.learning, self.accumulating
        self.learning = self.accumulating = False
        try:
            return [self.trial(self._size(i)) for i in range(n)]
        finally:
            self.learning, self.accumulating = was, acc

    def run(self) -> RecoveryCurve:
        lp = self.lp
        self.healthy_phase()
        pre = self.test(lp.test_trials)
        lesion(self.rig.body)
        probe = self.test(lp.probe_trials)
        self.accumulating = False
        # without hypoglossal drive the tongue is silent; only jaw prehension is in range
        rec = [self.trial(self.sp.large_prey) for _ in range(lp.recovery_trials)]
        success = [o.captured for o in rec]
        first = next((i + 1 for i, s in enumerate(success) if s), None)
        return RecoveryCurve(
            pre_rate=float(np.mean([o.captured for o in pre])),
            pre_mean_aperture=float(np.mean([o.aperture for o in pre])),
            probe_rate=float(np.mean([o.captured for o in probe])),
            first_success_trial=first,
            first_success_aperture=rec[first - 1].aperture if first else None,
            success=success,
            apertures=[o.aperture for o in rec],
            final_rate=float(np.mean(success[-lp.final_window:])),
            records=list(self.cons.log),
            outcomes=rec,
        )


def run_recovery(trials: int = 40, seeds=(0, 1, 2), sp: SnapParams | None = None,
                 lp: LearnParams | None = None) -> list[RecoveryCurve]:
    out = []
    for s in seeds:
        lpp = lp or LearnParams()
        lpp = LearnParams(**{**lpp.__dict__, "recovery_trials": trials})
        out.append(SnapLearner(s, sp, lpp).run())
    return out


def discover_causes(policy: str = "both", trials: int = 30, seed: int = 0, sp: SnapParams | None = None,
                    lp: LearnParams | None = None) -> ReliabilityMatrix:
    """Accumulate premotor -> proprioceptive reliabilities over healthy captures.

    ``policy`` picks the program: "TP" (small prey only), "JP" (large prey
    only) or "both" (alternating).
    """
    sp, lp = sp or SnapParams(), lp or LearnParams()
    sizes = {TP: [sp.small_prey], JP: [sp.large_prey], "both": [sp.small_prey, sp.large_prey]}
    if policy not in sizes:
        raise ValueError(f"unknown program policy {policy!r}")
    rig = SnapRig(sp, seed)
    m = ReliabilityMatrix(PROPRIO, PREMOTOR, range(9), lp.alpha, lp.beta, r_threshold=lp.r_threshold)
    rig.hooks.append(m.accumulate_network)
    seq = sizes[policy]
    for i in range(trials):
        rig.run_capture(seq[i % len(seq)])
    return m

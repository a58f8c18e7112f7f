"""Learning to detour: frog, prey and pailing-fence barriers on a 2-D plane.

Units are centimetres and degrees.  Heading maps are egocentric rasters of
``BINS`` bins; bin ``k`` is centred on bearing ``(k - BINS/2) * BIN_DEG``,
positive to the left.

Perception runs inside the kernel tick (PREY, SOR, TACTILE read the world),
MHM integrates the fields, the motor schemas propose commands, and the
harness executes the arbitrated command between ticks.  Because each schema
adds one tick of latency, the body moves once every ``move_period`` ticks so
every movement is decided on fresh perception.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kernel import BehaviorResult, Network, SchemaNode, activity_of, inport, outport, rng_for, zeros
from .maps import DimensionMismatch

BINS = 64
BIN_DEG = 360.0 / BINS
CENTERS = (np.arange(BINS) - BINS // 2) * BIN_DEG


def wrap_deg(a: float) -> float:
    return (a + 180.0) % 360.0 - 180.0


def bin_of(bearing: float) -> int:
    return (int(round(wrap_deg(bearing) / BIN_DEG)) + BINS // 2) % BINS


# -- world -----------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    x0: float
    y0: float
    x1: float
    y1: float


def fence(width: float, y: float, cx: float = 0.0) -> Segment:
    return Segment(cx - width / 2, y, cx + width / 2, y)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float  # degrees, counter-clockwise from +x


@dataclass(frozen=True)
class WorldState:
    frog: Pose
    prey: tuple[float, float] | None
    barriers: tuple[Segment, ...]
    tick: int = 0
    contact: bool = False
    captured: bool = False


@dataclass
class DetourParams:
    forward_step: float = 4.0
    side_step: float = 3.0
    orient_step: float = 15.0
    orient_deadband: float = 7.5
    snap_radius: float = 5.0
    snap_field: float = 15.0
    sigma_bins: float = 3.0
    support_sigmas: float = 2.0
    distance_scale: float = 20.0
    repel_depth: float = 1.2
    repel_margin: float = 3.0
    gap_leak: float = 0.1
    side_amp: float = 0.1
    burst_gain: float = 5.0
    move_period: int = 4
    max_ticks: int = 200
    theta: float = 0.05
    fence_y: float = 15.0
    prey_y: float = 30.0
    start_jitter: float = 1.0
    heading_jitter: float = 3.0


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def segment_hit(p0, p1, seg: Segment) -> float | None:
    """Parameter s in [0, 1] where p0->p1 first meets ``seg``, or None."""
    rx, ry = p1[0] - p0[0], p1[1] - p0[1]
    sx, sy = seg.x1 - seg.x0, seg.y1 - seg.y0
    den = _cross(rx, ry, sx, sy)
    if abs(den) < 1e-12:
        return None
    qx, qy = seg.x0 - p0[0], seg.y0 - p0[1]
    s = _cross(qx, qy, sx, sy) / den
    u = _cross(qx, qy, rx, ry) / den
    if 0.0 <= s <= 1.0 and 0.0 <= u <= 1.0:
        return s
    return None


def occluded(w: WorldState) -> bool:
    if w.prey is None:
        return False
    p0 = (w.frog.x, w.frog.y)
    return any(segment_hit(p0, w.prey, b) is not None for b in w.barriers)


def bearing_to(pose: Pose, x: float, y: float) -> float:
    return wrap_deg(math.degrees(math.atan2(y - pose.y, x - pose.x)) - pose.heading)


def prey_distance(w: WorldState) -> float:
    return math.hypot(w.prey[0] - w.frog.x, w.prey[1] - w.frog.y)


# -- perception ------------------------------------------------------------

def attractant(w: WorldState, dp: DetourParams) -> np.ndarray:
    """Truncated Gaussian bump at the prey bearing, averaged over each bin.

    Amplitude falls with distance as ``1 / (1 + d / distance_scale)``.
    """
    if w.prey is None:
        return zeros(BINS)
    b = bearing_to(w.frog, *w.prey)
    amp = 1.0 / (1.0 + prey_distance(w) / dp.distance_scale)
    sig = dp.sigma_bins * BIN_DEG
    off = (CENTERS[:, None] + _SUB[None, :] - b + 180.0) % 360.0 - 180.0
    g = np.exp(-0.5 * (off / sig) ** 2)
    g[np.abs(off) > dp.support_sigmas * sig] = 0.0
    return amp * g.mean(axis=1)


_SUB = (np.arange(8) + 0.5) / 8 * BIN_DEG - BIN_DEG / 2


def shadow_cover(pose: Pose, seg: Segment, margin: float = 0.0) -> np.ndarray:
    """Fraction of each bin covered by the segment's subtended angle widened by ``margin`` degrees."""
    b0 = bearing_to(pose, seg.x0, seg.y0)
    span = wrap_deg(bearing_to(pose, seg.x1, seg.y1) - b0)
    lo, hi = min(0.0, span) - margin, max(0.0, span) + margin
    rel = (CENTERS - b0 + 180.0) % 360.0 - 180.0
    half = BIN_DEG / 2
    overlap = np.minimum(rel + half, hi) - np.maximum(rel - half, lo)
    return np.clip(overlap / BIN_DEG, 0.0, 1.0)


def repellent(w: WorldState, dp: DetourParams, prey_field: np.ndarray | None = None) -> np.ndarray:
    """Box of depth ``repel_depth`` over every barrier's subtended angle.

    The subtended angle is widened by ``repel_margin`` degrees per side and
    edge bins are covered in proportion to their overlap.

    Where the prey is seen through a fence gap the box is notched so that a
    fraction ``gap_leak`` of the attractant survives on the prey bearing.
    """
    out = zeros(BINS)
    for seg in w.barriers:
        out = np.maximum(out, dp.repel_depth * shadow_cover(w.frog, seg, dp.repel_margin))
    if w.prey is not None and occluded(w):
        pf = attractant(w, dp) if prey_field is None else prey_field
        k = bin_of(bearing_to(w.frog, *w.prey))
        out[k] = min(out[k], (1.0 - dp.gap_leak) * pf[k])
    return out


def can_snap(w: WorldState, dp: DetourParams) -> bool:
    """Prey within the snap radius, in the frontal field and not behind a barrier."""
    if w.prey is None or occluded(w):
        return False
    return prey_distance(w) <= dp.snap_radius and abs(bearing_to(w.frog, *w.prey)) <= dp.snap_field


def perceive(w: WorldState, dp: DetourParams | None = None) -> dict[str, np.ndarray]:
    dp = dp or DetourParams()
    prey = attractant(w, dp)
    near = 0.0
    if can_snap(w, dp):
        near = 1.0
    return {"prey": prey, "sor": repellent(w, dp, prey), "tactile": np.array([1.0 if w.contact else 0.0]),
            "near": np.array([near])}


def integrate_mhm(prey, sor, modulatory=None) -> np.ndarray:
    """Rectified sum of attractant, repellent and any modulatory field."""
    prey, sor = np.asarray(prey, float), np.asarray(sor, float)
    mod = zeros(prey.size) if modulatory is None else np.asarray(modulatory, float)
    if not (prey.shape == sor.shape == mod.shape):
        raise DimensionMismatch(f"heading maps differ in size: {prey.shape}, {sor.shape}, {mod.shape}")
    return np.maximum(prey - sor + mod, 0.0)


# smaller turns first, left before right on equal size
_TURN_COST = 2.0 * np.abs(CENTERS) / BIN_DEG + (CENTERS < 0)


def winner(mhm: np.ndarray, tie_tol: float = 0.15) -> int | None:
    """Arg-max bin; None for an all-zero map.

    Bins within ``tie_tol`` of the maximum count as tied and the smaller turn
    wins, so near-symmetric lobes do not flip the choice after every turn.
    """
    if not np.any(mhm > 0):
        return None
    top = np.flatnonzero(mhm >= (1.0 - tie_tol) * mhm.max())
    return int(top[np.argmin(_TURN_COST[top])])


# -- action ------------------------------------------------------------------

@dataclass(frozen=True)
class MotorCommand:
    kind: str  # Forward | Sidestep | Orient | Snap | Backup | Idle
    magnitude: float = 0.0


def _move(w: WorldState, dx: float, dy: float) -> WorldState:
    p0 = (w.frog.x, w.frog.y)
    p1 = (w.frog.x + dx, w.frog.y + dy)
    best = None
    for seg in w.barriers:
        s = segment_hit(p0, p1, seg)
        if s is not None and (best is None or s < best):
            best = s
    if best is None:
        return replace(w, frog=replace(w.frog, x=p1[0], y=p1[1]), contact=False)
    dist = math.hypot(dx, dy)
    back = min(best, max(0.0, best - 0.5 / dist)) if dist > 0 else 0.0
    return replace(w, frog=replace(w.frog, x=p0[0] + back * dx, y=p0[1] + back * dy), contact=True)


def act(w: WorldState, cmd: MotorCommand, dp: DetourParams | None = None) -> WorldState:
    dp = dp or DetourParams()
    h = math.radians(w.frog.heading)
    if cmd.kind == "Forward":
        return _move(w, cmd.magnitude * math.cos(h), cmd.magnitude * math.sin(h))
    if cmd.kind == "Backup":
        return _move(w, -cmd.magnitude * math.cos(h), -cmd.magnitude * math.sin(h))
    if cmd.kind == "Sidestep":
        # positive magnitude steps to the right of the heading
        return _move(w, cmd.magnitude * math.sin(h), -cmd.magnitude * math.cos(h))
    if cmd.kind == "Orient":
        return replace(w, frog=replace(w.frog, heading=wrap_deg(w.frog.heading + cmd.magnitude)), contact=False)
    if cmd.kind == "Snap":
        return replace(w, captured=can_snap(w, dp) or w.captured, contact=False)
    return replace(w, contact=False)


def arbitrate(outs: dict[str, np.ndarray], dp: DetourParams) -> MotorCommand:
    """Snap > Backup > Side > Orient/Forward toward the mhm winner."""
    th = dp.theta
    if activity_of(outs["SNAP"]) > th:
        return MotorCommand("Snap", 1.0)
    if activity_of(outs["BACKUP"]) > th:
        return MotorCommand("Backup", dp.forward_step / 2)
    side = float(outs["SIDE"][0])
    if abs(side) > th:
        return MotorCommand("Sidestep", math.copysign(dp.side_step, side))
    turn = float(outs["ORIENT"][0])
    if abs(turn) > th:
        return MotorCommand("Orient", turn * dp.orient_step)
    if activity_of(outs["FORWARD"]) > th:
        return MotorCommand("Forward", dp.forward_step)
    return MotorCommand("Idle")


# -- schemas -----------------------------------------------------------------

class WorldBox:
    """Mutable holder the harness swaps between ticks; schemas only read it."""

    def __init__(self, world: WorldState, dp: DetourParams):
        self.world, self.dp = world, dp
        self._cache_tick, self._cache = None, None

    def percepts(self) -> dict[str, np.ndarray]:
        key = (self.world.frog, self.world.prey, self.world.contact, self.world.barriers)
        if self._cache_tick != key:
            self._cache_tick, self._cache = key, perceive(self.world, self.dp)
        return self._cache


def _sensor(name: str, key: str, dim: int, box: WorldBox, tag: str = "perceptual") -> SchemaNode:
    def behavior(inp, params, tick, rng):
        return {"out": params["box"].percepts()[key].copy()}

    return SchemaNode(name, [], [outport("out", dim, tag)], behavior, {"box": box}, kind="perceptual")


def _mhm_node() -> SchemaNode:
    def behavior(inp, params, tick, rng):
        return {"out": integrate_mhm(inp["prey"], inp["sor"], inp["mod"])}

    ins = [inport("prey", BINS), inport("sor", BINS), inport("mod", BINS, "modulatory", modulatory=True)]
    return SchemaNode("MHM", ins, [outport("out", BINS, "sensorimotor")], behavior, kind="sensorimotor")


def _bump_avoid_node(dp: DetourParams, handed: int) -> SchemaNode:
    """On a fresh contact, request a burst of sidesteps, alternating side per bump.

    Burst length grows with the hunger drive: a sated frog wiggles in place, a
    hungry one searches further along the fence.  One step of the burst is
    spent per body movement.
    """

    def behavior(inp, params, tick, rng):
        left, sign, ready = params["left"], params["sign"], params["ready"]
        now = tick + 1
        if inp["tactile"][0] > 0.5 and left == 0 and now >= ready:
            left = max(1, int(dp.burst_gain * params["drive"] + 1e-9))
            sign = -sign
        out = np.array([sign * dp.side_amp]) if left > 0 else zeros(1)
        if left > 0 and now % dp.move_period == dp.move_period - 1:
            left -= 1
            if left == 0:
                # contact is only re-read once the last step has been taken
                ready = now + 2
        return BehaviorResult({"out": out}, {"left": left, "sign": sign, "ready": ready})

    return SchemaNode("BUMP-AVOID", [inport("tactile", 1)], [outport("out", 1, "sensorimotor")], behavior,
                      {"left": 0, "sign": -handed, "ready": 0, "drive": 0.5}, kind="sensorimotor")


def _side_node(dp: DetourParams) -> SchemaNode:
    def behavior(inp, params, tick, rng):
        return {"out": inp["bump"].copy()}

    ins = [inport("bump", 1), inport("mod", 1, "modulatory", modulatory=True)]
    return SchemaNode("SIDE", ins, [outport("out", 1, "motor")], behavior, kind="motor")


def _orient_node(dp: DetourParams) -> SchemaNode:
    def behavior(inp, params, tick, rng):
        k = winner(inp["mhm"])
        if k is None:
            return {"out": zeros(1)}
        b = CENTERS[k]
        if abs(b) <= dp.orient_deadband:
            return {"out": zeros(1)}
        return {"out": np.array([max(-1.0, min(1.0, b / dp.orient_step))])}

    return SchemaNode("ORIENT", [inport("mhm", BINS)], [outport("out", 1, "motor")], behavior, kind="motor")


def _forward_node(dp: DetourParams) -> SchemaNode:
    def behavior(inp, params, tick, rng):
        k = winner(inp["mhm"])
        go = k is not None and abs(CENTERS[k]) <= dp.orient_deadband
        return {"out": np.array([1.0 if go else 0.0])}

    return SchemaNode("FORWARD", [inport("mhm", BINS)], [outport("out", 1, "motor")], behavior, kind="motor")


def _snap_node() -> SchemaNode:
    def behavior(inp, params, tick, rng):
        return {"out": inp["near"].copy()}

    return SchemaNode("SNAP", [inport("near", 1)], [outport("out", 1, "motor")], behavior, kind="motor")


def _backup_node() -> SchemaNode:
    # Innately silent in these layouts; present so arbitration and
    # cause-effect candidate sets match the full repertoire.
    def behavior(inp, params, tick, rng):
        return {"out": zeros(1)}

    return SchemaNode("BACKUP", [inport("tactile", 1)], [outport("out", 1, "motor")], behavior, kind="motor")


MOTOR = ["FORWARD", "SIDE", "ORIENT", "SNAP", "BACKUP"]


def build_network(box: WorldBox, handed: int = 1, seed: int = 0, trace=None) -> Network:
    dp = box.dp
    net = Network(seed=seed, trace=trace)
    net.add_schema(_sensor("PREY", "prey", BINS, box))
    net.add_schema(_sensor("SOR", "sor", BINS, box))
    net.add_schema(_sensor("TACTILE", "tactile", 1, box))
    net.add_schema(_sensor("NEAR", "near", 1, box))
    net.add_schema(_mhm_node())
    net.connect("PREY.out", "MHM.prey")
    net.connect("SOR.out", "MHM.sor")
    net.add_schema(_bump_avoid_node(dp, handed))
    net.connect("TACTILE.out", "BUMP-AVOID.tactile")
    net.add_schema(_side_node(dp))
    net.connect("BUMP-AVOID.out", "SIDE.bump")
    for node in (_orient_node(dp), _forward_node(dp)):
        net.add_schema(node)
        net.connect("MHM.out", f"{node.name}.mhm")
    net.add_schema(_snap_node())
    net.connect("NEAR.out", "SNAP.near")
    net.add_schema(_backup_node())
    net.connect("TACTILE.out", "BACKUP.tactile")
    return net


# -- trials ------------------------------------------------------------------

class Timeout(Exception):
    """Raised by ``run_trial(..., strict=True)`` when the tick bound is hit."""


@dataclass
class TrialOutcome:
    path: list[tuple[float, float, float]]
    bumps: int
    captured: bool
    ticks: int
    commands: list[MotorCommand] = field(default_factory=list)


def start_world(width: float, seed: int, trial: int, dp: DetourParams) -> WorldState:
    rng = rng_for(seed, f"detour:start:{trial}")
    x = float(rng.uniform(-dp.start_jitter, dp.start_jitter))
    h = 90.0 + float(rng.uniform(-dp.heading_jitter, dp.heading_jitter))
    barriers = (fence(width, dp.fence_y),) if width > 0 else ()
    return WorldState(Pose(x, 0.0, h), (0.0, dp.prey_y), barriers)


def run_trial(net: Network, box: WorldBox, world: WorldState, hooks=(), strict: bool = False) -> TrialOutcome:
    """Tick the network until capture or the tick bound; the body moves every ``move_period`` ticks."""
    dp = box.dp
    box.world = world
    path = [(world.frog.x, world.frog.y, world.frog.heading)]
    bumps, cmds = 0, []
    for t in range(dp.max_ticks):
        net.step()
        if net.tick % dp.move_period == 0:
            cmd = arbitrate({m: net.out(m) for m in MOTOR}, dp)
            new = act(box.world, cmd, dp)
            if new.contact and cmd.kind in ("Forward", "Sidestep", "Backup"):
                bumps += 1
            box.world = replace(new, tick=net.tick)
            cmds.append(cmd)
            path.append((box.world.frog.x, box.world.frog.y, box.world.frog.heading))
        for h in hooks:
            h(net, box, t)
        if box.world.captured:
            return TrialOutcome(path, bumps, True, t + 1, cmds)
    if strict:
        raise Timeout(f"no capture within {dp.max_ticks} ticks")
    return TrialOutcome(path, bumps, False, dp.max_ticks, cmds)


def innate_trial(width: float, seed: int, dp: DetourParams | None = None, trial: int = 0,
                 drive: float = 0.5) -> TrialOutcome:
    dp = dp or DetourParams()
    world = start_world(width, seed, trial, dp)
    box = WorldBox(world, dp)
    handed = 1 if rng_for(seed, "detour:handed").random() < 0.5 else -1
    net = build_network(box, handed, seed)
    net.schemas["BUMP-AVOID"].params["drive"] = drive
    return run_trial(net, box, world)


# -- learning to detour ----------------------------------------------------

GOAL_NODE = "G[PREY,MHM]"
INNATE_CAUSES = ("FORWARD", "ORIENT", "SNAP", "BACKUP")


@dataclass
class DetourLearnParams:
    alpha: float = 0.5
    beta: float = 1.0
    theta_act: float = 0.02
    r_threshold: float = 0.3
    delays: tuple[int, ...] = (1, 2, 3, 4)
    drive0: float = 0.5
    drive_growth: float = 0.6
    drive_reduction: float = 0.9
    goal_theta: float = 0.01
    goal_lr: float = 0.2
    goal_trials: int = 8
    p_lr: float = 0.03
    d_lr: float = 0.01
    hidden: int = 0
    sim_epochs: int = 20
    effort: float = 0.5
    gate_error: float = 2.0
    replay: int = 4  # capture trials retained for imprinting


def goal_distance(goal: np.ndarray, mhm: np.ndarray) -> float:
    return float(np.sum((np.asarray(goal) - np.asarray(mhm)) ** 2))


def orient_shift(mhm: np.ndarray) -> int:
    """Bins the orienting reflex would rotate the map by to centre its winner."""
    k = winner(mhm)
    return 0 if k is None else BINS // 2 - k


def aligned_residual(goal: np.ndarray, mhm: np.ndarray) -> np.ndarray:
    """Peak-normalised goal minus the peak-normalised, winner-centred map.

    Comparing shapes after the simulated orient makes a lobe anywhere on the
    map count as reaching the goal, regardless of prey distance.
    """
    goal, mhm = np.asarray(goal, float), np.asarray(mhm, float)
    gk, mk = max(float(goal.max()), 1e-3), max(float(mhm.max()), 1e-3)
    return goal / gk - np.roll(mhm, orient_shift(mhm)) / mk


def aligned_error(goal: np.ndarray, mhm: np.ndarray) -> float:
    r = aligned_residual(goal, mhm)
    return float(r @ r)


@dataclass
class DetourTrial:
    outcome: TrialOutcome
    drive: float
    events: list = field(default_factory=list)
    mhm: list = field(default_factory=list)
    predicted: list = field(default_factory=list)
    goal: np.ndarray | None = None  # first goal pattern posted in the trial


def anticipation_lead(mhm, predicted, goal, gate_error: float = 2.0) -> int | None:
    """Ticks by which the prediction showed the open-field lobe before mhm did.

    The lobe's onset is the first tick whose map matches the goal shape
    (aligned error below ``gate_error``); its bearing ``b`` is that tick's
    winner and ``thr`` half the onset amplitude there.  The onset is walked
    back while ``mhm[b]`` already reaches ``thr``.  The lead counts the
    consecutive ticks just before it where ``predicted[b] >= thr`` while
    ``mhm[b] < thr``.  None when no lobe ever forms.
    """
    if goal is None:
        return None
    onset = next((t for t, m in enumerate(mhm) if aligned_error(goal, m) < gate_error), None)
    if onset is None:
        return None
    b = winner(mhm[onset])
    if b is None:
        return None
    thr = 0.5 * float(mhm[onset][b])
    while onset > 0 and mhm[onset - 1][b] >= thr:
        onset -= 1
    t = onset
    while t > 0 and predicted[t - 1][b] >= thr and mhm[t - 1][b] < thr:
        t -= 1
    return onset - t


class DetourLearner:
    """A naive frog that meets a barrier trial after trial and builds P/D when it pays off."""

    def __init__(self, seed: int = 0, width: float = 20.0, dp: DetourParams | None = None,
                 lp: DetourLearnParams | None = None, trace=None):
        from .causal import ReliabilityMatrix
        from .constructor import Constructor, GoalBinding
        from .drives import DriveState, GoalSchema, goal_node
        from .maps import DifferentiableMap

        self.seed, self.width = seed, width
        self.dp, self.lp = dp or DetourParams(), lp or DetourLearnParams()
        self.box = WorldBox(start_world(width, seed, 0, self.dp), self.dp)
        self.handed = 1 if rng_for(seed, "detour:handed").random() < 0.5 else -1
        self.net = build_network(self.box, self.handed, seed, trace)
        self.goal = GoalSchema("PREY", "MHM", DifferentiableMap([BINS], BINS, rng_for(seed, "detour:goal")),
                               theta_act=self.lp.goal_theta, lr=self.lp.goal_lr)
        self.net.add_schema(goal_node(self.goal, GOAL_NODE, BINS))
        self.net.connect("PREY.out", f"{GOAL_NODE}.source")
        lp = self.lp
        self.matrix = ReliabilityMatrix(["MHM"], MOTOR, lp.delays, lp.alpha, lp.beta, lp.theta_act, lp.r_threshold)
        self.cons = Constructor(self.net, {"MHM": GoalBinding(GOAL_NODE, self.goal)}, context="SOR", seed=seed,
                                hidden=lp.hidden, p_lr=lp.p_lr, d_lr=lp.d_lr, theta=self.dp.theta,
                                cause_scale=1.0 / self.dp.side_amp)
        self.drive = DriveState(lp.drive0, alpha_d=lp.drive_growth)
        self.expected = {(c, "MHM") for c in INNATE_CAUSES}
        self.dismissed: set[tuple[str, str]] = set()
        self.trials: list[DetourTrial] = []
        self.learning = True
        self._hist: dict[str, list] = {}
        self._replay: list[dict] = []
        self._d0 = self._d_last = None

    # goal pre-training on open-field captures
    def pretrain_goal(self, n: int | None = None):
        rng = rng_for(self.seed, "detour:goal-trials")
        for i in range(self.lp.goal_trials if n is None else n):
            prey = (float(rng.uniform(-15, 15)), float(rng.uniform(15, 35)))
            world = WorldState(Pose(0.0, 0.0, 90.0), prey, ())
            views = []
            out = run_trial(self.net, self.box, world,
                            hooks=[lambda net, box, t: views.append(net.out("PREY"))])
            if out.captured:
                target = self.net.out("MHM")
                for v in views:
                    if activity_of(v) > self.goal.theta_act:
                        self.goal.tune([v], target)

    def _after_tick(self, net, box, t):
        if self.learning:
            self.matrix.accumulate_network(net)
        h = self._hist
        mhm, goal = net.out("MHM"), net.out(GOAL_NODE)
        for k, v in (("mhm", mhm), ("side", net.out("SIDE")), ("sor", net.out("SOR")), ("goal", goal)):
            h.setdefault(k, []).append(v)
        pair = self.cons.pair_for_effect("MHM")
        h.setdefault("pred", []).append(net.out(pair.predictive.name) if pair else zeros(BINS))
        if np.any(goal):
            self._d_last = goal_distance(goal, mhm)
            if self._d0 is None:
                self._d0 = self._d_last

    def _classify(self):
        """Label relations found during the trial against the trial's goal trend."""
        from .constructor import classify, goal_trend
        known = self.expected | set(self.cons.pairs) | self.dismissed
        fresh = [r for r in self.matrix.extract() if (r.cause, r.effect) not in known]
        if not fresh or self._d0 is None:
            return []
        events = classify(fresh, [], {"MHM": goal_trend(self._d0, self._d_last)}, self.net.tick)
        for rec in self.cons.handle(events):
            if rec.action == "construct":
                p = self.cons.pairs[(rec.trigger.cause, rec.trigger.effect)]
                p.dual.engaged, p.tuning = True, True
                gate = self.lp.gate_error
                p.dual.gate = lambda m, g: aligned_error(g, m) > gate
        for ev in events:
            if ev.label != "U1.A":
                self.dismissed.add((ev.cause, ev.effect))
        return events

    def _imprint(self):
        """Replay the trial through P, then shape D by simulating its commands through P.

        The simulated outcome is compared with the goal after the orienting
        reflex would centre it; only states the gate leaves open train D.
        """
        pair = self.cons.pair_for_effect("MHM")
        if pair is None:
            return
        p, d, tau = pair.predictive, pair.dual, pair.tau
        self._replay.append({k: self._hist[k] for k in ("mhm", "side", "sor", "goal")})
        del self._replay[:-self.lp.replay]
        steps, sims = [], []
        for h in self._replay:
            mhm, side, sor, goal = h["mhm"], h["side"], h["sor"], h["goal"]
            n = len(mhm)
            steps += [([mhm[k], side[k - tau + 1], sor[k]], mhm[k + 1]) for k in range(tau, n - 1)]
            sims += [([mhm[k], goal[k], sor[k]], goal[k], mhm[k + tau - 1], sor[k + tau - 1])
                     for k in range(n - tau) if np.any(goal[k]) and d.gate(mhm[k], goal[k])]
        if steps:
            p.map.fit_sgd([xs for xs, _ in steps], [y for _, y in steps], p.lr, self.lp.sim_epochs)
        for _ in range(self.lp.sim_epochs):
            for xs, g, m_next, c_next in sims:
                u = d.map.evaluate(xs)
                pin = [m_next, u, c_next]
                pred = p.map.evaluate(pin)
                pk = max(float(pred.max()), 1e-3)
                err = np.maximum(aligned_residual(g, pred), 0.0) / pk
                prox = p.map.vjp_input(pin, np.roll(err, -orient_shift(pred)), 1) - self.lp.effort * u
                d.map.step(xs, prox, d.lr)
        pair.tuning = False

    def _settle(self):
        """Let stale commits drain out of the network before a new trial."""
        for _ in range(max(self.lp.delays) + self.dp.move_period):
            self.net.step()

    def trial(self) -> DetourTrial:
        from .drives import update_drive
        idx = len(self.trials)
        world = start_world(self.width, self.seed, idx, self.dp)
        self.box.world = world
        self._settle()
        self.net.schemas["BUMP-AVOID"].params.update(drive=self.drive.value, left=0, ready=0)
        self._hist, self._d0, self._d_last = {}, None, None
        out = run_trial(self.net, self.box, world, hooks=[self._after_tick])
        posted = [g for g in self._hist["goal"] if np.any(g)]
        rec = DetourTrial(out, self.drive.value, [], self._hist["mhm"], self._hist["pred"],
                          posted[0] if posted else None)
        if self.learning:
            rec.events = self._classify()
            if out.captured:  # only drive-reducing trials shape the pair
                self._imprint()
        self.drive = update_drive(self.drive, reduction=self.lp.drive_reduction if out.captured else 0.0)
        self.trials.append(rec)
        return rec

    def lead(self, rec: DetourTrial) -> int | None:
        return anticipation_lead(rec.mhm, rec.predicted, rec.goal, self.lp.gate_error)

    def run(self, n: int = 5) -> list[DetourTrial]:
        if self.goal.tune_count == 0:
            self.pretrain_goal()
        return [self.trial() for _ in range(n)]

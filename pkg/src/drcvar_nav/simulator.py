"""Round-based closed-loop simulation of several agents.

Every round each agent reads the plans published in the previous round (or
predicts its neighbours at constant velocity), records prediction errors,
builds one collision block per (neighbour, horizon step), solves its MPC
problem and applies the first input through the double integrator.  Agents
only see a snapshot of the world taken at the round barrier, and every agent
draws its noise from its own random stream, so a run is fully determined by
the configuration, the seed and the repetition index.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .dynamics import LinearAgentModel, double_integrator_step
from .geometry import PolyhedralSet, make_box, signed_distance, translate
from .mpc_solver import (
    CollisionTerm,
    MPCProblem,
    NUMERICAL,
    alternating_solve,
    warm_start_shift,
)
from .prediction import (
    SHARED_PLAN,
    ErrorSampleBuffer,
    PredictionHistory,
    TrajectoryPrediction,
    constant_velocity_predict,
    record_errors,
    shared_plan_predict,
)
from .risk import AmbiguityParams, DeterministicBlock, DRCVaRBlock, ErrorSampleSet, SupportPolytope

logger = logging.getLogger(__name__)

DISTRIBUTED = "distributed"
DECENTRALIZED = "decentralized"
DRCVAR = "drcvar"
DETERMINISTIC = "deterministic"


class ConfigError(ValueError):
    """Scenario description that cannot be simulated."""


@dataclass(frozen=True, eq=False)
class AgentSpec:
    """Agent with a box body (centred on its position) and a fixed goal."""

    name: str
    position: np.ndarray
    goal: np.ndarray
    half_extents: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 100.0]))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for key in ("position", "goal", "half_extents", "velocity"):
            v = np.array(getattr(self, key), dtype=float).reshape(-1)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ConfigError(f"agent {self.name!r}: {key} must be 3 finite numbers")
            v.flags.writeable = False
            object.__setattr__(self, key, v)
        if np.any(self.half_extents <= 0):
            raise ConfigError(f"agent {self.name!r}: half extents must be positive")

    @cached_property
    def shape(self) -> PolyhedralSet:
        return make_box(np.zeros(3), self.half_extents)


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    agents: tuple
    regime: str = DISTRIBUTED
    controller: str = DRCVAR
    ambiguity: AmbiguityParams = field(default_factory=lambda: AmbiguityParams(0.001, 0.1, 0.1, 10))
    support: SupportPolytope = field(default_factory=SupportPolytope.unbounded)
    horizon: int = 20
    dt: float = 0.1
    a_max: float = 2.0
    v_max: float = 2.0
    q_position: float = 1.0
    q_velocity: float = 0.1
    r_input: float = 0.1
    consistency: float = 1.0
    noise_std: float = 0.0
    steps: int = 50
    seed: int = 0
    repetitions: int = 1
    zero_samples: bool = False
    pooled_samples: bool = False
    outer_tol: float = 1e-5
    outer_max: int = 30
    inner_tol: float = 1e-8
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        self.validate()

    def validate(self):
        if len(self.agents) < 1:
            raise ConfigError("a scenario needs at least one agent")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            raise ConfigError(f"agent names must be unique, got {names}")
        if self.regime not in (DISTRIBUTED, DECENTRALIZED):
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.controller not in (DRCVAR, DETERMINISTIC):
            raise ConfigError(f"unknown controller {self.controller!r}")
        for key in ("horizon", "steps", "repetitions", "outer_max"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be a positive integer")
        for key in ("dt", "a_max", "v_max", "q_position", "q_velocity", "r_input", "outer_tol", "inner_tol"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if not (self.noise_std >= 0 and self.consistency >= 0):
            raise ConfigError("noise_std and consistency must be non-negative")
        for a in self.agents:
            for b in self.agents:
                if a is not b and signed_distance(a.position, translate(b.shape, b.position)) <= 0:
                    raise ConfigError(f"agent {a.name!r} starts inside the body of {b.name!r}")

    @property
    def model(self) -> LinearAgentModel:
        return LinearAgentModel(self.dt, self.a_max, self.v_max)

    @property
    def Q(self) -> np.ndarray:
        return np.diag([self.q_position] * 3 + [self.q_velocity] * 3)

    @property
    def R(self) -> np.ndarray:
        return self.r_input * np.eye(3)


class MessageBus:
    """Plans posted in round ``k`` become readable in round ``k + delay``."""

    def __init__(self, delay: int = 1):
        if delay < 1:
            raise ValueError("messages cannot be read in the round they are sent")
        self.delay = delay
        self._posted: dict = {}

    def post(self, k: int, sender: str, plan: TrajectoryPrediction):
        self._posted.setdefault(k, {})[sender] = plan

    def read(self, k: int) -> dict:
        """Mailbox of round ``k``: the latest plan per sender posted no later than ``k - delay``."""
        box = {}
        for rnd in sorted(r for r in self._posted if r <= k - self.delay):
            box.update(self._posted[rnd])
        return box

    def prune(self, k: int):
        """Forget rounds no longer needed for reads at ``k`` or later."""
        keep = k - self.delay
        for rnd in [r for r in self._posted if r < keep]:
            del self._posted[rnd]


def inject_noise(value, std: float, rng: np.random.Generator) -> np.ndarray:
    """``value`` plus independent zero-mean Gaussian noise of std ``std`` per entry."""
    value = np.asarray(value, dtype=float)
    if std < 0:
        raise ValueError(f"noise std must be >= 0, got {std}")
    if std == 0:
        return value.copy()
    return value + rng.normal(0.0, std, size=value.shape)


def agent_stream(seed: int, rep: int, name: str) -> np.random.Generator:
    """Per-agent random stream, independent of the agents' order in the scenario."""
    return np.random.default_rng([int(seed), int(rep), zlib.crc32(name.encode())])


def collision_check(positions, shapes):
    """Signed distance of each agent point to every other agent's body.

    Returns ``(distances, collided)`` where ``distances[i, j]`` is the signed
    distance from agent ``i`` to the body of agent ``j`` (``inf`` on the
    diagonal) and ``collided`` flags strict penetration (distance < 0).
    """
    n = len(positions)
    D = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = signed_distance(positions[i], translate(shapes[j], positions[j]))
    return D, bool(np.any(D < 0))


def brake_input(model: LinearAgentModel, velocity) -> np.ndarray:
    """Deceleration toward standstill, saturated at ``a_max`` per axis."""
    return np.clip(-np.asarray(velocity, dtype=float) / model.dt, -model.a_max, model.a_max)


def brake_plan(model: LinearAgentModel, state, T: int) -> np.ndarray:
    x = np.asarray(state, dtype=float).copy()
    out = np.empty((T, 3))
    for l in range(T):
        x = double_integrator_step(model, x, brake_input(model, x[3:]))
        out[l] = x[:3]
    return out


@dataclass(eq=False)
class RoundRecord:
    k: int
    agent: str
    position: np.ndarray
    velocity: np.ndarray
    command: np.ndarray
    status: str
    solve_ms: float
    outer_iterations: int
    inner_iterations: int


@dataclass(eq=False)
class RunMetrics:
    names: list
    distances: np.ndarray  # (rounds + 1, N, N) signed point-to-body distances
    records: list
    events: list
    lead1_errors: list  # (k, agent, neighbour, |error|)
    final_states: np.ndarray

    @property
    def pair_distances(self) -> np.ndarray:
        """Per-round minimum over ordered pairs, shape (rounds + 1,)."""
        D = self.distances.reshape(self.distances.shape[0], -1)
        return D.min(axis=1)

    @property
    def min_distance(self) -> float:
        return float(self.pair_distances.min()) if len(self.names) > 1 else float("inf")

    @property
    def collision(self) -> bool:
        return bool(np.any(self.distances < 0))

    @property
    def solve_ms(self) -> np.ndarray:
        return np.array([r.solve_ms for r in self.records])

    @property
    def statuses(self) -> list:
        return [r.status for r in self.records]

    @property
    def failures(self) -> int:
        return len(self.events)

    @property
    def breakdown(self) -> bool:
        return any(e["status"] == NUMERICAL for e in self.events)


class AgentController:
    """Per-agent memory: prediction histories, error samples and the last plan."""

    def __init__(self, cfg: ScenarioConfig, spec: AgentSpec, rng: np.random.Generator):
        self.cfg = cfg
        self.spec = spec
        self.rng = rng
        T = cfg.horizon
        self.histories = {}
        self.buffer = ErrorSampleBuffer(T, cfg.ambiguity.n_samples, pooled=cfg.pooled_samples)
        self.last_seen = {}
        self.previous = None
        self.model = cfg.model

    def _predict(self, k, nb: AgentSpec, true_pos, mailbox):
        cfg = self.cfg
        seen = inject_noise(true_pos, cfg.noise_std, self.rng)
        if cfg.regime == DISTRIBUTED and nb.name in mailbox:
            plan = mailbox[nb.name]
            noisy = TrajectoryPrediction(plan.origin, inject_noise(plan.positions, cfg.noise_std, self.rng), SHARED_PLAN)
            vel = np.zeros(3)
            pred = shared_plan_predict(noisy, k, seen, vel, cfg.dt, cfg.horizon)
        else:
            prev = self.last_seen.get(nb.name)
            vel = np.zeros(3) if prev is None else (seen - prev) / cfg.dt
            pred = constant_velocity_predict(seen, vel, cfg.horizon, cfg.dt, origin=k)
        self.last_seen[nb.name] = seen
        return seen, pred

    def _block(self, nb: AgentSpec, step: int):
        cfg = self.cfg
        if cfg.controller == DETERMINISTIC:
            return DeterministicBlock(cfg.ambiguity.d_min, nb.shape)
        if cfg.zero_samples:
            samples = ErrorSampleSet.zeros(cfg.ambiguity.n_samples)
        else:
            samples = self.buffer.samples(nb.name, step)
        return DRCVaRBlock(cfg.ambiguity, samples, cfg.support, nb.shape)

    def step(self, k: int, state, world: dict, mailbox: dict, neighbors: list):
        """Compute this round's command and plan from a world snapshot."""
        cfg = self.cfg
        T = cfg.horizon
        terms = []
        lead1 = []
        for nb in neighbors:
            hist = self.histories.setdefault(nb.name, PredictionHistory(T))
            seen, pred = self._predict(k, nb, world[nb.name][:3], mailbox)
            before = hist.get(k - 1)
            record_errors(self.buffer, nb.name, seen, k, hist)
            if before is not None:
                lead1.append((k, self.spec.name, nb.name, float(np.linalg.norm(seen - before.positions[0]))))
            hist.add(pred)
            for l in range(1, T + 1):
                terms.append(CollisionTerm(nb.name, l, self._block(nb, l), pred.positions[l - 1]))
        warm = warm_start_shift(self.previous) if self.previous is not None else None
        ref = np.concatenate([self.spec.goal, np.zeros(3)])
        prob = MPCProblem(self.model, T, cfg.Q, cfg.R, state, ref, terms,
                          plan_ref=None if warm is None else warm.positions, consistency=cfg.consistency)
        res = alternating_solve(prob, warm, outer_tol=cfg.outer_tol, outer_max=cfg.outer_max,
                                inner_tol=cfg.inner_tol)
        event = None
        if res.ok:
            command = res.inputs[0].copy()
            plan = res.positions.copy()
            self.previous = res
        else:
            command = brake_input(self.model, state[3:])
            plan = brake_plan(self.model, state, T)
            self.previous = None
            event = {"k": k, "agent": self.spec.name, "status": res.status, "message": res.message}
            logger.info("round %d agent %s: %s (%s); braking", k, self.spec.name, res.status, res.message)
        rec = RoundRecord(k, self.spec.name, np.asarray(state[:3]).copy(), np.asarray(state[3:]).copy(), command,
                          res.status, 1e3 * res.solve_time, res.outer_iterations, res.inner_iterations)
        return command, TrajectoryPrediction(k, plan, SHARED_PLAN), rec, event, lead1


def step_round(k: int, states: dict, controllers: dict, bus: MessageBus, cfg: ScenarioConfig):
    """Advance every agent by one round; returns the next states and the round's outputs."""
    specs = {a.name: a for a in cfg.agents}
    snapshot = {n: s.copy() for n, s in states.items()}
    mailbox = bus.read(k) if cfg.regime == DISTRIBUTED else {}
    commands, records, events, lead1 = {}, [], [], []
    for name in sorted(controllers):
        others = [specs[n] for n in sorted(specs) if n != name]
        cmd, plan, rec, ev, l1 = controllers[name].step(k, snapshot[name], snapshot, mailbox, others)
        commands[name] = cmd
        records.append(rec)
        lead1.extend(l1)
        if ev is not None:
            events.append(ev)
        if cfg.regime == DISTRIBUTED:
            bus.post(k, name, plan)
    bus.prune(k + 1)
    model = cfg.model
    nxt = {n: double_integrator_step(model, snapshot[n], commands[n]) for n in snapshot}
    return nxt, records, events, lead1


def run_scenario(cfg: ScenarioConfig, rep: int = 0) -> RunMetrics:
    names = [a.name for a in cfg.agents]
    states = {a.name: np.concatenate([a.position, a.velocity]) for a in cfg.agents}
    controllers = {a.name: AgentController(cfg, a, agent_stream(cfg.seed, rep, a.name)) for a in cfg.agents}
    shapes = [a.shape for a in cfg.agents]
    bus = MessageBus()
    dists = np.empty((cfg.steps + 1, len(names), len(names)))
    dists[0] = collision_check([states[n][:3] for n in names], shapes)[0]
    records, events, lead1 = [], [], []
    for k in range(cfg.steps):
        states, rec, ev, l1 = step_round(k, states, controllers, bus, cfg)
        records.extend(rec)
        events.extend(ev)
        lead1.extend(l1)
        dists[k + 1] = collision_check([states[n][:3] for n in names], shapes)[0]
    final = np.array([states[n] for n in names])
    return RunMetrics(names, dists, records, events, lead1, final)


@dataclass(eq=False)
class BatchMetrics:
    config: ScenarioConfig
    runs: list

    @property
    def min_distances(self) -> np.ndarray:
        return np.array([r.min_distance for r in self.runs])

    @property
    def collision_percentage(self) -> float:
        return 100.0 * float(np.mean([r.collision for r in self.runs]))

    @property
    def solve_ms(self) -> np.ndarray:
        return np.concatenate([r.solve_ms for r in self.runs])

    def summary(self) -> dict:
        d = self.min_distances
        t = self.solve_ms
        return {
            "runs": len(self.runs),
            "mean_min_distance": float(d.mean()),
            "std_min_distance": float(d.std()),
            "collision_pct": self.collision_percentage,
            "failures": int(sum(r.failures for r in self.runs)),
            "mean_solve_ms": float(t.mean()) if t.size else float("nan"),
            "std_solve_ms": float(t.std()) if t.size else float("nan"),
            "median_solve_ms": float(np.median(t)) if t.size else float("nan"),
        }


def _run_job(args):
    cfg, rep = args
    return run_scenario(cfg, rep)


def run_batch(cfg: ScenarioConfig, jobs: int = 1, pool=None) -> BatchMetrics:
    """All repetitions of a scenario, in repetition order.

    Without noise the repetitions are identical, so a single run is
    simulated and repeated.
    """
    reps = list(range(cfg.repetitions))
    if cfg.noise_std == 0:
        first = run_scenario(cfg, 0)
        return BatchMetrics(cfg, [first] * len(reps))
    work = [(cfg, r) for r in reps]
    if pool is not None:
        runs = pool.map(_run_job, work)
    elif jobs > 1 and len(work) > 1:
        from multiprocessing import get_context

        with get_context("spawn").Pool(min(jobs, len(work))) as p:
            runs = p.map(_run_job, work)
    else:
        runs = [_run_job(w) for w in work]
    return BatchMetrics(cfg, list(runs))


def two_agent_crossing(**overrides) -> ScenarioConfig:
    """Head-on swap of two agents with 2 m square bodies."""
    agents = (
        AgentSpec("a1", np.array([-5.0, 0.0, 0.0]), np.array([5.0, 0.0, 0.0])),
        AgentSpec("a2", np.array([5.0, 0.0, 0.0]), np.array([-5.0, 0.0, 0.0])),
    )
    base = ScenarioConfig(agents=agents, name="two_agent_crossing")
    return replace(base, **overrides) if overrides else base

"""Closed-loop plan refinement with advantage feedback, plus the open-loop and physical-verification baselines."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .critic import MISSING, CriticStore, score_read_j, score_read_s
from .game import GameError, GameSpec, IllegalActionError, JointAction, State, step
from .planners import HistoryRecord, Planner, PlannerQuery, rejection_message, score_value

METHODS = ("read_s", "read_j", "single_step_s", "single_step_j", "physical_verification")
ALPHA_MIN = 1e-6
ALPHA_MAX = 1e3


@dataclass(frozen=True)
class RefineConfig:
    method: str = "read_j"
    alpha0: float = 0.02
    max_replans: int | None = None  # None: the game's own cap
    reset_alpha_per_agent: bool = False
    eps: float = 0.0  # theory-side filter constant; the runtime threshold is alpha
    history: str = "last"  # "last": keep the previous round; "none": send no history

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.alpha0 > 0.0:
            raise ValueError("alpha0 must be positive")
        if self.max_replans is not None and self.max_replans < 1:
            raise ValueError("max_replans must be at least 1")
        if self.history not in ("last", "none"):
            raise ValueError("history must be 'last' or 'none'")

    def replans(self, spec: GameSpec) -> int:
        return self.max_replans if self.max_replans is not None else spec.max_replans


def _clamp(alpha: float) -> float:
    return min(max(alpha, ALPHA_MIN), ALPHA_MAX)


@dataclass
class Alpha:
    """The running threshold, shared across the steps of an episode."""

    value: float

    def double(self) -> None:
        self.value = _clamp(2.0 * self.value)

    def halve(self) -> None:
        self.value = _clamp(0.5 * self.value)


@dataclass
class ProposalRecord:
    agent: int | None
    proposal: Any
    score: float | None  # None stands for MISSING
    threshold: float | None
    accepted: bool

    def to_json(self) -> dict:
        p = list(self.proposal) if isinstance(self.proposal, tuple) else self.proposal
        return {**asdict(self), "proposal": p}


@dataclass
class RefineTrace:
    step: int
    state: State
    method: str
    records: list[ProposalRecord] = field(default_factory=list)
    action: JointAction | None = None
    alpha_entry: float | None = None
    alpha_exit: float | None = None
    exhausted: list = field(default_factory=list)  # agents (or None for joint) that hit the budget
    attempts: int = 0  # env interactions spent on this step

    @property
    def queries(self) -> int:
        return len(self.records)

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "state": self.state,
            "method": self.method,
            "records": [r.to_json() for r in self.records],
            "action": list(self.action) if self.action is not None else None,
            "alpha_entry": self.alpha_entry,
            "alpha_exit": self.alpha_exit,
            "exhausted": self.exhausted,
            "attempts": self.attempts,
        }


@dataclass
class EpisodeResult:
    success: bool
    env_steps: int
    queries: int
    total_reward: float
    trajectory: list[dict]
    traces: list[RefineTrace]
    seed: int = 0
    method: str = ""

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "method": self.method,
            "success": self.success,
            "env_steps": self.env_steps,
            "queries": self.queries,
            "total_reward": self.total_reward,
            "trajectory": self.trajectory,
            "traces": [t.to_json() for t in self.traces],
        }

    def to_jsonl(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# ---------------------------------------------------------------------------
# Step functions
# ---------------------------------------------------------------------------


@dataclass
class _Context:
    spec: GameSpec
    planner: Planner
    history: tuple[HistoryRecord, ...]
    step: int

    def ask(self, state, agent, prior, evaluated=(), feedback=()):
        spec = self.spec
        if agent is None:
            menu = tuple(tuple(spec.legal_actions(state, i)) for i in range(spec.n_agents))
        else:
            menu = tuple(spec.legal_actions(state, agent))
        query = PlannerQuery(
            task=spec.name,
            state=state,
            state_text=spec.describe(state),
            agent=agent,
            prior=tuple(prior),
            legal_actions=menu,
            history=self.history,
            evaluated=tuple(evaluated),
            feedback=tuple(feedback),
            step=self.step,
        )
        resp = self.planner.propose(query)
        return tuple(resp.action) if agent is None else resp.action


def _best(pairs, fallback):
    scored = [(s, k) for k, (_, s) in enumerate(pairs) if s is not None]
    if not scored:
        return fallback
    _, k = max(scored, key=lambda x: (x[0], -x[1]))
    return pairs[k][0]


def _refine_loop(ctx, state, agent, prior, scorer, alpha: Alpha, budget: int, trace: RefineTrace, fallback):
    pairs: list[tuple[Any, float | None]] = []
    while True:
        proposal = ctx.ask(state, agent, prior, evaluated=pairs)
        score = score_value(scorer(proposal))
        pairs.append((proposal, score))
        alpha.halve()
        ok = score is not None and score > alpha.value
        trace.records.append(ProposalRecord(agent, proposal, score, alpha.value, ok))
        if ok:
            return proposal
        if len(pairs) >= budget:
            trace.exhausted.append(agent)
            return _best(pairs, fallback)


def read_s_step(spec, state, planner, critic: CriticStore, cfg: RefineConfig, alpha: Alpha, history=(), t=0):
    """Sequential refinement: each agent in canonical order proposes until its local advantage clears alpha."""
    trace = RefineTrace(t, state, "read_s", alpha_entry=alpha.value)
    ctx = _Context(spec, planner, tuple(history), t)
    alpha.double()
    entry = alpha.value
    prior: list[str] = []
    for i in range(spec.n_agents):
        if cfg.reset_alpha_per_agent:
            alpha.value = entry
        a_i = _refine_loop(
            ctx,
            state,
            i,
            tuple(prior),
            lambda a, p=tuple(prior): score_read_s(critic, state, p, a),
            alpha,
            cfg.replans(spec),
            trace,
            spec.wait[i],
        )
        prior.append(a_i)
    trace.action = tuple(prior)
    trace.alpha_exit = alpha.value
    return trace.action, trace


def read_j_step(spec, state, planner, critic: CriticStore, cfg: RefineConfig, alpha: Alpha, history=(), t=0):
    """Joint refinement: the planner proposes joint actions until the joint advantage clears alpha."""
    trace = RefineTrace(t, state, "read_j", alpha_entry=alpha.value)
    ctx = _Context(spec, planner, tuple(history), t)
    alpha.double()
    action = _refine_loop(
        ctx,
        state,
        None,
        (),
        lambda a: score_read_j(critic, state, a, spec.gamma) if len(a) == spec.n_agents else MISSING,
        alpha,
        cfg.replans(spec),
        trace,
        spec.joint_wait,
    )
    trace.action = tuple(action)
    trace.alpha_exit = alpha.value
    return trace.action, trace


def single_step(spec, state, planner, critic: CriticStore | None, cfg: RefineConfig, history=(), t=0):
    """Open loop: one proposal per agent (or one joint proposal), executed without a threshold test."""
    joint = cfg.method == "single_step_j"
    trace = RefineTrace(t, state, cfg.method)
    ctx = _Context(spec, planner, tuple(history), t)
    if joint:
        action = tuple(ctx.ask(state, None, ()))
        score = None
        if critic is not None and len(action) == spec.n_agents:
            score = score_value(score_read_j(critic, state, action, spec.gamma))
        trace.records.append(ProposalRecord(None, action, score, None, True))
    else:
        prior: list[str] = []
        for i in range(spec.n_agents):
            a_i = ctx.ask(state, i, tuple(prior))
            score = score_value(score_read_s(critic, state, tuple(prior), a_i)) if critic is not None else None
            trace.records.append(ProposalRecord(i, a_i, score, None, True))
            prior.append(a_i)
        action = tuple(prior)
    trace.action = sanitize(spec, state, action)
    return trace.action, trace


def sanitize(spec: GameSpec, state: State, action) -> JointAction:
    """Replace components the environment would refuse (or a malformed joint action) by WAIT."""
    action = tuple(action)
    if len(action) != spec.n_agents:
        return spec.joint_wait
    return tuple(a if a in spec.legal_actions(state, i) else spec.wait[i] for i, a in enumerate(action))


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


def run_episode(
    spec: GameSpec,
    planner: Planner,
    critic: CriticStore | None,
    cfg: RefineConfig,
    seed: int = 0,
    disturb_at: int = 0,
) -> EpisodeResult:
    """Roll out one episode until success or the step limit.

    ``disturb_at = n > 0`` silently resets the environment to its initial state
    right after the n-th executed step; the planner is not told.
    """
    if cfg.method in ("read_s", "read_j") and critic is None:
        raise ValueError(f"method {cfg.method} needs a critic")
    rng = np.random.default_rng(seed)
    state = spec.initial_state
    alpha = Alpha(cfg.alpha0)
    history: tuple[HistoryRecord, ...] = ()
    traces: list[RefineTrace] = []
    trajectory: list[dict] = []
    es = 0
    total = 0.0
    done = spec.is_terminal(state)
    disturbed = False
    t = 0
    while not done and es < spec.horizon:
        sent_history = history if cfg.history == "last" else ()
        if cfg.method == "physical_verification":
            action, trace, refused = _physical_step(spec, state, planner, cfg, sent_history, t, spec.horizon - es)
            es += refused
            if action is None:
                traces.append(trace)
                break
        elif cfg.method == "read_s":
            action, trace = read_s_step(spec, state, planner, critic, cfg, alpha, sent_history, t)
        elif cfg.method == "read_j":
            action, trace = read_j_step(spec, state, planner, critic, cfg, alpha, sent_history, t)
        else:
            action, trace = single_step(spec, state, planner, critic, cfg, sent_history, t)
        try:
            nxt, reward, done = step(spec, state, action, rng)
        except IllegalActionError:
            action = sanitize(spec, state, action)
            nxt, reward, done = step(spec, state, action, rng)
        trace.action = action
        if cfg.method != "physical_verification":
            trace.attempts = 1
        traces.append(trace)
        es += 1
        total += reward
        score = None
        if cfg.method in ("read_s", "read_j") and trace.records:
            accepted = [r.score for r in trace.records if r.accepted]
            score = accepted[-1] if accepted else None
        trajectory.append({"t": t, "state": state, "action": list(action), "reward": reward, "next_state": nxt})
        history = (HistoryRecord(state, action, score),)
        state = nxt
        t += 1
        if disturb_at and not disturbed and es >= disturb_at and not done:
            state = spec.initial_state
            disturbed = True
    queries = sum(tr.queries for tr in traces)
    return EpisodeResult(
        success=bool(spec.is_terminal(state)),
        env_steps=es,
        queries=queries,
        total_reward=total,
        trajectory=trajectory,
        traces=traces,
        seed=seed,
        method=cfg.method,
    )


def _physical_step(spec, state, planner, cfg, history, t, remaining):
    """Execute-and-see: every attempt, refused or not, costs an environment interaction.

    Returns ``(action, trace, refused)`` where ``refused`` counts the attempts
    the environment rejected.  ``action`` is ``None`` when those rejections used
    up the remaining step budget.
    """
    trace = RefineTrace(t, state, "physical_verification")
    ctx = _Context(spec, planner, tuple(history), t)
    feedback: list[str] = []
    refused = 0
    budget = cfg.replans(spec)
    while True:
        proposal = tuple(ctx.ask(state, None, (), feedback=feedback))
        try:
            spec.check_action(state, proposal)
            ok = True
        except GameError as exc:
            ok = False
            feedback.append(rejection_message(proposal, str(exc)))
        trace.records.append(ProposalRecord(None, proposal, None, None, ok))
        if ok:
            trace.attempts = refused + 1
            return proposal, trace, refused
        refused += 1
        trace.attempts = refused
        if refused >= remaining:
            return None, trace, refused
        if refused >= budget:
            trace.exhausted.append(None)
            trace.attempts = refused + 1
            return spec.joint_wait, trace, refused

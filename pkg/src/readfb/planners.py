"""The planner contract and its stand-ins: a noisy scripted planner, a stub, and a remote HTTP adapter."""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

from .critic import MISSING
from .envs.search import DistanceScript
from .game import GameError, GameSpec, JointAction, State

Proposal = Any  # one agent's action (str) or a joint action (tuple of str)


@dataclass(frozen=True)
class HistoryRecord:
    """One previous round: the state, the executed joint action and its advantage score."""

    state: State
    action: JointAction
    score: float | None = None

    def to_json(self) -> dict:
        return {"state": self.state, "action": list(self.action), "score": self.score}


@dataclass(frozen=True)
class PlannerQuery:
    task: str
    state: State
    state_text: str
    agent: int | None  # None asks for a joint action
    prior: tuple[str, ...]
    legal_actions: tuple
    history: tuple[HistoryRecord, ...] = ()
    evaluated: tuple[tuple[Proposal, float | None], ...] = ()
    feedback: tuple[str, ...] = ()
    step: int = 0

    @property
    def joint(self) -> bool:
        return self.agent is None


@dataclass(frozen=True)
class PlannerResponse:
    action: Proposal
    rationale: str = ""


class Planner(Protocol):
    def propose(self, query: PlannerQuery) -> PlannerResponse: ...


class PlannerTimeout(RuntimeError):
    pass


class PlannerProtocolError(RuntimeError):
    pass


class PlannerExhausted(RuntimeError):
    pass


def propose(planner: Planner, query: PlannerQuery) -> PlannerResponse:
    return planner.propose(query)


def score_value(score) -> float | None:
    return None if score is MISSING else float(score)


@dataclass(frozen=True)
class ScriptedPlannerConfig:
    p: float = 0.0  # probability of an illegal (hallucinated) proposal
    q: float = 0.0  # probability of a legal but off-script proposal
    seed: int = 0
    script: str = "auto"  # "auto": the game's own script; "bfs": breadth-first optimal actions
    stale_history: bool = False

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0 and 0.0 <= self.q <= 1.0 and self.p + self.q <= 1.0):
            raise ValueError(f"need 0 <= p, q and p + q <= 1, got p={self.p}, q={self.q}")


class ScriptedPlanner:
    """Stand-in for an LLM planner: follows an optimal script with dialled-in failure modes.

    With probability ``p`` a proposal is illegal in the current state, with
    probability ``q`` it is a random legal action other than the scripted one.
    A proposal already rejected this step is replaced by a random untried legal
    action.

    With ``stale_history`` the planner tracks the state by replaying executed
    actions from the history rather than reading the state it is given, the way
    a language model anchored on its own dialogue would.  It re-reads the true
    state only when it receives advantage scores for rejected proposals or when
    its belief says the task is already done.
    """

    def __init__(self, spec: GameSpec, config: ScriptedPlannerConfig | None = None, **kw):
        self.spec = spec
        self.config = config or ScriptedPlannerConfig(**kw)
        if self.config.script == "bfs":
            self._script = spec.info.setdefault("_bfs_script", DistanceScript(spec))
        elif self.config.script == "auto" and spec.script is not None:
            self._script = spec.script
        else:
            raise GameError(f"game {spec.name} has no {self.config.script!r} script for a scripted planner")
        self.rng = np.random.default_rng(self.config.seed)
        self._belief: State | None = None
        self._step: int | None = None

    # --- belief tracking -------------------------------------------------
    def _belief_state(self, query: PlannerQuery) -> State:
        if not self.config.stale_history:
            return query.state
        if self._belief is None:
            self._belief = query.state
            self._step = query.step
        elif query.step != self._step:
            self._step = query.step
            if query.history:
                last = query.history[-1]
                try:
                    self.spec.check_action(self._belief, last.action)
                    self._belief = self.spec.transition(self._belief, last.action)[0][1]
                except GameError:
                    pass
        if query.evaluated or self.spec.is_terminal(self._belief):
            self._belief = query.state
        return self._belief

    # --- proposal ----------------------------------------------------------
    def propose(self, query: PlannerQuery) -> PlannerResponse:
        belief = self._belief_state(query)
        tried = {_norm(p) for p, _ in query.evaluated}
        tried |= {_norm(x) for x in _rejected_from_feedback(query.feedback)}
        if query.joint:
            intended: Proposal = tuple(self._script(belief))
        else:
            intended = self._script(belief)[query.agent]
        u = self.rng.random()
        if u < self.config.p:
            return PlannerResponse(self._illegal(query, intended), "hallucinated")
        if u < self.config.p + self.config.q:
            alt = self._random_legal(belief, query, exclude=tried | {_norm(intended)})
            if alt is not None:
                return PlannerResponse(alt, "off-script")
        if _norm(intended) in tried:
            alt = self._random_legal(belief, query, exclude=tried)
            if alt is not None:
                return PlannerResponse(alt, "retry")
        return PlannerResponse(intended, "script")

    def _menu(self, state: State, agent: int) -> tuple[str, ...]:
        return self.spec.legal_actions(state, agent)

    def _random_legal(self, state: State, query: PlannerQuery, exclude: set):
        if query.joint:
            options = [a for a in self.spec.legal_joint_actions(state) if a not in exclude]
        else:
            options = [a for a in self._menu(state, query.agent) if a not in exclude]
        if not options:
            return None
        return options[int(self.rng.integers(len(options)))]

    def _illegal_for(self, state: State, agent: int) -> str:
        legal = set(self.spec.legal_actions(state, agent))
        pool = [a for a in self.spec.action_sets[agent] if a not in legal]
        if pool:
            return pool[int(self.rng.integers(len(pool)))]
        return f"{self.spec.action_sets[agent][0].split('(')[0]}(nonexistent_object)"

    def _illegal(self, query: PlannerQuery, intended: Proposal) -> Proposal:
        state = query.state
        if not query.joint:
            return self._illegal_for(state, query.agent)
        base = list(intended)
        k = int(self.rng.integers(self.spec.n_agents))
        base[k] = self._illegal_for(state, k)
        return tuple(base)


def _norm(p: Proposal) -> Proposal:
    return tuple(p) if isinstance(p, list) else p


def _rejected_from_feedback(feedback: Sequence[str]) -> list:
    out = []
    for msg in feedback:
        if msg.startswith("REJECTED "):
            try:
                out.append(_norm(json.loads(msg[len("REJECTED ") :].split(" :: ")[0])))
            except json.JSONDecodeError:
                continue
    return out


def rejection_message(proposal: Proposal, reason: str) -> str:
    """Environment feedback line for a proposal that could not be executed."""
    return f"REJECTED {json.dumps(list(proposal) if isinstance(proposal, tuple) else proposal)} :: {reason}"


class StubPlanner:
    """Replays a fixed list of proposals in order."""

    def __init__(self, proposals: Sequence[Proposal]):
        self.proposals = [_norm(p) for p in proposals]
        self.calls = 0

    def propose(self, query: PlannerQuery) -> PlannerResponse:
        if self.calls >= len(self.proposals):
            raise PlannerExhausted(f"stub planner ran out after {self.calls} proposals")
        p = self.proposals[self.calls]
        self.calls += 1
        return PlannerResponse(p, "stub")


@dataclass
class RemotePlanner:
    """Client for an HTTP planner service: ``POST {url}/plan`` with a JSON body."""

    url: str | None = None
    timeout: float = 30.0
    retries: int = 2
    headers: dict = field(default_factory=dict)

    def __post_init__(self):
        self.url = self.url or os.environ.get("READ_PLANNER_URL")
        if not self.url:
            raise ValueError("no planner URL given and READ_PLANNER_URL is unset")

    def payload(self, query: PlannerQuery) -> dict:
        return {
            "task": query.task,
            "agent": query.agent,
            "state_text": query.state_text,
            "legal_actions": [list(x) if isinstance(x, tuple) else x for x in query.legal_actions],
            "history": [h.to_json() for h in query.history],
            "evaluated_pairs": [
                {"action": list(a) if isinstance(a, tuple) else a, "score": s} for a, s in query.evaluated
            ],
            "feedback": list(query.feedback),
            "prior": list(query.prior),
            "step": query.step,
        }

    def propose(self, query: PlannerQuery) -> PlannerResponse:
        body = json.dumps(self.payload(query)).encode("utf-8")
        endpoint = self.url.rstrip("/") + "/plan"
        last: Exception | None = None
        for _ in range(self.retries + 1):
            req = urllib.request.Request(
                endpoint, data=body, headers={"Content-Type": "application/json", **self.headers}, method="POST"
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    raw = resp.read()
            except TimeoutError as exc:
                last = PlannerTimeout(f"planner at {endpoint} timed out after {self.timeout}s")
                last.__cause__ = exc
                continue
            except urllib.error.URLError as exc:
                if isinstance(exc.reason, TimeoutError):
                    last = PlannerTimeout(f"planner at {endpoint} timed out after {self.timeout}s")
                else:
                    last = PlannerProtocolError(f"planner at {endpoint} failed: {exc}")
                continue
            return _parse_response(raw, query)
        assert last is not None
        raise last


def _parse_response(raw: bytes, query: PlannerQuery) -> PlannerResponse:
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise PlannerProtocolError(f"planner reply is not JSON: {raw[:80]!r}") from exc
    if not isinstance(data, dict) or "action" not in data:
        raise PlannerProtocolError("planner reply lacks an 'action' field")
    action = data["action"]
    if query.joint:
        if not isinstance(action, list) or not all(isinstance(x, str) for x in action):
            raise PlannerProtocolError("joint query needs a list of action strings")
        action = tuple(action)
    elif not isinstance(action, str):
        raise PlannerProtocolError("single-agent query needs an action string")
    return PlannerResponse(action, str(data.get("rationale", "")))

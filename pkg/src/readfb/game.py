"""Finite cooperative Markov games and exact (brute-force) policy evaluation.

States are nested tuples of ints/strings/None so they are hashable and have a
byte-stable JSON encoding (see :func:`encode_state`).  Joint actions are tuples
of per-agent action names in canonical agent order.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Sequence

import numpy as np
from scipy import sparse

State = Hashable
JointAction = tuple[str, ...]
Outcome = tuple[float, State, float]  # (probability, next state, reward)

DEFAULT_STATE_CAP = 200_000


class GameError(ValueError):
    pass


class IllegalActionError(GameError):
    """A joint action contains an action the environment refuses to execute."""

    def __init__(self, agent: int, agent_name: str, action: str, state: State):
        self.agent = agent
        self.agent_name = agent_name
        self.action = action
        self.state = state
        super().__init__(f"agent {agent_name} (#{agent}) cannot execute {action!r} in the current state")


class StateSpaceTooLarge(GameError):
    def __init__(self, cap: int):
        self.cap = cap
        super().__init__(f"reachable state space exceeds the cap of {cap} states")


class PolicyError(GameError):
    pass


def _to_tuple(obj: Any) -> Any:
    if isinstance(obj, list):
        return tuple(_to_tuple(x) for x in obj)
    return obj


def encode_state(state: State) -> str:
    """Canonical, byte-stable key for a state."""
    return json.dumps(state, separators=(",", ":"), ensure_ascii=True)


def decode_state(key: str) -> State:
    return _to_tuple(json.loads(key))


@dataclass(frozen=True, eq=False)
class GameSpec:
    """A finite cooperative Markov game with a shared reward.

    ``transition(state, joint)`` returns a list of ``(prob, next_state, reward)``
    outcomes.  ``legal(state, i)`` returns the actions agent ``i`` may execute in
    ``state``; it defaults to the full action set.
    """

    name: str
    agents: tuple[str, ...]
    action_sets: tuple[tuple[str, ...], ...]
    wait: tuple[str, ...]
    initial_state: State
    transition: Callable[[State, JointAction], list[Outcome]]
    is_terminal: Callable[[State], bool]
    gamma: float = 0.95
    horizon: int = 15
    max_replans: int = 15
    legal: Callable[[State, int], tuple[str, ...]] | None = None
    render: Callable[[State], str] | None = None
    script: Callable[[State], JointAction] | None = None
    perturb: Callable[[State, np.random.Generator], State] | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.agents)
        if n == 0:
            raise GameError("a game needs at least one agent")
        if len(self.action_sets) != n or len(self.wait) != n:
            raise GameError("action_sets and wait must have one entry per agent")
        for name, actions, w in zip(self.agents, self.action_sets, self.wait):
            if len(set(actions)) != len(actions):
                raise GameError(f"duplicate actions for agent {name}")
            if actions.count(w) != 1:
                raise GameError(f"agent {name} must have exactly one WAIT action ({w!r})")
        if not 0.0 < self.gamma < 1.0:
            raise GameError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.horizon < 1:
            raise GameError("horizon must be positive")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def joint_wait(self) -> JointAction:
        return tuple(self.wait)

    def legal_actions(self, state: State, agent: int) -> tuple[str, ...]:
        if self.legal is None:
            return self.action_sets[agent]
        return self.legal(state, agent)

    def legal_joint_actions(self, state: State) -> list[JointAction]:
        return list(itertools.product(*(self.legal_actions(state, i) for i in range(self.n_agents))))

    def all_joint_actions(self) -> list[JointAction]:
        return list(itertools.product(*self.action_sets))

    def check_action(self, state: State, action: Sequence[str]) -> None:
        if len(action) != self.n_agents:
            raise GameError(f"joint action has {len(action)} entries, game has {self.n_agents} agents")
        for i, a in enumerate(action):
            if a not in self.legal_actions(state, i):
                raise IllegalActionError(i, self.agents[i], a, state)

    def describe(self, state: State) -> str:
        return self.render(state) if self.render is not None else repr(state)


def step(spec: GameSpec, state: State, action: Sequence[str], rng: np.random.Generator) -> tuple[State, float, bool]:
    """Execute one joint action; raises :class:`IllegalActionError` naming the offending agent."""
    if spec.is_terminal(state):
        raise GameError("cannot step from a terminal state")
    action = tuple(action)
    spec.check_action(state, action)
    outcomes = spec.transition(state, action)
    if len(outcomes) == 1:
        _, nxt, reward = outcomes[0]
    else:
        u = rng.random()
        acc = 0.0
        for p, nxt, reward in outcomes:
            acc += p
            if u < acc:
                break
    return nxt, float(reward), bool(spec.is_terminal(nxt))


def reachable_states(spec: GameSpec, cap: int = DEFAULT_STATE_CAP, start: State | None = None) -> list[State]:
    """Breadth-first closure of the initial state under all legal joint actions."""
    start = spec.initial_state if start is None else start
    seen = {start: None}
    order = [start]
    queue = deque([start])
    while queue:
        s = queue.popleft()
        if spec.is_terminal(s):
            continue
        for a in spec.legal_joint_actions(s):
            for p, nxt, _ in spec.transition(s, a):
                if p > 0.0 and nxt not in seen:
                    seen[nxt] = None
                    order.append(nxt)
                    if len(order) > cap:
                        raise StateSpaceTooLarge(cap)
                    queue.append(nxt)
    return order


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class PolicyTable:
    """Explicit joint policy ``state -> {joint action: prob}``.

    ``factors`` optionally holds the sequential factorisation
    ``(state, prefix) -> {action of agent len(prefix): prob}``.
    """

    def __init__(self, dist: dict[State, dict[JointAction, float]], factors: dict | None = None, meta: dict | None = None):
        self.dist = dist
        self.factors = factors
        self.meta = meta if meta is not None else {}

    def __getitem__(self, state: State) -> dict[JointAction, float]:
        try:
            return self.dist[state]
        except KeyError:
            raise PolicyError(f"policy is undefined at state {state!r}") from None

    def __contains__(self, state: State) -> bool:
        return state in self.dist

    def states(self) -> Iterable[State]:
        return self.dist.keys()

    def prob(self, state: State, action: JointAction) -> float:
        return self[state].get(tuple(action), 0.0)

    def marginal(self, state: State, prefix: Sequence[str]) -> float:
        """Probability that the first ``len(prefix)`` agents play ``prefix``."""
        u = len(prefix)
        prefix = tuple(prefix)
        return sum(p for a, p in self[state].items() if a[:u] == prefix)

    def conditional(self, state: State, prefix: Sequence[str]) -> dict[str, float]:
        """Distribution of agent ``len(prefix)``'s action given the earlier agents' actions."""
        u = len(prefix)
        prefix = tuple(prefix)
        out: dict[str, float] = {}
        for a, p in self[state].items():
            if a[:u] == prefix and p > 0.0:
                out[a[u]] = out.get(a[u], 0.0) + p
        total = sum(out.values())
        if total <= 0.0:
            raise PolicyError(f"prefix {prefix} has zero probability at {state!r}")
        return {k: v / total for k, v in out.items()}

    def check(self, tol: float = 1e-12) -> None:
        for s, d in self.dist.items():
            if any(p < 0.0 for p in d.values()):
                raise PolicyError(f"negative probability at {s!r}")
            total = sum(d.values())
            if abs(total - 1.0) > tol:
                raise PolicyError(f"distribution at {s!r} sums to {total!r}")
        if self.factors is not None:
            for s, d in self.dist.items():
                for a, p in d.items():
                    q = chain_probability(self.factors, s, a)
                    if abs(p - q) > tol:
                        raise PolicyError(f"factorised and explicit forms disagree at {s!r}, {a}")

    @classmethod
    def from_factors(cls, factors: dict, states: Iterable[State], n_agents: int, meta: dict | None = None) -> "PolicyTable":
        dist = {}
        for s in states:
            d: dict[JointAction, float] = {}
            _expand(factors, s, (), n_agents, 1.0, d)
            dist[s] = d
        return cls(dist, factors, meta)


def _expand(factors, s, prefix, n_agents, p, out):
    if len(prefix) == n_agents:
        out[prefix] = out.get(prefix, 0.0) + p
        return
    for a, q in factors[(s, prefix)].items():
        if q > 0.0:
            _expand(factors, s, prefix + (a,), n_agents, p * q, out)


def chain_probability(factors: dict, state: State, action: JointAction) -> float:
    p = 1.0
    for i in range(len(action)):
        p *= factors.get((state, tuple(action[:i])), {}).get(action[i], 0.0)
        if p == 0.0:
            return 0.0
    return p


def uniform_policy(spec: GameSpec, states: Iterable[State] | None = None) -> PolicyTable:
    states = reachable_states(spec) if states is None else states
    dist = {}
    for s in states:
        if spec.is_terminal(s):
            continue
        joint = spec.legal_joint_actions(s)
        dist[s] = {a: 1.0 / len(joint) for a in joint}
    return PolicyTable(dist)


# ---------------------------------------------------------------------------
# Exact evaluation
# ---------------------------------------------------------------------------


@dataclass
class TabularGame:
    """Enumerated form of a game: reachable states, legal joint actions and a sparse model."""

    spec: GameSpec
    states: list[State]
    index: dict[State, int]
    actions: list[list[JointAction]]  # legal joint actions per state (empty if terminal)
    offsets: np.ndarray  # row offset of state s in the (state, action) row space
    P: sparse.csr_matrix  # (n_rows, n_states)
    R: np.ndarray  # (n_rows,)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def rows(self, s: int) -> range:
        return range(self.offsets[s], self.offsets[s + 1])


def tabulate(spec: GameSpec, cap: int = DEFAULT_STATE_CAP) -> TabularGame:
    states = reachable_states(spec, cap)
    index = {s: i for i, s in enumerate(states)}
    actions: list[list[JointAction]] = []
    offsets = [0]
    rows, cols, vals, rewards = [], [], [], []
    r = 0
    for s in states:
        acts = [] if spec.is_terminal(s) else spec.legal_joint_actions(s)
        actions.append(acts)
        for a in acts:
            outcomes = spec.transition(s, a)
            total = sum(p for p, _, _ in outcomes)
            if abs(total - 1.0) > 1e-12:
                raise GameError(f"transition probabilities at {s!r}, {a} sum to {total!r}")
            exp_r = 0.0
            for p, nxt, rew in outcomes:
                rows.append(r)
                cols.append(index[nxt])
                vals.append(p)
                exp_r += p * rew
            rewards.append(exp_r)
            r += 1
        offsets.append(r)
    P = sparse.csr_matrix((vals, (rows, cols)), shape=(r, len(states)))
    return TabularGame(spec, states, index, actions, np.asarray(offsets), P, np.asarray(rewards, dtype=float))


def _policy_matrix(tab: TabularGame, policy: PolicyTable) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for si, s in enumerate(tab.states):
        acts = tab.actions[si]
        if not acts:
            continue
        if s not in policy:
            raise PolicyError(f"policy is undefined at reachable state {s!r}")
        dist = policy[s]
        pos = {a: k for k, a in enumerate(acts)}
        for a, p in dist.items():
            if p == 0.0:
                continue
            if a not in pos:
                raise PolicyError(f"policy puts mass on illegal action {a} at {s!r}")
            rows.append(si)
            cols.append(tab.offsets[si] + pos[a])
            vals.append(p)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(tab.n_states, len(tab.R)))


@dataclass
class Evaluation:
    tab: TabularGame
    v: np.ndarray
    q: np.ndarray  # indexed by (state, action) row

    def V(self, state: State) -> float:
        return float(self.v[self.tab.index[state]])

    def Q(self, state: State, action: JointAction) -> float:
        si = self.tab.index[state]
        k = self.tab.actions[si].index(tuple(action))
        return float(self.q[self.tab.offsets[si] + k])

    def q_dict(self, state: State) -> dict[JointAction, float]:
        si = self.tab.index[state]
        return {a: float(self.q[self.tab.offsets[si] + k]) for k, a in enumerate(self.tab.actions[si])}


def evaluate(tab: TabularGame, policy: PolicyTable, tol: float = 1e-13, max_iter: int = 200_000) -> Evaluation:
    """Iterative policy evaluation to a sup-norm Bellman residual below ``tol``."""
    gamma = tab.spec.gamma
    pi = _policy_matrix(tab, policy)
    r_pi = pi @ tab.R
    m_pi = (pi @ tab.P).tocsr()
    v = np.zeros(tab.n_states)
    for _ in range(max_iter):
        new = r_pi + gamma * (m_pi @ v)
        if np.max(np.abs(new - v), initial=0.0) <= tol:
            v = new
            break
        v = new
    else:  # pragma: no cover - only with pathological gamma
        raise GameError("policy evaluation did not converge")
    q = tab.R + gamma * (tab.P @ v)
    return Evaluation(tab, v, q)


def exact_values(spec: GameSpec, policy: PolicyTable, cap: int = DEFAULT_STATE_CAP):
    """Return ``(V, Q)`` dictionaries of the exact discounted values of ``policy``.

    Terminal states have value 0 and no Q entries.
    """
    ev = evaluate(tabulate(spec, cap), policy)
    V = {s: float(ev.v[i]) for i, s in enumerate(ev.tab.states)}
    Q = {}
    for si, s in enumerate(ev.tab.states):
        for k, a in enumerate(ev.tab.actions[si]):
            Q[(s, a)] = float(ev.q[ev.tab.offsets[si] + k])
    return V, Q


def expected_return(spec: GameSpec, policy: PolicyTable, cap: int = DEFAULT_STATE_CAP) -> float:
    ev = evaluate(tabulate(spec, cap), policy)
    return ev.V(spec.initial_state)


def visitation(tab: TabularGame, policy: PolicyTable, tol: float = 1e-14, max_iter: int = 200_000) -> np.ndarray:
    """Unnormalised discounted visitation; terminal states absorb their mass."""
    gamma = tab.spec.gamma
    pi = _policy_matrix(tab, policy)
    m_pi = (pi @ tab.P).tolil()
    for si in range(tab.n_states):
        if not tab.actions[si]:
            m_pi[si, si] = 1.0
    m_t = m_pi.tocsr().T.tocsr()
    start = np.zeros(tab.n_states)
    start[tab.index[tab.spec.initial_state]] = 1.0
    rho = start.copy()
    for _ in range(max_iter):
        new = start + gamma * (m_t @ rho)
        if np.max(np.abs(new - rho)) <= tol:
            return new
        rho = new
    raise GameError("visitation did not converge")  # pragma: no cover


def discounted_visitation(spec: GameSpec, policy: PolicyTable, cap: int = DEFAULT_STATE_CAP) -> dict[State, float]:
    tab = tabulate(spec, cap)
    rho = visitation(tab, policy)
    return {s: float(rho[i]) for i, s in enumerate(tab.states)}


# ---------------------------------------------------------------------------
# Random games for property tests and the theory battery
# ---------------------------------------------------------------------------


def _table_game(name, n_agents, n_actions, states, initial, table, terminal, gamma, horizon) -> GameSpec:
    agents = tuple(f"agent{i}" for i in range(n_agents))
    action_sets = tuple(tuple(["WAIT"] + [f"a{k}" for k in range(1, n_actions)]) for _ in agents)
    wait = tuple("WAIT" for _ in agents)
    jw = tuple(wait)

    def transition(s, a):
        if a == jw:
            return [(1.0, s, 0.0)]
        return table[(s, a)]

    return GameSpec(
        name=name,
        agents=agents,
        action_sets=action_sets,
        wait=wait,
        initial_state=initial,
        transition=transition,
        is_terminal=lambda s: s in terminal,
        gamma=gamma,
        horizon=horizon,
        info={"states": tuple(states)},
    )


def random_game(
    rng: np.random.Generator,
    n_agents: int = 2,
    n_states: int = 4,
    n_actions: int = 2,
    gamma: float = 0.9,
    stochastic: bool = True,
    with_terminal: bool = False,
    reward_scale: float = 1.0,
) -> GameSpec:
    """A random game on states ``0..n_states-1`` where every state is reachable from 0."""
    states = list(range(n_states))
    terminal = {n_states - 1} if with_terminal and n_states > 1 else set()
    joints = list(itertools.product(*[["WAIT"] + [f"a{k}" for k in range(1, n_actions)]] * n_agents))
    jw = tuple(["WAIT"] * n_agents)
    table = {}
    for s in states:
        if s in terminal:
            continue
        movers = [a for a in joints if a != jw]
        for k, a in enumerate(movers):
            reward = float(np.round(reward_scale * rng.uniform(-1.0, 1.0), 6))
            if k == 0 and s + 1 < n_states:
                targets = [s + 1]  # chain keeps every state reachable
            else:
                targets = list(rng.choice(n_states, size=2 if stochastic else 1, replace=False))
            if len(targets) == 1:
                table[(s, a)] = [(1.0, int(targets[0]), reward)]
            else:
                w = float(np.round(rng.uniform(0.1, 0.9), 6))
                table[(s, a)] = [(w, int(targets[0]), reward), (1.0 - w, int(targets[1]), reward)]
    return _table_game("random", n_agents, n_actions, states, 0, table, terminal, gamma, horizon=50)


def layered_game(
    rng: np.random.Generator,
    n_agents: int = 2,
    n_actions: int = 2,
    width: int = 2,
    gamma: float = 0.9,
) -> GameSpec:
    """Deterministic two-step game: root -> one of ``width`` middle states -> terminal.

    Every non-WAIT joint action moves one layer forward, so any policy that
    never plays the joint WAIT ends every episode after exactly two steps.
    """
    root = ("root",)
    middle = [("mid", k) for k in range(width)]
    end = ("end",)
    joints = list(itertools.product(*[["WAIT"] + [f"a{k}" for k in range(1, n_actions)]] * n_agents))
    jw = tuple(["WAIT"] * n_agents)
    table = {}
    for a in joints:
        if a == jw:
            continue
        table[(root, a)] = [(1.0, middle[int(rng.integers(width))], float(rng.integers(0, 5)) / 4.0)]
        for m in middle:
            table[(m, a)] = [(1.0, end, float(rng.integers(0, 5)) / 4.0)]
    return _table_game("layered", n_agents, n_actions, [root, *middle, end], root, table, {end}, gamma, horizon=2)


def random_policy(
    spec: GameSpec,
    rng: np.random.Generator,
    states: Iterable[State] | None = None,
    concentration: float = 1.0,
    floor: float = 0.02,
) -> PolicyTable:
    """Full-support sequential policy: agent i conditions on the actions of agents < i."""
    states = [s for s in (reachable_states(spec) if states is None else states) if not spec.is_terminal(s)]
    factors = {}
    for s in states:
        for u in range(spec.n_agents):
            for prefix in itertools.product(*spec.action_sets[:u]):
                acts = spec.action_sets[u]
                w = rng.dirichlet([concentration] * len(acts))
                w = (w + floor) / (1.0 + floor * len(acts))
                factors[(s, prefix)] = dict(zip(acts, (float(x) for x in w)))
    return PolicyTable.from_factors(factors, states, spec.n_agents)


def integer_weight_policy(spec: GameSpec, rng: np.random.Generator, max_weight: int = 3):
    """Joint policy with small integer weights and no mass on the joint WAIT.

    Returns ``(policy, weights)``; ``weights[s][a]`` are the integers so that an
    exhaustive dataset can realise each trajectory with exact multiplicity.
    """
    weights = {}
    dist = {}
    for s in reachable_states(spec):
        if spec.is_terminal(s):
            continue
        w = {a: int(rng.integers(1, max_weight + 1)) for a in spec.legal_joint_actions(s) if a != spec.joint_wait}
        total = sum(w.values())
        weights[s] = w
        dist[s] = {a: k / total for a, k in w.items()}
    return PolicyTable(dist), weights

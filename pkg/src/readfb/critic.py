"""Tabular Monte-Carlo critic over canonical agent prefixes, and the ReAd scores.

A critic key is ``(state, prefix)`` where ``prefix`` is the action tuple of
agents ``1..u`` in canonical order.  ``u = 0`` (the empty prefix) is the state
value, ``u = n`` is the full joint action.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .game import GameSpec, JointAction, PolicyTable, State, decode_state, evaluate, tabulate

SCHEMA_VERSION = 1
PROVENANCES = ("llm_policy", "expert", "augmented")
ROLES = ("sample", "wait")


class CriticError(ValueError):
    pass


class _Missing:
    """Sentinel for an out-of-distribution critic lookup."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"

    def __bool__(self) -> bool:
        return False

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()


def is_missing(x) -> bool:
    return x is MISSING


@dataclass(frozen=True)
class Transition:
    state: State
    joint_action: JointAction
    reward: float
    next_state: State
    t: int
    episode_id: int
    role: str = "sample"  # "wait" marks an injected (s, w, 0, s) transition

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise CriticError(f"non-finite reward at t={self.t}")
        if self.role not in ROLES:
            raise CriticError(f"unknown transition role {self.role!r}")


@dataclass
class Episode:
    episode_id: int
    transitions: list[Transition]
    provenance: str = "llm_policy"
    multiplicity: int = 1  # the episode stands for this many identical copies

    def __post_init__(self):
        if not self.transitions:
            raise CriticError(f"episode {self.episode_id} is empty")
        if self.provenance not in PROVENANCES:
            raise CriticError(f"unknown provenance {self.provenance!r}")
        if self.multiplicity < 1:
            raise CriticError("multiplicity must be a positive integer")
        real = [tr.t for tr in self.transitions if tr.role == "sample"]
        if real and real != list(range(real[0], real[0] + len(real))):
            raise CriticError(f"episode {self.episode_id}: step indices must increase by one")

    @property
    def samples(self) -> list[Transition]:
        return [tr for tr in self.transitions if tr.role == "sample"]

    def total_reward(self) -> float:
        return sum(tr.reward for tr in self.transitions)

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "provenance": self.provenance,
            "multiplicity": self.multiplicity,
            "transitions": [
                {
                    "state": tr.state,
                    "action": list(tr.joint_action),
                    "reward": tr.reward,
                    "next_state": tr.next_state,
                    "t": tr.t,
                    "role": tr.role,
                }
                for tr in self.transitions
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Episode":
        eid = int(d["episode_id"])
        trs = [
            Transition(
                state=_tup(x["state"]),
                joint_action=tuple(x["action"]),
                reward=float(x["reward"]),
                next_state=_tup(x["next_state"]),
                t=int(x["t"]),
                episode_id=eid,
                role=x.get("role", "sample"),
            )
            for x in d["transitions"]
        ]
        return cls(eid, trs, d.get("provenance", "llm_policy"), int(d.get("multiplicity", 1)))


def _tup(x):
    return decode_state(json.dumps(x))


@dataclass
class Dataset:
    episodes: list[Episode]
    n_agents: int
    wait_action: JointAction | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def wait_augmented(self) -> bool:
        return any(tr.role == "wait" for ep in self.episodes for tr in ep.transitions)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "schema_version": SCHEMA_VERSION,
                "kind": "dataset",
                "n_agents": self.n_agents,
                "wait_action": list(self.wait_action) if self.wait_action else None,
                "meta": self.meta,
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for ep in self.episodes:
                fh.write(json.dumps(ep.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if ln.strip()]
        if not lines:
            raise CriticError(f"{path}: empty dataset file")
        header = json.loads(lines[0])
        if header.get("kind") != "dataset" or header.get("schema_version") != SCHEMA_VERSION:
            raise CriticError(f"{path}: not a version-{SCHEMA_VERSION} dataset file")
        wait = tuple(header["wait_action"]) if header.get("wait_action") else None
        eps = [Episode.from_json(json.loads(ln)) for ln in lines[1:]]
        return cls(eps, int(header["n_agents"]), wait, header.get("meta", {}))


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


@dataclass
class CriticStore:
    gamma: float
    n_agents: int
    table: dict[tuple[State, tuple[str, ...]], tuple[float, int]]
    wait_action: JointAction | None = None
    wait_augmented: bool = False
    source: str = "mc"
    coverage: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_gamma(self.gamma)
        if not self.coverage:
            self.coverage = self._coverage()

    def _coverage(self) -> dict:
        per_u = [0] * (self.n_agents + 1)
        states = set()
        for (s, prefix) in self.table:
            per_u[len(prefix)] += 1
            states.add(s)
        return {"states": len(states), "keys_per_prefix_length": per_u}

    def __len__(self) -> int:
        return len(self.table)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CriticStore):
            return NotImplemented
        return (
            self.gamma == other.gamma
            and self.n_agents == other.n_agents
            and self.table == other.table
            and self.wait_action == other.wait_action
            and self.wait_augmented == other.wait_augmented
            and self.source == other.source
        )

    def get(self, state: State, prefix: Sequence[str]):
        prefix = tuple(prefix)
        if len(prefix) > self.n_agents:
            raise CriticError(f"prefix of length {len(prefix)} for a {self.n_agents}-agent critic")
        hit = self.table.get((state, prefix))
        return MISSING if hit is None else hit[0]

    def count(self, state: State, prefix: Sequence[str]) -> int:
        hit = self.table.get((state, tuple(prefix)))
        return 0 if hit is None else hit[1]

    def to_json(self) -> dict:
        rows = sorted(
            ([s, list(p), v, c] for (s, p), (v, c) in self.table.items()),
            key=lambda r: (json.dumps(r[0]), r[1]),
        )
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "critic",
            "gamma": self.gamma,
            "n_agents": self.n_agents,
            "wait_action": list(self.wait_action) if self.wait_action else None,
            "wait_augmented": self.wait_augmented,
            "source": self.source,
            "coverage": self.coverage,
            "entries": rows,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, d: dict) -> "CriticStore":
        if d.get("kind") != "critic" or d.get("schema_version") != SCHEMA_VERSION:
            raise CriticError(f"not a version-{SCHEMA_VERSION} critic file")
        table = {(_tup(s), tuple(p)): (float(v), int(c)) for s, p, v, c in d["entries"]}
        return cls(
            gamma=float(d["gamma"]),
            n_agents=int(d["n_agents"]),
            table=table,
            wait_action=tuple(d["wait_action"]) if d.get("wait_action") else None,
            wait_augmented=bool(d.get("wait_augmented", False)),
            source=d.get("source", "mc"),
            coverage=d.get("coverage", {}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "CriticStore":
        p = Path(path)
        if not p.is_file():
            raise CriticError(f"critic file not found: {p}")
        return cls.from_json(json.loads(p.read_text(encoding="utf-8")))


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise CriticError(f"gamma must lie in (0, 1), got {gamma}")


def mc_fit(data: Dataset, gamma: float) -> CriticStore:
    """First-visit Monte-Carlo means of the discounted return-to-go for every prefix key.

    Injected WAIT transitions contribute ``0 + gamma * G`` where ``G`` is the
    return-to-go of the real transition that follows them, and only to the
    full-joint key: they are not draws from the behaviour policy, so they must
    not enter the marginal (prefix) estimates.
    """
    _check_gamma(gamma)
    if not data.episodes:
        raise CriticError("cannot fit a critic on an empty dataset")
    n = data.n_agents
    sums: dict = {}
    counts: dict = {}
    for ep in data.episodes:
        trs = ep.transitions
        # return-to-go of real transitions, then injected WAITs inherit from their successor
        g = [0.0] * len(trs)
        acc = 0.0
        for k in range(len(trs) - 1, -1, -1):
            tr = trs[k]
            if tr.role == "sample":
                acc = tr.reward + gamma * acc
                g[k] = acc
            else:
                g[k] = tr.reward + gamma * acc
        seen = set()
        m = ep.multiplicity
        for k, tr in enumerate(trs):
            if tr.role == "wait":
                keys = [(tr.state, tuple(tr.joint_action))]
            else:
                a = tuple(tr.joint_action)
                if len(a) != n:
                    raise CriticError(f"episode {ep.episode_id}: joint action {a} has wrong length")
                keys = [(tr.state, a[:u]) for u in range(n + 1)]
            for key in keys:
                if key in seen:
                    continue
                seen.add(key)
                sums[key] = sums.get(key, 0.0) + m * g[k]
                counts[key] = counts.get(key, 0) + m
    table = {key: (sums[key] / counts[key], counts[key]) for key in sums}
    return CriticStore(
        gamma=gamma,
        n_agents=n,
        table=table,
        wait_action=data.wait_action,
        wait_augmented=data.wait_augmented,
        source="mc",
    )


def local_q(critic: CriticStore, s: State, prefix_actions: Sequence[str]):
    """Stored ``Q^{1:u}(s, a^{1:u})``; the empty prefix gives the state value."""
    return critic.get(s, prefix_actions)


def score_read_s(critic: CriticStore, s: State, prior: Sequence[str], a_i: str):
    """Local advantage of agent ``len(prior)`` given the committed prior actions."""
    prior = tuple(prior)
    if len(prior) >= critic.n_agents:
        raise CriticError(f"prior of length {len(prior)} leaves no agent to score")
    hi = critic.get(s, prior + (a_i,))
    lo = critic.get(s, prior)
    if hi is MISSING or lo is MISSING:
        return MISSING
    return hi - lo


def score_read_j(critic: CriticStore, s: State, a: Sequence[str], gamma: float | None = None):
    """Joint advantage ``Q(s, a) - Q(s, w) / gamma``."""
    gamma = critic.gamma if gamma is None else gamma
    _check_gamma(gamma)
    a = tuple(a)
    if len(a) != critic.n_agents:
        raise CriticError(f"joint action {a} does not cover {critic.n_agents} agents")
    if critic.wait_action is None:
        raise CriticError("critic has no WAIT action recorded")
    q = critic.get(s, a)
    qw = critic.get(s, critic.wait_action)
    if qw is MISSING and critic.wait_augmented:
        qw = 0.0
    if q is MISSING or qw is MISSING:
        return MISSING
    return q - qw / gamma


# ---------------------------------------------------------------------------
# Exact local values (oracle side)
# ---------------------------------------------------------------------------


def local_q_from_joint(dist: dict[JointAction, float], q: dict[JointAction, float], prefix: Sequence[str]) -> float | None:
    """Marginalise ``q`` over the complement actions under ``dist`` given ``prefix``.

    Returns ``None`` when the prefix has zero probability.
    """
    u = len(prefix)
    prefix = tuple(prefix)
    num = den = 0.0
    for a, p in dist.items():
        if p > 0.0 and a[:u] == prefix:
            num += p * q[a]
            den += p
    return None if den <= 0.0 else num / den


def exact_local_table(spec: GameSpec, mu: PolicyTable) -> dict[tuple[State, tuple[str, ...]], float]:
    """Exact ``Q^{1:u}_mu`` for every reachable non-terminal state and every prefix with positive mass.

    Full joint keys (``u = n``) are filled for every legal joint action,
    including those ``mu`` never plays (their exact Q is still defined).
    """
    tab = tabulate(spec)
    ev = evaluate(tab, mu)
    out = {}
    n = spec.n_agents
    for si, s in enumerate(tab.states):
        acts = tab.actions[si]
        if not acts:
            continue
        q = ev.q_dict(s)
        dist = mu[s]
        for u in range(n):
            for prefix in {a[:u] for a in acts}:
                v = local_q_from_joint(dist, q, prefix)
                if v is not None:
                    out[(s, prefix)] = v
        for a in acts:
            out[(s, a)] = q[a]
    return out


def exact_critic(spec: GameSpec, mu: PolicyTable) -> CriticStore:
    """A critic whose entries are the exact local values of ``mu`` (unit visit counts)."""
    table = {k: (v, 1) for k, v in exact_local_table(spec, mu).items()}
    return CriticStore(spec.gamma, spec.n_agents, table, spec.joint_wait, False, source="exact")


def exhaustive_dataset(spec: GameSpec, weights: dict[State, dict[JointAction, int]], augment_wait: bool = True) -> Dataset:
    """Every trajectory of a finite-horizon deterministic game, with integer multiplicities.

    ``weights[s][a]`` are integer behaviour weights (policy = weight / row sum).
    Each complete trajectory is emitted once with a multiplicity proportional
    to its probability, so first-visit means equal exact expectations.
    """
    paths: list[tuple[list[tuple[State, JointAction, float, State]], int, int]] = []

    def walk(s, prefix, num, den, depth):
        if spec.is_terminal(s):
            paths.append((prefix, num, den))
            return
        if depth > 64:
            raise CriticError("exhaustive enumeration needs a finite-horizon game")
        row = weights[s]
        total = sum(row.values())
        for a, w in row.items():
            outcomes = spec.transition(s, a)
            if len(outcomes) != 1:
                raise CriticError("exhaustive enumeration needs deterministic transitions")
            _, nxt, r = outcomes[0]
            walk(nxt, prefix + [(s, a, r, nxt)], num * w, den * total, depth + 1)

    walk(spec.initial_state, [], 1, 1, 0)
    common = math.lcm(*(d for _, _, d in paths))
    episodes = []
    for eid, (steps, num, den) in enumerate(paths):
        trs = []
        seen = set()
        for t, (s, a, r, nxt) in enumerate(steps):
            if augment_wait and s not in seen:
                trs.append(Transition(s, spec.joint_wait, 0.0, s, t, eid, role="wait"))
            seen.add(s)
            trs.append(Transition(s, a, float(r), nxt, t, eid))
        episodes.append(Episode(eid, trs, "expert", multiplicity=num * (common // den)))
    return Dataset(episodes, spec.n_agents, spec.joint_wait, {"kind": "exhaustive"})


def prefixes(spec: GameSpec, state: State) -> Iterable[tuple[str, ...]]:
    """All canonical prefixes of legal joint actions at ``state`` (u = 0..n)."""
    for u in range(spec.n_agents + 1):
        yield from itertools.product(*(spec.legal_actions(state, i) for i in range(u)))

"""Data collection, dataset mixing, benchmark runs, disturbance experiments and reports."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .critic import CriticStore, Dataset, Episode, Transition, mc_fit
from .envs import build
from .envs.search import min_steps
from .game import GameError, GameSpec, PolicyTable, State, step
from .planners import (
    HistoryRecord,
    Planner,
    PlannerQuery,
    RemotePlanner,
    ScriptedPlanner,
    ScriptedPlannerConfig,
    StubPlanner,
    rejection_message,
)
from .refine import EpisodeResult, RefineConfig, run_episode

PERTURB_FRACTION = 0.25
MAX_RESAMPLES = 20

PlannerFactory = Callable[[int], Planner]


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------


def random_walk(spec: GameSpec, rng: np.random.Generator, max_len: int | None = None) -> State:
    """A state reached by a short walk of uniformly random legal joint actions."""
    max_len = max_len if max_len is not None else max(1, spec.horizon // 2)
    s = spec.initial_state
    for _ in range(int(rng.integers(1, max_len + 1))):
        acts = spec.legal_joint_actions(s)
        a = acts[int(rng.integers(len(acts)))]
        nxt, _, done = step(spec, s, a, rng)
        if done:
            break
        s = nxt
    return s


def _behaviour_action(spec, behaviour, state, rng, t, history):
    if isinstance(behaviour, PolicyTable):
        dist = behaviour[state]
        acts = list(dist)
        k = rng.choice(len(acts), p=np.array([dist[a] for a in acts]))
        return acts[int(k)]
    # a planner: re-query on refusal, as a physically verified rollout would
    feedback: list[str] = []
    for _ in range(MAX_RESAMPLES):
        query = PlannerQuery(
            task=spec.name,
            state=state,
            state_text=spec.describe(state),
            agent=None,
            prior=(),
            legal_actions=tuple(tuple(spec.legal_actions(state, i)) for i in range(spec.n_agents)),
            history=history,
            feedback=tuple(feedback),
            step=t,
        )
        a = tuple(behaviour.propose(query).action)
        try:
            spec.check_action(state, a)
            return a
        except GameError as exc:
            feedback.append(rejection_message(a, str(exc)))
    return spec.joint_wait


def collect_dataset(
    spec: GameSpec,
    behaviour: PolicyTable | PlannerFactory,
    episodes: int,
    augment: bool = True,
    seed: int = 0,
    provenance: str = "llm_policy",
) -> Dataset:
    """Roll out a behaviour policy (a policy table, or a planner factory ``seed -> planner``).

    With ``augment`` every first visit of a state is preceded by an injected
    ``(s, w, 0, s)`` transition, and about a quarter of the episodes start from
    a randomly perturbed state (tagged ``augmented``).
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    rng = np.random.default_rng(seed)
    out: list[Episode] = []
    for eid in range(episodes):
        perturbed = augment and rng.random() < PERTURB_FRACTION
        if perturbed:
            s = spec.perturb(spec.initial_state, rng) if spec.perturb else random_walk(spec, rng)
        else:
            s = spec.initial_state
        behaviour_now = behaviour if isinstance(behaviour, PolicyTable) else behaviour(seed * 100_003 + eid)
        trs: list[Transition] = []
        seen: set = set()
        history: tuple = ()
        t = 0
        while not spec.is_terminal(s) and t < spec.horizon:
            a = _behaviour_action(spec, behaviour_now, s, rng, t, history)
            nxt, r, _ = step(spec, s, a, rng)
            if augment and s not in seen:
                trs.append(Transition(s, spec.joint_wait, 0.0, s, t, eid, role="wait"))
            seen.add(s)
            trs.append(Transition(s, a, r, nxt, t, eid))
            history = (HistoryRecord(s, a, None),)
            s = nxt
            t += 1
        if not trs:
            continue
        out.append(Episode(eid, trs, "augmented" if perturbed else provenance))
    return Dataset(out, spec.n_agents, spec.joint_wait, {"task": spec.name, "seed": seed, "gamma": spec.gamma})


def scripted_factory(spec: GameSpec, p: float, q: float, stale: bool = False) -> PlannerFactory:
    return lambda s: ScriptedPlanner(spec, ScriptedPlannerConfig(p=p, q=q, seed=s, stale_history=stale))


def train_critic(
    spec: GameSpec,
    episodes: int = 2000,
    p: float = 0.3,
    q: float = 0.2,
    seed: int = 0,
    augment: bool = True,
) -> CriticStore:
    """Monte-Carlo critic of a noisy scripted planner (the desk-scale stand-in for an LLM policy)."""
    data = collect_dataset(spec, scripted_factory(spec, p, q), episodes, augment=augment, seed=seed)
    return mc_fit(data, spec.gamma)


@dataclass(frozen=True)
class MixSpec:
    llm_percent: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.llm_percent <= 100.0:
            raise ValueError("llm share must lie in [0, 100] percent")

    @property
    def expert_percent(self) -> float:
        return 100.0 - self.llm_percent


def mix_datasets(d_llm: Dataset, d_expert: Dataset, mix: MixSpec, seed: int = 0, total: int | None = None) -> Dataset:
    """Episode-level subsample with ``X%`` policy episodes and ``(100-X)%`` expert episodes."""
    if d_llm.n_agents != d_expert.n_agents:
        raise ValueError("datasets have different agent counts")
    total = total if total is not None else max(len(d_llm), len(d_expert))
    n_llm = int(round(total * mix.llm_percent / 100.0))
    n_exp = total - n_llm
    if n_llm > len(d_llm):
        raise ValueError(f"policy dataset has {len(d_llm)} episodes, {n_llm} requested (short by {n_llm - len(d_llm)})")
    if n_exp > len(d_expert):
        raise ValueError(
            f"expert dataset has {len(d_expert)} episodes, {n_exp} requested (short by {n_exp - len(d_expert)})"
        )
    rng = np.random.default_rng(seed)
    pick_llm = sorted(rng.choice(len(d_llm), size=n_llm, replace=False).tolist()) if n_llm else []
    pick_exp = sorted(rng.choice(len(d_expert), size=n_exp, replace=False).tolist()) if n_exp else []
    chosen = [d_llm.episodes[k] for k in pick_llm] + [d_expert.episodes[k] for k in pick_exp]
    episodes = []
    for new_id, ep in enumerate(chosen):
        trs = [replace(tr, episode_id=new_id) for tr in ep.transitions]
        episodes.append(Episode(new_id, trs, ep.provenance, ep.multiplicity))
    meta = {"mix_llm_percent": mix.llm_percent, "seed": seed}
    gammas = {d.meta.get("gamma") for d in (d_llm, d_expert)} - {None}
    if len(gammas) > 1:
        raise ValueError(f"datasets were collected with different discounts {sorted(gammas)}")
    if gammas:
        meta["gamma"] = gammas.pop()
    return Dataset(episodes, d_llm.n_agents, d_llm.wait_action or d_expert.wait_action, meta)


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"10"`` means seeds 0..9; ``"3-7"`` a range; ``"1,4,9"`` a list."""
    text = text.strip()
    if "," in text:
        return tuple(int(x) for x in text.split(",") if x.strip())
    if "-" in text:
        lo, hi = text.split("-")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(range(int(text)))


@dataclass
class BenchConfig:
    task: str = "sweep"
    level: str = "Y1_G1"
    method: str = "read_j"
    planner: str = "scripted"  # scripted | remote | stub
    p: float = 0.0
    q: float = 0.0
    stale: bool = False
    stub: str = ""  # JSON list of proposals for the stub planner
    critic: str = ""
    seeds: tuple[int, ...] = tuple(range(10))
    step_limit: int | None = None
    max_replans: int | None = None
    disturb: int = 0
    alpha0: float = 0.02
    history: str = "last"
    reset_alpha_per_agent: bool = False
    workers: int = 1

    @classmethod
    def parse(cls, text: str, base_dir: str | Path | None = None) -> "BenchConfig":
        """Read ``key = value`` lines; ``#`` starts a comment."""
        kinds = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {n}: expected key = value")
            key, val = (x.strip() for x in line.split("=", 1))
            if key not in kinds:
                raise ValueError(f"config line {n}: unknown key {key!r}")
            values[key] = _convert(key, val)
        cfg = cls(**values)
        if cfg.critic and base_dir is not None and not Path(cfg.critic).is_absolute():
            cfg.critic = str(Path(base_dir) / cfg.critic)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "BenchConfig":
        p = Path(path)
        return cls.parse(p.read_text(encoding="utf-8"), base_dir=p.parent)

    def refine_config(self) -> RefineConfig:
        return RefineConfig(
            method=self.method,
            alpha0=self.alpha0,
            max_replans=self.max_replans,
            history=self.history,
            reset_alpha_per_agent=self.reset_alpha_per_agent,
        )

    def build_game(self) -> GameSpec:
        overrides = {}
        if self.step_limit is not None:
            overrides["horizon"] = self.step_limit
        if self.max_replans is not None:
            overrides["max_replans"] = self.max_replans
        return build(self.task, self.level, **overrides)

    def make_planner(self, spec: GameSpec, seed: int) -> Planner:
        if self.planner == "scripted":
            return ScriptedPlanner(spec, ScriptedPlannerConfig(p=self.p, q=self.q, seed=seed, stale_history=self.stale))
        if self.planner == "stub":
            return StubPlanner(json.loads(self.stub) if self.stub else [])
        if self.planner == "remote":
            return RemotePlanner()
        raise ValueError(f"unknown planner {self.planner!r}")


def _convert(key: str, val: str):
    if key in ("p", "q", "alpha0"):
        return float(val)
    if key in ("disturb", "workers"):
        return int(val)
    if key in ("step_limit", "max_replans"):
        return None if val.lower() in ("", "none", "default") else int(val)
    if key in ("stale", "reset_alpha_per_agent"):
        if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key} must be a boolean")
        return val.lower() in ("true", "1", "yes")
    if key == "seeds":
        return parse_seeds(val)
    return val


@dataclass
class SeedRow:
    seed: int
    sr: float
    es: int
    nq: int


@dataclass
class Report:
    rows: list[SeedRow]
    episodes: list[EpisodeResult] = field(default_factory=list)

    def _stat(self, name: str) -> tuple[float, float]:
        xs = np.array([getattr(r, name) for r in self.rows], dtype=float)
        mean = float(xs.mean())
        se = float(xs.std(ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else 0.0
        return mean, se

    @property
    def sr(self) -> tuple[float, float]:
        return self._stat("sr")

    @property
    def es(self) -> tuple[float, float]:
        return self._stat("es")

    @property
    def nq(self) -> tuple[float, float]:
        return self._stat("nq")

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "sr", "es", "nq"])
        for r in self.rows:
            w.writerow([r.seed, f"{r.sr:.6f}", r.es, r.nq])
        w.writerow(["mean±se"] + [f"{m:.6f}±{s:.6f}" for m, s in (self.sr, self.es, self.nq)])
        return buf.getvalue()

    def write(self, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        jsonl_path = out / f"{stem}.jsonl"
        csv_path.write_text(self.csv_text(), encoding="utf-8")
        with open(jsonl_path, "w", encoding="utf-8") as fh:
            for ep in self.episodes:
                fh.write(ep.to_jsonl() + "\n")
        return csv_path, jsonl_path


def run_benchmark(
    cfg: BenchConfig,
    critic: CriticStore | None = None,
    out_dir: str | Path | None = None,
    planner_factory: PlannerFactory | None = None,
) -> Report:
    """Run every seed and aggregate SR/ES/NQ; validates the task and critic before the first episode."""
    spec = cfg.build_game()
    rcfg = cfg.refine_config()
    if critic is None and cfg.critic:
        critic = CriticStore.load(cfg.critic)
    if critic is None and rcfg.method in ("read_s", "read_j"):
        raise ValueError(f"method {rcfg.method} needs a critic file")
    if critic is not None and critic.n_agents != spec.n_agents:
        raise ValueError(f"critic was fitted for {critic.n_agents} agents, {spec.name} has {spec.n_agents}")
    def one(seed: int) -> EpisodeResult:
        planner = planner_factory(seed) if planner_factory else cfg.make_planner(spec, seed)
        return run_episode(spec, planner, critic, rcfg, seed=seed, disturb_at=cfg.disturb)

    if cfg.workers > 1:
        # each seed owns its planner and RNG; map() keeps seed order
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, cfg.seeds))
    else:
        results = [one(seed) for seed in cfg.seeds]
    rows = [SeedRow(seed, 1.0 if r.success else 0.0, r.env_steps, r.queries) for seed, r in zip(cfg.seeds, results)]
    report = Report(rows, results)
    if out_dir is not None:
        report.write(out_dir)
    return report


def inject_disturbance(
    cfg: BenchConfig,
    n: int,
    critic: CriticStore | None = None,
    out_dir: str | Path | None = None,
    planner_factory: PlannerFactory | None = None,
) -> Report:
    """Benchmark with a silent reset to the initial state after the n-th executed step."""
    spec = cfg.build_game()
    shortest = min_steps(spec)
    if n < 0 or (shortest is not None and n >= shortest):
        raise ValueError(f"disturbance step {n} must satisfy 0 <= n < {shortest} (the minimal solution length)")
    return run_benchmark(replace(cfg, disturb=n), critic, out_dir, planner_factory)

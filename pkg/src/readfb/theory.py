"""Seeded batteries of small games and the identity checks run by ``check-theory``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .critic import exact_local_table, exhaustive_dataset, mc_fit, score_read_j, score_read_s
from .game import (
    GameSpec,
    PolicyTable,
    chain_probability,
    evaluate,
    integer_weight_policy,
    layered_game,
    random_game,
    random_policy,
    tabulate,
    visitation,
)
from .policy import (
    Oracle,
    _mu_conditional,
    binary_filter_policy,
    decomposition_gap,
    exp_weight_individual,
    exp_weight_policy,
    min_nonzero_local_advantage,
    performance_difference,
    removal_reachable,
    surrogate_improvement,
    total_variation,
)

BETAS = (0.1, 1.0, 10.0)
LIMIT_BETAS = (1.0, 0.1, 0.01, 0.001)
GAP = 0.1


def battery(seed: int = 0, count: int = 100) -> Iterator[tuple[GameSpec, PolicyTable]]:
    """Random stochastic games with 2-3 agents, 2-6 states and 2-3 actions (WAIT included)."""
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        n = int(rng.integers(2, 4))
        acts = int(rng.integers(2, 4))
        states = int(rng.integers(2, 7))
        gamma = float(np.round(rng.uniform(0.8, 0.95), 4))
        game = random_game(rng, n, states, acts, gamma=gamma, stochastic=True)
        yield game, random_policy(game, rng)


def gapped_battery(seed: int = 0, count: int = 30, max_actions: int = 3) -> Iterator[tuple[GameSpec, PolicyTable, Oracle]]:
    """Battery games whose non-zero local advantages all have magnitude at least 0.1."""
    found = 0
    k = 0
    while found < count:
        rng = np.random.default_rng([seed, 7919, k])
        k += 1
        n = int(rng.integers(2, 4))
        acts = int(rng.integers(2, max_actions + 1))
        states = int(rng.integers(2, 5))
        game = random_game(rng, n, states, acts, gamma=0.9, reward_scale=20.0)
        mu = random_policy(game, rng)
        oracle = Oracle.build(game, mu)
        if min_nonzero_local_advantage(oracle) >= GAP:
            found += 1
            yield game, mu, oracle


def layered_battery(seed: int = 0, count: int = 100):
    """Two-step deterministic games with integer-weight behaviour policies and their exhaustive datasets."""
    for k in range(count):
        rng = np.random.default_rng([seed, 104729, k])
        n = int(rng.integers(2, 4))
        acts = int(rng.integers(2, 4))
        game = layered_game(rng, n, acts, width=2, gamma=0.9)
        mu, weights = integer_weight_policy(game, rng)
        yield game, mu, exhaustive_dataset(game, weights)


# ---------------------------------------------------------------------------
# Individual checks; each returns the worst violation (0 is perfect)
# ---------------------------------------------------------------------------


def wait_identity_gap(game: GameSpec, pi: PolicyTable) -> float:
    ev = evaluate(tabulate(game), pi)
    worst = 0.0
    for si, s in enumerate(ev.tab.states):
        if ev.tab.actions[si]:
            worst = max(worst, abs(ev.Q(s, game.joint_wait) - game.gamma * ev.v[si]))
    return worst


def bellman_gap(game: GameSpec, pi: PolicyTable) -> float:
    ev = evaluate(tabulate(game), pi)
    worst = 0.0
    for si, s in enumerate(ev.tab.states):
        if ev.tab.actions[si]:
            q = ev.q_dict(s)
            worst = max(worst, abs(ev.v[si] - sum(p * q[a] for a, p in pi[s].items())))
    return worst


def critic_fidelity_gap(game: GameSpec, mu: PolicyTable, data) -> float:
    """Largest difference between Monte-Carlo estimates and the exact local values."""
    critic = mc_fit(data, game.gamma)
    exact = exact_local_table(game, mu)
    worst = 0.0
    for key, (est, _) in critic.table.items():
        worst = max(worst, abs(est - exact[key]))
    return worst


def critic_decomposition_gap(game: GameSpec, mu: PolicyTable, data) -> float:
    """``|S_J(s,a) - sum_i S_S^i|`` and ``|S_J - A_mu|`` over all sampled (s, a)."""
    critic = mc_fit(data, game.gamma)
    ev = evaluate(tabulate(game), mu)
    worst = 0.0
    for ep in data.episodes:
        for tr in ep.samples:
            s, a = tr.state, tuple(tr.joint_action)
            joint = score_read_j(critic, s, a)
            parts = sum(score_read_s(critic, s, a[:i], a[i]) for i in range(game.n_agents))
            exact = ev.Q(s, a) - ev.V(s)
            worst = max(worst, abs(joint - parts), abs(joint - exact))
    return worst


def partition_gap(game: GameSpec, pi: PolicyTable) -> float:
    """Relative gap between ``Z(s)`` and the product of per-agent partitions along each action chain."""
    log_z, log_zi = pi.meta["log_Z"], pi.meta["log_Zi"]
    worst = 0.0
    for s, dist in pi.dist.items():
        for a in dist:
            total = sum(log_zi[(s, a[: i + 1])] for i in range(game.n_agents))
            z = math.exp(log_z[s])
            worst = max(worst, abs(math.exp(total) - z) / max(1.0, z))
    return worst


def factorisation_gap(pi: PolicyTable) -> float:
    worst = 0.0
    for s, dist in pi.dist.items():
        for a, p in dist.items():
            worst = max(worst, abs(p - chain_probability(pi.factors, s, a)))
    return worst


def visitation_mass_gap(game: GameSpec, pi: PolicyTable) -> float:
    rho = visitation(tabulate(game), pi)
    return abs(float(rho.sum()) - 1.0 / (1.0 - game.gamma))


def limit_profile(game, mu, oracle) -> tuple[list[float], bool]:
    """TV between the per-agent exponential weighting and the binary filter along shrinking beta."""
    filt = binary_filter_policy(game, mu, 0.0, oracle)
    tvs = [total_variation(exp_weight_individual(game, mu, b, oracle), filt) for b in LIMIT_BETAS]
    monotone = all(b <= a + 1e-12 for a, b in zip(tvs, tvs[1:]))
    return tvs, monotone


def single_positive_contexts(oracle: Oracle) -> bool:
    """Every context has at most one action with positive local advantage."""
    for s in oracle.live_states():
        for prefix in oracle.contexts(s):
            cond = _mu_conditional(oracle, s, prefix)
            if sum(1 for ai in cond if oracle.local_advantage(s, prefix, ai) > 0.0) > 1:
                return False
    return True


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: int = 0
    total: int = 0
    worst: float = 0.0
    informational: bool = False

    def record(self, ok: bool, value: float = 0.0) -> None:
        self.total += 1
        self.passed += int(ok)
        if math.isfinite(value):
            self.worst = max(self.worst, value)

    @property
    def ok(self) -> bool:
        return self.passed == self.total


@dataclass
class TheoryReport:
    checks: dict[str, Check] = field(default_factory=dict)

    def check(self, name: str, informational: bool = False) -> Check:
        if name not in self.checks:
            self.checks[name] = Check(name, informational=informational)
        return self.checks[name]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks.values() if not c.informational)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks.values():
            tag = "PASS" if c.ok else ("INFO" if c.informational else "FAIL")
            out.append(f"{tag} {c.name}: {c.passed}/{c.total} verified (worst deviation {c.worst:.3e})")
        return out


def check_theory(seed: int = 0, games: int = 100, gapped: int = 30) -> TheoryReport:
    rep = TheoryReport()
    for k, (game, mu) in enumerate(battery(seed, games)):
        oracle = Oracle.build(game, mu)
        d = decomposition_gap(oracle)
        rep.check("advantage decomposition (exact)").record(d <= 1e-9, d)
        w = wait_identity_gap(game, mu)
        rep.check("WAIT identity Q(s,w) = gamma V(s)").record(w <= 1e-9, w)
        b = bellman_gap(game, mu)
        rep.check("Bellman consistency").record(b <= 1e-9, b)
        m = visitation_mass_gap(game, mu)
        rep.check("visitation mass 1/(1-gamma)").record(m <= 1e-9, m)
        z = abs(surrogate_improvement(game, mu, mu, oracle))
        rep.check("surrogate of the base policy is zero").record(z <= 1e-9, z)
        other = random_policy(game, np.random.default_rng([seed, 31, k]))
        j_mu = oracle.ev.V(game.initial_state)
        j_other = evaluate(oracle.tab, other).V(game.initial_state)
        pd = abs(performance_difference(game, mu, other, oracle) - (j_other - j_mu))
        rep.check("performance difference identity").record(pd <= 1e-9, pd)
        for beta in BETAS:
            pi = exp_weight_policy(game, mu, beta, oracle)
            j_pi = evaluate(oracle.tab, pi).V(game.initial_state)
            rep.check("exponential weighting improves J").record(j_pi >= j_mu - 1e-9, max(0.0, j_mu - j_pi))
            f = factorisation_gap(pi)
            rep.check("sequential factorisation of the weighted policy").record(f <= 1e-9, f)
            zg = partition_gap(game, pi)
            rep.check("product of per-agent partitions equals Z").record(zg <= 1e-9, zg)
        filt = binary_filter_policy(game, mu, 0.0, oracle)
        if removal_reachable(game, filt, oracle.tab):
            eta = surrogate_improvement(game, mu, filt, oracle)
            gain = evaluate(oracle.tab, filt).V(game.initial_state) - j_mu
            rep.check("binary filtering improves surrogate and J").record(eta > 1e-10 and gain > 1e-10, 0.0)
    for game, mu, data in layered_battery(seed, games):
        g = critic_fidelity_gap(game, mu, data)
        rep.check("exhaustive Monte-Carlo critic matches exact local values").record(g <= 1e-6, g)
        d = critic_decomposition_gap(game, mu, data)
        rep.check("advantage decomposition (Monte-Carlo critic)").record(d <= 1e-6, d)
    for game, mu, oracle in gapped_battery(seed, gapped):
        tvs, monotone = limit_profile(game, mu, oracle)
        ok = tvs[-1] <= 0.01 and monotone
        if single_positive_contexts(oracle):
            rep.check("small-temperature limit equals the filter (one positive action per context)").record(ok, tvs[-1])
        rep.check("small-temperature limit equals the filter (all gapped games)", informational=True).record(
            ok, tvs[-1]
        )
    return rep

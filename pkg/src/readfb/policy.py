"""Policy-improvement theory on small games: exponential weighting, binary filtering, surrogates.

Everything here is exact (computed from the tabular oracle in :mod:`readfb.game`)
and is meant for verification, not for deployment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.special import logsumexp

from .critic import exact_local_table
from .game import Evaluation, GameSpec, PolicyError, PolicyTable, State, TabularGame, evaluate, tabulate, visitation


@dataclass(frozen=True)
class ExpWeightConfig:
    beta: float = 1.0
    eps: float = 0.0

    def __post_init__(self):
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.eps >= 0.0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")


@dataclass
class Oracle:
    """Exact values of a base policy ``mu`` and its local value table."""

    spec: GameSpec
    mu: PolicyTable
    tab: TabularGame
    ev: Evaluation
    local: dict  # (state, prefix) -> Q^{1:u}_mu
    _contexts: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, spec: GameSpec, mu: PolicyTable) -> "Oracle":
        tab = tabulate(spec)
        ev = evaluate(tab, mu)
        local = exact_local_table(spec, mu)
        ctx: dict = {}
        for (s, p) in local:
            if len(p) < spec.n_agents:
                ctx.setdefault(s, []).append(p)
        for s in ctx:
            ctx[s].sort(key=len)
        return cls(spec, mu, tab, ev, local, ctx)

    def live_states(self) -> list[State]:
        return [s for si, s in enumerate(self.tab.states) if self.tab.actions[si]]

    def advantage(self, s: State, a) -> float:
        return self.ev.Q(s, a) - self.ev.V(s)

    def local_advantage(self, s: State, prefix, a_i: str) -> float:
        prefix = tuple(prefix)
        return self.local[(s, prefix + (a_i,))] - self.local[(s, prefix)]

    def contexts(self, s: State):
        """Prefixes of length < n with positive mass under ``mu``, shortest first."""
        return self._contexts.get(s, [])


def decomposition_gap(oracle: Oracle) -> float:
    """Largest ``|A(s,a) - sum_i A^i(s, a^{1:i-1}, a^i)|`` over states and joint actions in the support of mu."""
    worst = 0.0
    n = oracle.spec.n_agents
    for s in oracle.live_states():
        for a, p in oracle.mu[s].items():
            if p <= 0.0:
                continue
            total = sum(oracle.local_advantage(s, a[:i], a[i]) for i in range(n))
            worst = max(worst, abs(oracle.advantage(s, a) - total))
    return worst


def _mu_conditional(oracle: Oracle, s: State, prefix) -> dict[str, float]:
    mu = oracle.mu
    if mu.factors is not None and (s, prefix) in mu.factors:
        return {k: v for k, v in mu.factors[(s, prefix)].items() if v > 0.0}
    return mu.conditional(s, prefix)


def exp_weight_policy(spec: GameSpec, mu: PolicyTable, beta: float, oracle: Oracle | None = None) -> PolicyTable:
    """Advantage-weighted improvement ``pi*(a|s) = mu(a|s) exp(A_mu(s,a)/beta) / Z(s)``.

    The result carries the exact sequential factorisation in ``factors``.  Agent
    ``i``'s conditional is ``mu^i exp(A^i/beta) / Z^i`` where ``Z^i`` depends on
    the actions chosen so far; ``meta["log_Zi"][(s, a^{1:i})]`` holds ``log Z^i``
    and ``meta["log_Z"][s]`` holds ``log Z(s)``, so that the ``Z^i`` along any
    action chain multiply to ``Z(s)``.
    """
    if not beta > 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    oracle = oracle or Oracle.build(spec, mu)
    dist, factors, log_z, log_zi = {}, {}, {}, {}
    for s in oracle.live_states():
        # joint form
        logs = {a: math.log(p) + oracle.advantage(s, a) / beta for a, p in mu[s].items() if p > 0.0}
        lz = float(logsumexp(list(logs.values())))
        log_z[s] = lz
        dist[s] = {a: math.exp(v - lz) for a, v in logs.items()}
        # backward recursion over prefixes: log W_u(prefix)
        log_w: dict[tuple, float] = {}
        ctx = oracle.contexts(s)
        for a in logs:
            log_w[a] = 0.0
        for prefix in sorted(ctx, key=len, reverse=True):
            cond = _mu_conditional(oracle, s, prefix)
            terms = {}
            for ai, p in cond.items():
                nxt = prefix + (ai,)
                if nxt not in log_w:
                    continue
                terms[ai] = math.log(p) + oracle.local_advantage(s, prefix, ai) / beta + log_w[nxt]
            lw = float(logsumexp(list(terms.values())))
            log_w[prefix] = lw
            factors[(s, prefix)] = {ai: math.exp(v - lw) for ai, v in terms.items()}
            for ai in terms:
                log_zi[(s, prefix + (ai,))] = lw - log_w[prefix + (ai,)]
    return PolicyTable(dist, factors, {"beta": beta, "log_Z": log_z, "log_Zi": log_zi})


def exp_weight_individual(spec: GameSpec, mu: PolicyTable, beta: float, oracle: Oracle | None = None) -> PolicyTable:
    """Product of per-agent conditionals ``mu^i exp(A^i/beta)``, each normalised on its own.

    This is the per-agent weighting read literally, with a normaliser that only
    sees agent ``i``'s own action.  It differs from :func:`exp_weight_policy`
    whenever later agents' weights depend on earlier actions, and it is the
    object whose small-temperature limit is the binary filter.
    """
    if not beta > 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    oracle = oracle or Oracle.build(spec, mu)
    factors, log_zi = {}, {}
    states = oracle.live_states()
    for s in states:
        for prefix in oracle.contexts(s):
            cond = _mu_conditional(oracle, s, prefix)
            terms = {ai: math.log(p) + oracle.local_advantage(s, prefix, ai) / beta for ai, p in cond.items()}
            lz = float(logsumexp(list(terms.values())))
            factors[(s, prefix)] = {ai: math.exp(v - lz) for ai, v in terms.items()}
            log_zi[(s, prefix)] = lz
    return PolicyTable.from_factors(factors, states, spec.n_agents, {"beta": beta, "log_Zi": log_zi})


def binary_filter_policy(spec: GameSpec, mu: PolicyTable, eps: float = 0.0, oracle: Oracle | None = None) -> PolicyTable:
    """Sequential per-agent filter ``pi^i ∝ 1[A^i > eps] mu^i``.

    A context whose filter would keep nothing falls back to ``mu^i``.
    ``meta["removed"]`` maps each context to the positively weighted actions it
    dropped; ``meta["fallback"]`` lists the contexts that fell back.
    """
    if not eps >= 0.0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    oracle = oracle or Oracle.build(spec, mu)
    factors, removed, fallback = {}, {}, []
    states = oracle.live_states()
    for s in states:
        for prefix in oracle.contexts(s):
            cond = _mu_conditional(oracle, s, prefix)
            keep = {ai: p for ai, p in cond.items() if oracle.local_advantage(s, prefix, ai) > eps}
            if not keep:
                fallback.append((s, prefix))
                keep = dict(cond)
            else:
                dropped = tuple(ai for ai in cond if ai not in keep)
                if dropped:
                    removed[(s, prefix)] = dropped
            total = sum(keep.values())
            factors[(s, prefix)] = {ai: p / total for ai, p in keep.items()}
    return PolicyTable.from_factors(
        factors, states, spec.n_agents, {"eps": eps, "removed": removed, "fallback": fallback}
    )


def removal_reachable(spec: GameSpec, pi: PolicyTable, tab: TabularGame | None = None) -> bool:
    """Whether a filtered policy drops an action in some context it actually reaches."""
    removed = pi.meta.get("removed", {})
    if not removed:
        return False
    tab = tab or tabulate(spec)
    rho = visitation(tab, pi)
    for (s, prefix) in removed:
        if rho[tab.index[s]] > 0.0 and pi.marginal(s, prefix) > 0.0:
            return True
    return False


def surrogate_improvement(spec: GameSpec, mu: PolicyTable, pi: PolicyTable, oracle: Oracle | None = None) -> float:
    """``sum_s rho_mu(s) sum_a pi(a|s) A_mu(s, a)``."""
    oracle = oracle or Oracle.build(spec, mu)
    rho = visitation(oracle.tab, mu)
    return _weighted_advantage(oracle, pi, rho)


def performance_difference(spec: GameSpec, mu: PolicyTable, pi: PolicyTable, oracle: Oracle | None = None) -> float:
    """``sum_s rho_pi(s) sum_a pi(a|s) A_mu(s, a)``, which equals ``J(pi) - J(mu)``."""
    oracle = oracle or Oracle.build(spec, mu)
    rho = visitation(oracle.tab, pi)
    return _weighted_advantage(oracle, pi, rho)


def _weighted_advantage(oracle: Oracle, pi: PolicyTable, rho) -> float:
    total = 0.0
    for si, s in enumerate(oracle.tab.states):
        if not oracle.tab.actions[si] or rho[si] == 0.0:
            continue
        v = oracle.ev.v[si]
        q = oracle.ev.q_dict(s)
        total += rho[si] * sum(p * (q[a] - v) for a, p in pi[s].items())
    return float(total)


def mixture(mu: PolicyTable, pi: PolicyTable, lam: float) -> PolicyTable:
    """``(1 - lam) mu + lam pi`` state by state."""
    dist = {}
    for s in mu.states():
        d = {a: (1.0 - lam) * p for a, p in mu[s].items()}
        for a, p in pi[s].items():
            d[a] = d.get(a, 0.0) + lam * p
        dist[s] = d
    return PolicyTable(dist)


def total_variation(p: PolicyTable, q: PolicyTable, states=None) -> float:
    """Largest per-state total-variation distance."""
    states = list(p.states()) if states is None else states
    worst = 0.0
    for s in states:
        a, b = p[s], q[s]
        tv = 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))
        worst = max(worst, tv)
    return worst


def min_nonzero_local_advantage(oracle: Oracle, tol: float = 1e-12) -> float:
    """Smallest ``|A^i|`` among the non-zero local advantages of mu (``inf`` if none)."""
    smallest = math.inf
    for s in oracle.live_states():
        for prefix in oracle.contexts(s):
            for ai in _mu_conditional(oracle, s, prefix):
                x = abs(oracle.local_advantage(s, prefix, ai))
                if x > tol:
                    smallest = min(smallest, x)
    return smallest


def check_normalised(pi: PolicyTable, tol: float = 1e-12) -> None:
    for s, d in pi.dist.items():
        if abs(sum(d.values()) - 1.0) > tol:
            raise PolicyError(f"distribution at {s!r} is not normalised")

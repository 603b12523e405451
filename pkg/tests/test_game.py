from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from readfb.envs import build
from readfb.game import (
    GameError,
    GameSpec,
    IllegalActionError,
    PolicyError,
    PolicyTable,
    StateSpaceTooLarge,
    decode_state,
    discounted_visitation,
    encode_state,
    evaluate,
    exact_values,
    expected_return,
    random_game,
    random_policy,
    reachable_states,
    step,
    tabulate,
    uniform_policy,
    visitation,
)
from readfb.policy import performance_difference

from .conftest import joints, table_game


def one_state_game(gamma=0.5, reward=1.0):
    table = {(0, a): [(1.0, 0, reward if a == ("a", "a") else 0.0)] for a in joints()}
    return table_game(table, gamma=gamma)


# --- spec construction ------------------------------------------------------------


def test_spec_requires_exactly_one_wait():
    with pytest.raises(GameError, match="exactly one WAIT"):
        GameSpec("bad", ("x",), (("a", "b"),), ("WAIT",), 0, lambda s, a: [], lambda s: False)


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 1.5])
def test_spec_rejects_gamma_outside_open_interval(gamma):
    with pytest.raises(GameError, match="gamma"):
        one_state_game(gamma=gamma)


def test_state_encoding_round_trip_and_stability():
    s = ("alice", None, ("a", "b"), 2, 0)
    key = encode_state(s)
    assert decode_state(key) == s
    assert encode_state(("alice", None, ("a", "b"), 2, 0)) == key


# --- step -------------------------------------------------------------------------


def test_joint_wait_is_free_self_loop(rng):
    g = one_state_game()
    assert step(g, 0, ("WAIT", "WAIT"), rng) == (0, 0.0, False)


def test_rewarded_pair_in_one_state_game(rng):
    assert step(one_state_game(), 0, ("a", "a"), rng) == (0, 1.0, False)


def test_step_names_the_offending_agent(rng):
    g = build("sort", 1)
    bad = ("WAIT", "PICK(blue_square)PLACE(panel4)", "WAIT")
    with pytest.raises(IllegalActionError) as err:
        step(g, g.initial_state, bad, rng)
    assert err.value.agent == 1 and err.value.agent_name == "Bob"


def test_sweeping_a_target_with_partner_present_pays_one(rng):
    g = build("sweep", "Y1_G1")
    s = ("yellow_1", "yellow_1", g.initial_state[2], 0, 0)
    _, r, _ = step(g, s, ("WAIT", "SWEEP(yellow_1)"), rng)
    assert r == 1.0


def test_all_env_waits_are_free_self_loops(rng):
    for task, level in [("sweep", "Y1_G1"), ("sandwich", 1), ("sort", 3), ("kitchen", "cramped_room")]:
        g = build(task, level)
        for s in reachable_states(g)[:200]:
            if not g.is_terminal(s):
                nxt, r, _ = step(g, s, g.joint_wait, rng)
                assert nxt == s and r == 0.0


# --- exact evaluation ---------------------------------------------------------------


def test_zero_reward_game_has_zero_values():
    g = one_state_game(reward=0.0)
    V, Q = exact_values(g, uniform_policy(g))
    assert set(V.values()) == {0.0} and set(Q.values()) == {0.0}
    assert expected_return(g, uniform_policy(g)) == 0.0


def test_geometric_series_single_action():
    g = one_state_game(gamma=0.5)
    pi = PolicyTable({0: {("a", "a"): 1.0}})
    V, Q = exact_values(g, pi)
    assert V[0] == pytest.approx(2.0, abs=1e-12)
    assert Q[(0, ("a", "a"))] == pytest.approx(2.0, abs=1e-12)
    assert expected_return(g, pi) == pytest.approx(2.0, abs=1e-12)


def test_policy_missing_a_state_is_named():
    g = table_game({(0, a): [(1.0, 1, 0.0)] for a in joints()} | {(1, a): [(1.0, 0, 0.0)] for a in joints()})
    pi = PolicyTable({0: {("a", "a"): 1.0}})
    with pytest.raises(PolicyError, match="state 1"):
        exact_values(g, pi)


def test_state_cap_is_enforced():
    g = build("sweep", "Y1_G1")
    with pytest.raises(StateSpaceTooLarge, match="50"):
        reachable_states(g, cap=50)


def test_transition_mass_must_sum_to_one():
    g = table_game({(0, a): [(0.5, 0, 0.0), (0.4, 0, 0.0)] for a in joints()})
    with pytest.raises(GameError, match="sum to"):
        tabulate(g)


def _rollout_value(spec, policy, n_episodes, length, seed):
    """Vectorised Monte-Carlo estimate of V(initial state), independent of the tabular code."""
    states = sorted(reachable_states(spec))
    idx = {s: k for k, s in enumerate(states)}
    acts = spec.all_joint_actions()
    S, A = len(states), len(acts)
    pol = np.zeros((S, A))
    nxt = np.zeros((S, A, 2), dtype=int)
    prob = np.zeros((S, A))
    rew = np.zeros((S, A))
    for s in states:
        for k, a in enumerate(acts):
            pol[idx[s], k] = policy[s].get(a, 0.0)
            out = spec.transition(s, a)
            nxt[idx[s], k, 0] = idx[out[0][1]]
            nxt[idx[s], k, 1] = idx[out[-1][1]]
            prob[idx[s], k] = out[0][0]
            rew[idx[s], k] = out[0][2]
    cum = np.cumsum(pol, axis=1)
    rng = np.random.default_rng(seed)
    cur = np.full(n_episodes, idx[spec.initial_state])
    ret = np.zeros(n_episodes)
    disc = 1.0
    for _ in range(length):
        a = (rng.random(n_episodes)[:, None] > cum[cur]).sum(axis=1)
        a = np.minimum(a, A - 1)
        ret += disc * rew[cur, a]
        first = rng.random(n_episodes) < prob[cur, a]
        cur = np.where(first, nxt[cur, a, 0], nxt[cur, a, 1])
        disc *= spec.gamma
    return ret.mean()


def test_exact_values_match_monte_carlo_rollouts():
    rng = np.random.default_rng(4)
    g = random_game(rng, n_agents=2, n_states=4, n_actions=2, gamma=0.5, stochastic=True)
    pi = uniform_policy(g)
    exact = expected_return(g, pi)
    # 40 000 episodes of 40 steps each: well over 10^6 sampled transitions
    mc = _rollout_value(g, pi, 40_000, 40, seed=9)
    assert abs(mc - exact) < 0.01


# --- visitation ---------------------------------------------------------------------


def test_visitation_single_absorbing_loop():
    g = table_game({(0, a): [(1.0, 0, 0.0)] for a in joints()}, gamma=0.9)
    rho = discounted_visitation(g, PolicyTable({0: {("WAIT", "WAIT"): 1.0}}))
    assert rho[0] == pytest.approx(10.0, abs=1e-9)


def test_visitation_two_state_alternation():
    table = {(s, a): [(1.0, 1 - s, 0.0)] for s in (0, 1) for a in joints()}
    g = table_game(table, gamma=0.5)
    pi = PolicyTable({s: {("a", "a"): 1.0} for s in (0, 1)})
    rho = discounted_visitation(g, pi)
    assert rho[0] == pytest.approx(4 / 3, abs=1e-12)
    assert rho[1] == pytest.approx(2 / 3, abs=1e-12)


# --- properties over random games ------------------------------------------------------

game_params = st.tuples(
    st.integers(0, 10_000), st.integers(2, 3), st.integers(2, 5), st.integers(2, 3), st.booleans()
)


def _game(params):
    seed, n, states, acts, terminal = params
    rng = np.random.default_rng(seed)
    g = random_game(rng, n, states, acts, gamma=0.9, stochastic=True, with_terminal=terminal)
    return g, random_policy(g, rng), random_policy(g, rng)


@settings(max_examples=40, deadline=None)
@given(game_params)
def test_wait_identity_and_bellman_consistency(params):
    g, mu, _ = _game(params)
    ev = evaluate(tabulate(g), mu)
    for si, s in enumerate(ev.tab.states):
        if not ev.tab.actions[si]:
            continue
        assert abs(ev.Q(s, g.joint_wait) - g.gamma * ev.v[si]) <= 1e-9
        q = ev.q_dict(s)
        assert abs(ev.v[si] - sum(p * q[a] for a, p in mu[s].items())) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(game_params)
def test_visitation_mass_and_performance_difference(params):
    g, mu, pi = _game(params)
    tab = tabulate(g)
    assert abs(visitation(tab, pi).sum() - 1 / (1 - g.gamma)) <= 1e-9
    gap = expected_return(g, pi) - expected_return(g, mu)
    assert abs(performance_difference(g, mu, pi) - gap) <= 1e-9


@settings(max_examples=20, deadline=None)
@given(game_params)
def test_factorised_policies_are_normalised_and_consistent(params):
    _, mu, _ = _game(params)
    mu.check(1e-12)


def test_seeded_trajectories_are_bit_identical():
    g = random_game(np.random.default_rng(3), 2, 4, 2, stochastic=True)
    acts = g.all_joint_actions()

    def run(seed):
        rng = np.random.default_rng(seed)
        s, out = g.initial_state, []
        for k in range(50):
            s, r, _ = step(g, s, acts[1 + k % (len(acts) - 1)], rng)
            out.append((s, r))
        return out

    assert run(5) == run(5)

from __future__ import annotations

import pytest

from readfb.critic import CriticStore, exact_critic
from readfb.envs import build
from readfb.envs.search import shortest_plan
from readfb.game import GameSpec, uniform_policy
from readfb.harness import train_critic
from readfb.planners import ScriptedPlanner, ScriptedPlannerConfig, StubPlanner
from readfb.refine import (
    ALPHA_MAX,
    ALPHA_MIN,
    Alpha,
    RefineConfig,
    read_j_step,
    read_s_step,
    run_episode,
)

from .conftest import joints, table_game


def solo_game():
    """One agent: 'go' ends the game with reward 1; the other moves do nothing useful."""
    def transition(s, a):
        if a == ("go",):
            return [(1.0, "done", 1.0)]
        return [(1.0, s, 0.0)]

    return GameSpec("solo", ("solo",), (("WAIT", "x", "y", "go"),), ("WAIT",), "s", transition,
                    lambda s: s == "done", gamma=0.9)


def solo_critic(scores):
    """Critic whose local advantages at 's' are exactly ``scores``."""
    table = {("s", ()): (0.0, 1)}
    table.update({("s", (a,)): (v, 1) for a, v in scores.items()})
    table[("s", ("WAIT",))] = (0.0, 1)
    return CriticStore(0.9, 1, table, ("WAIT",), False)


# --- threshold schedule -----------------------------------------------------------------


def test_alpha_schedule_trace():
    g = solo_game()
    critic = solo_critic({"x": -1.0, "y": -1.0, "go": 0.5})
    alpha = Alpha(0.2)
    action, trace = read_s_step(g, "s", StubPlanner(["x", "y", "go"]), critic, RefineConfig("read_s"), alpha)
    assert action == ("go",)
    assert trace.queries == 3
    assert [r.threshold for r in trace.records] == [0.2, 0.1, 0.05]
    assert [r.accepted for r in trace.records] == [False, False, True]
    assert trace.alpha_entry == 0.2 and alpha.value == 0.05


def test_first_proposal_above_alpha_costs_one_query():
    g = solo_game()
    alpha = Alpha(0.2)
    _, trace = read_s_step(g, "s", StubPlanner(["go"]), solo_critic({"go": 0.5}), RefineConfig("read_s"), alpha)
    assert trace.queries == 1 and trace.records[0].threshold == 0.2 and alpha.value == 0.2


def test_all_missing_falls_back_to_wait():
    g = solo_game()
    cfg = RefineConfig("read_s", max_replans=3)
    action, trace = read_s_step(g, "s", StubPlanner(["q", "r", "t"]), solo_critic({}), cfg, Alpha(0.2))
    assert action == ("WAIT",) and trace.queries == 3 and trace.exhausted == [0]
    assert all(r.score is None for r in trace.records)


def test_exhaustion_commits_best_scored_proposal():
    g = solo_game()
    cfg = RefineConfig("read_s", max_replans=3)
    critic = solo_critic({"x": -2.0, "y": -0.5, "go": -1.0})
    action, trace = read_s_step(g, "s", StubPlanner(["x", "y", "go"]), critic, cfg, Alpha(0.2))
    assert action == ("y",) and trace.exhausted == [0]


def test_alpha_is_clamped():
    a = Alpha(ALPHA_MAX)
    a.double()
    assert a.value == ALPHA_MAX
    b = Alpha(ALPHA_MIN)
    b.halve()
    assert b.value == ALPHA_MIN


def test_config_validation():
    with pytest.raises(ValueError):
        RefineConfig("read_x")
    with pytest.raises(ValueError):
        RefineConfig(alpha0=0.0)
    with pytest.raises(ValueError):
        RefineConfig(max_replans=0)


def test_alpha_shared_or_reset_across_agents():
    g = table_game({(0, a): [(1.0, 0, 1.0)] for a in joints()})
    table = {(0, ()): (0.0, 1), (0, ("a",)): (0.5, 1), (0, ("a", "a")): (0.5 + 0.07, 1)}
    critic = CriticStore(0.9, 2, table, ("WAIT", "WAIT"), False)
    # entry 0.1 doubles to 0.2; agent 0 is tested at 0.1, agent 1 at 0.05 (shared) or 0.1 (reset)
    shared = read_s_step(g, 0, StubPlanner(["a", "a"]), critic, RefineConfig("read_s", max_replans=1), Alpha(0.1))[1]
    reset = read_s_step(g, 0, StubPlanner(["a", "a"]), critic,
                        RefineConfig("read_s", max_replans=1, reset_alpha_per_agent=True), Alpha(0.1))[1]
    assert [r.threshold for r in shared.records] == [0.1, 0.05]
    assert [r.threshold for r in reset.records] == [0.1, 0.1]
    assert shared.records[1].accepted and not reset.records[1].accepted


# --- joint refinement --------------------------------------------------------------------


def test_zero_reward_game_always_exhausts():
    g = table_game({(s, a): [(1.0, 1 - s, 0.0)] for s in (0, 1) for a in joints()}, horizon=3)
    critic = exact_critic(g, uniform_policy(g))
    cfg = RefineConfig("read_j", max_replans=4)
    planner = StubPlanner([("a", "a"), ("a", "WAIT"), ("WAIT", "a"), ("a", "a")] * 3)
    res = run_episode(g, planner, critic, cfg)
    assert res.env_steps == 3 and res.queries == 12
    assert all(tr.exhausted == [None] for tr in res.traces)
    assert all(r.score == 0.0 and not r.accepted for tr in res.traces for r in tr.records)


def test_wait_proposal_is_rejected():
    g = build("sweep", "Y1_G1")
    critic = train_critic(g, episodes=300, seed=2)
    plan = shortest_plan(g)
    _, trace = read_j_step(g, g.initial_state, StubPlanner([g.joint_wait, plan[0]]), critic, RefineConfig("read_j"),
                           Alpha(0.02))
    assert trace.records[0].score <= 0 and not trace.records[0].accepted
    assert trace.action == plan[0]


# --- episodes ------------------------------------------------------------------------------


def test_optimal_joint_planner_is_accepted_every_step():
    g = build("sweep", "Y1_G1")
    critic = train_critic(g, episodes=500, seed=1)
    res = run_episode(g, ScriptedPlanner(g, ScriptedPlannerConfig()), critic, RefineConfig("read_j"))
    assert res.success and res.env_steps == 5 and res.queries == 5
    for tr in res.traces:
        assert [r.accepted for r in tr.records] == [True]
        assert tr.records[0].score > tr.records[0].threshold


def test_single_step_joint_on_sandwich_one():
    g = build("sandwich", 1)
    res = run_episode(g, ScriptedPlanner(g, ScriptedPlannerConfig()), None, RefineConfig("single_step_j"))
    assert res.success and res.env_steps == 4 and res.queries == 4


def test_single_step_replaces_illegal_components_by_wait():
    g = build("sandwich", 1)
    res = run_episode(g, StubPlanner([("PICK(ham)", "PICK(ham)")] + [g.joint_wait] * 20), None,
                      RefineConfig("single_step_j"))
    assert res.trajectory[0]["action"] == ["WAIT", "PICK(ham)"]


def test_physical_verification_with_constant_hallucination():
    g = build("sweep", "Y1_G1")
    res = run_episode(g, ScriptedPlanner(g, ScriptedPlannerConfig(p=1.0, seed=2)), None,
                      RefineConfig("physical_verification"))
    assert not res.success
    assert res.env_steps == g.horizon
    assert res.queries == res.env_steps  # every rejected execution costs a query and a step


def test_physical_verification_accounting_with_stub():
    g = build("sweep", "Y1_G1")
    plan = shortest_plan(g)
    bad = ("DUMP", "WAIT")  # the pan is empty: refused
    res = run_episode(g, StubPlanner([bad, bad] + plan), None, RefineConfig("physical_verification"))
    assert res.success and res.env_steps == 7 and res.queries == 7
    assert res.traces[0].attempts == 3


def test_episode_invariants_and_determinism():
    g = build("sweep", "Y2_G2")
    critic = train_critic(g, episodes=500, seed=0)
    for method in ("read_s", "read_j"):
        cfg = RefineConfig(method)
        runs = [run_episode(g, ScriptedPlanner(g, ScriptedPlannerConfig(p=0.3, q=0.2, seed=7)), critic, cfg, seed=7)
                for _ in range(2)]
        assert runs[0].to_jsonl() == runs[1].to_jsonl()
        res = runs[0]
        assert res.env_steps <= g.horizon
        assert res.queries >= res.env_steps
        assert res.queries == sum(len(t.records) for t in res.traces)
        for tr in res.traces:
            assert len(tr.records) <= g.max_replans * g.n_agents
            for r in tr.records:
                if r.accepted:
                    assert r.score is not None and r.score > r.threshold
        if res.success:
            assert g.is_terminal(res.trajectory[-1]["next_state"])


def test_critic_required_for_refinement():
    g = solo_game()
    with pytest.raises(ValueError, match="needs a critic"):
        run_episode(g, StubPlanner([]), None, RefineConfig("read_j"))

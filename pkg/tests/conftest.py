from __future__ import annotations

import itertools

import numpy as np
import pytest

from readfb.game import GameSpec


def table_game(table, *, n_agents=2, actions=("WAIT", "a"), initial=0, terminal=(), gamma=0.9, horizon=15):
    """A hand-written game: ``table[(s, joint)] = [(p, s', r), ...]``; joint WAIT is a free self-loop."""
    wait = tuple("WAIT" for _ in range(n_agents))

    def transition(s, a):
        if a == wait:
            return [(1.0, s, 0.0)]
        return table[(s, a)]

    return GameSpec(
        name="table",
        agents=tuple(f"p{i}" for i in range(n_agents)),
        action_sets=tuple(tuple(actions) for _ in range(n_agents)),
        wait=wait,
        initial_state=initial,
        transition=transition,
        is_terminal=lambda s: s in terminal,
        gamma=gamma,
        horizon=horizon,
    )


def joints(n_agents=2, actions=("WAIT", "a")):
    return list(itertools.product(actions, repeat=n_agents))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

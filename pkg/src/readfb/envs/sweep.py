"""Sweep floor: a dustpan holder (Alice) and a broom holder (Bob) clear target-coloured cubes.

State ``(alice, bob, table, pan_targets, pan_others)``: each robot's position is
the name of a cube on the table or ``None`` (home); ``table`` is the sorted
tuple of cubes still on the table; the dustpan only needs counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

from ..game import DEFAULT_STATE_CAP, GameSpec, StateSpaceTooLarge

LEVELS = {
    # level: (yellow targets, green targets, other cubes)
    "Y1_G1": (1, 1, ("red", "blue", "pink", "purple", "orange")),
    "Y1_G2": (1, 2, ("red", "blue", "pink", "purple")),
    "Y2_G2": (2, 2, ("red", "blue", "pink")),
    "Y2_G3": (2, 3, ("red", "blue", "pink", "purple")),
    "Y3_G3": (3, 3, ("red", "blue", "pink")),
}
TARGET_COLORS = ("yellow", "green")
WAIT = "WAIT"


@dataclass(frozen=True)
class SweepConfig:
    level: str = "Y1_G1"
    gamma: float = 0.95
    horizon: int = 15
    max_replans: int = 15

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown sweep level {self.level!r}; expected one of {sorted(LEVELS)}")

    def cubes(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        ny, ng, others = LEVELS[self.level]
        targets = tuple(f"yellow_{k}" for k in range(1, ny + 1)) + tuple(f"green_{k}" for k in range(1, ng + 1))
        return targets, tuple(f"{c}_1" for c in others)


def _move(c: str) -> str:
    return f"MOVE({c})"


def _sweep(c: str) -> str:
    return f"SWEEP({c})"


def _arg(action: str) -> str:
    return action[action.index("(") + 1 : -1]


def state_count_bound(n_targets: int, n_others: int) -> int:
    total = 0
    for kt in range(n_targets + 1):
        for ko in range(n_others + 1):
            on_table = n_targets + n_others - kt - ko
            total += comb(n_targets, kt) * comb(n_others, ko) * (on_table + 1) ** 2 * (kt + 1) * (ko + 1)
    return total


def build_sweep(cfg: SweepConfig | str = "Y1_G1") -> GameSpec:
    if isinstance(cfg, str):
        cfg = SweepConfig(cfg)
    targets, others = cfg.cubes()
    target_set = frozenset(targets)
    cubes = tuple(sorted(targets + others))
    bound = state_count_bound(len(targets), len(others))
    if bound > DEFAULT_STATE_CAP:
        raise StateSpaceTooLarge(DEFAULT_STATE_CAP)

    alice_actions = tuple(_move(c) for c in cubes) + ("DUMP", WAIT)
    bob_actions = tuple(_move(c) for c in cubes) + tuple(_sweep(c) for c in cubes) + (WAIT,)

    def legal(s, i):
        alice, bob, table, pt, po = s
        if i == 0:
            out = [_move(c) for c in table]
            if pt + po > 0:
                out.append("DUMP")
        else:
            out = [_move(c) for c in table]
            if bob is not None:
                out.append(_sweep(bob))
        out.append(WAIT)
        return tuple(out)

    def transition(s, a):
        alice, bob, table, pt, po = s
        aa, ba = a
        reward = 0.0
        new_alice, new_bob = alice, bob
        if aa.startswith("MOVE"):
            new_alice = _arg(aa)
        elif aa == "DUMP":
            reward += pt
            pt, po = 0, 0
        if ba.startswith("MOVE"):
            new_bob = _arg(ba)
        elif ba.startswith("SWEEP"):
            c = _arg(ba)
            if alice == c and bob == c and aa == WAIT:
                table = tuple(x for x in table if x != c)
                if c in target_set:
                    pt += 1
                    reward += 1.0
                else:
                    po += 1
                new_alice = new_bob = None
        return [(1.0, (new_alice, new_bob, table, pt, po), reward)]

    def is_terminal(s):
        return s[3] == 0 and not any(c in target_set for c in s[2])

    def script(s):
        alice, bob, table, pt, po = s
        remaining = [c for c in table if c in target_set]
        if not remaining:
            return ("DUMP" if pt + po else WAIT, WAIT)
        c = remaining[0]
        if alice == c and bob == c:
            return (WAIT, _sweep(c))
        return (WAIT if alice == c else _move(c), WAIT if bob == c else _move(c))

    def render(s):
        alice, bob, table, pt, po = s
        return (
            f"Cubes on the table: {', '.join(table) or 'none'}. "
            f"Targets: {', '.join(c for c in table if c in target_set) or 'none'}. "
            f"Alice (dustpan) is at {alice or 'home'}; Bob (broom) is at {bob or 'home'}. "
            f"Dustpan holds {pt} target and {po} other cubes."
        )

    return GameSpec(
        name=f"sweep/{cfg.level}",
        agents=("Alice", "Bob"),
        action_sets=(alice_actions, bob_actions),
        wait=(WAIT, WAIT),
        initial_state=(None, None, cubes, 0, 0),
        transition=transition,
        is_terminal=is_terminal,
        gamma=cfg.gamma,
        horizon=cfg.horizon,
        max_replans=cfg.max_replans,
        legal=legal,
        render=render,
        script=script,
        info={"task": "sweep", "level": cfg.level, "targets": targets, "others": others, "state_bound": bound},
    )

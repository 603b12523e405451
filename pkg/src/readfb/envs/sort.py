"""Sort cubes: three arms with overlapping reach move three cubes onto their target panels.

State ``(positions, reached)``: the panel of each cube (blue, pink, yellow) and
flags recording which cubes have already earned their placement reward.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..game import GameSpec
from .search import DistanceScript

WAIT = "WAIT"
CUBES = ("blue_square", "pink_polygon", "yellow_trapezoid")
TARGETS = (2, 4, 6)
REACH = ((1, 2, 3), (3, 4, 5), (5, 6, 7))
PANELS = tuple(range(1, 8))

# initial panel of (blue, pink, yellow); total distance to target grows with the level
LEVELS = {
    1: (1, 5, 7),
    2: (4, 5, 7),
    3: (5, 3, 7),
    4: (7, 1, 5),
    5: (7, 1, 3),
}


@dataclass(frozen=True)
class SortConfig:
    level: int = 1
    gamma: float = 0.95
    horizon: int = 15
    max_replans: int = 10

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown sort level {self.level!r}; expected 1-5")


def pick_place(cube: str, panel: int) -> str:
    return f"PICK({cube})PLACE(panel{panel})"


def _parse(action: str) -> tuple[int, int]:
    cube = action[5 : action.index(")")]
    panel = int(action[action.rindex("panel") + 5 : -1])
    return CUBES.index(cube), panel


def total_distance(positions) -> int:
    return sum(abs(p - t) for p, t in zip(positions, TARGETS))


def build_sort(cfg: SortConfig | int = 1) -> GameSpec:
    if isinstance(cfg, int):
        cfg = SortConfig(cfg)
    action_sets = tuple(
        tuple(pick_place(c, p) for c in CUBES for p in reach) + (WAIT,) for reach in REACH
    )

    def allowed(cube_idx: int, panel: int, positions) -> bool:
        if panel in positions:
            return False
        return all(panel != TARGETS[j] for j in range(3) if j != cube_idx)

    def legal(s, i):
        positions, _ = s
        reach = REACH[i]
        out = [
            pick_place(CUBES[c], p)
            for c in range(3)
            if positions[c] in reach
            for p in reach
            if allowed(c, p, positions)
        ]
        out.append(WAIT)
        return tuple(out)

    def transition(s, a):
        positions, reached = s
        pos = list(positions)
        moved = set()
        for act in a:
            if act == WAIT:
                continue
            c, p = _parse(act)
            # a second arm touching the same cube, or a panel taken earlier this step, is a no-op
            if c in moved or p in pos:
                continue
            pos[c] = p
            moved.add(c)
        reward = 0.0
        flags = list(reached)
        for c in range(3):
            if pos[c] == TARGETS[c] and not flags[c]:
                flags[c] = True
                reward += 1.0
        return [(1.0, (tuple(pos), tuple(flags)), reward)]

    def is_terminal(s):
        return all(p == t for p, t in zip(s[0], TARGETS))

    def render(s):
        positions, _ = s
        parts = [f"{c} is on panel{p} (target panel{t})" for c, p, t in zip(CUBES, positions, TARGETS)]
        return "; ".join(parts) + ". Alice reaches panels 1-3, Bob 3-5, Chad 5-7."

    init_pos = LEVELS[cfg.level]
    init = (init_pos, tuple(p == t for p, t in zip(init_pos, TARGETS)))
    spec = GameSpec(
        name=f"sort/{cfg.level}",
        agents=("Alice", "Bob", "Chad"),
        action_sets=action_sets,
        wait=(WAIT, WAIT, WAIT),
        initial_state=init,
        transition=transition,
        is_terminal=is_terminal,
        gamma=cfg.gamma,
        horizon=cfg.horizon,
        max_replans=cfg.max_replans,
        legal=legal,
        render=render,
        info={"task": "sort", "level": cfg.level, "distance": total_distance(init_pos)},
    )
    object.__setattr__(spec, "script", DistanceScript(spec))
    return spec

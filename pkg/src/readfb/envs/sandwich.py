"""Make sandwich: Chad (right side) and Dave (left side) stack ingredients in recipe order.

State ``(chad_holding, dave_holding, stack)``.  A food that is neither held nor
on the stack lies on its owner's side of the table.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..game import GameSpec

WAIT = "WAIT"
BOARD = "cutting_board"
TABLE = "table"

_SHARED_RIGHT = ("bread_slice1", "cheese", "tomato", "bread_slice2")
_SHARED_LEFT = ("ham", "lettuce", "bacon")
LEVELS = {
    1: (_SHARED_RIGHT, _SHARED_LEFT, ("bread_slice1", "ham", "bread_slice2")),
    2: (_SHARED_RIGHT, _SHARED_LEFT, ("bread_slice1", "ham", "cheese", "lettuce", "bread_slice2")),
    3: (
        _SHARED_RIGHT,
        _SHARED_LEFT,
        ("bread_slice1", "ham", "cheese", "lettuce", "tomato", "bacon", "bread_slice2"),
    ),
    4: (
        ("bread_slice1", "beef_patty", "tomato", "onion", "bread_slice2"),
        ("cheese", "lettuce", "pickle", "bacon"),
        (
            "bread_slice1",
            "cheese",
            "beef_patty",
            "lettuce",
            "tomato",
            "pickle",
            "onion",
            "bacon",
            "bread_slice2",
        ),
    ),
}


@dataclass(frozen=True)
class SandwichConfig:
    level: int = 1
    gamma: float = 0.95
    horizon: int = 15
    max_replans: int = 15

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown sandwich level {self.level!r}; expected 1-4")

    @property
    def right(self) -> tuple[str, ...]:
        return LEVELS[self.level][0]

    @property
    def left(self) -> tuple[str, ...]:
        return LEVELS[self.level][1]

    @property
    def recipe(self) -> tuple[str, ...]:
        return LEVELS[self.level][2]


def pick(food: str) -> str:
    return f"PICK({food})"


def put(food: str, target: str) -> str:
    return f"PUT({food},{target})"


def _parse_put(action: str) -> tuple[str, str]:
    food, target = action[4:-1].split(",")
    return food, target


def build_sandwich(cfg: SandwichConfig | int = 1) -> GameSpec:
    if isinstance(cfg, int):
        cfg = SandwichConfig(cfg)
    sides = (cfg.right, cfg.left)  # agent 0 = Chad (right), agent 1 = Dave (left)
    recipe = cfg.recipe
    foods = cfg.right + cfg.left
    targets = (BOARD, TABLE) + foods
    action_sets = tuple(
        tuple(pick(f) for f in side) + tuple(put(f, t) for f in side for t in targets if t != f) + (WAIT,)
        for side in sides
    )

    def top(stack):
        return stack[-1] if stack else BOARD

    def legal(s, i):
        held, stack = s[i], s[2]
        if held is None:
            other = s[1 - i]
            free = [f for f in sides[i] if f not in stack and f != other]
            return tuple(pick(f) for f in free) + (WAIT,)
        return (put(held, top(stack)), put(held, TABLE), WAIT)

    def transition(s, a):
        holding = [s[0], s[1]]
        stack = s[2]
        start_top = top(stack)
        reward = 0.0
        for i in (0, 1):
            act = a[i]
            if act.startswith("PICK"):
                holding[i] = act[5:-1]
            elif act.startswith("PUT"):
                food, target = _parse_put(act)
                if target == TABLE:
                    holding[i] = None
                elif target == start_top and top(stack) == start_top:
                    # only the recipe's next ingredient sticks; anything else stays in hand
                    if len(stack) < len(recipe) and recipe[len(stack)] == food:
                        stack = stack + (food,)
                        holding[i] = None
                        reward += 1.0
        return [(1.0, (holding[0], holding[1], stack), reward)]

    def is_terminal(s):
        return s[2] == recipe

    def script(s):
        chad, dave, stack = s
        nxt = recipe[len(stack)] if len(stack) < len(recipe) else None
        after = recipe[len(stack) + 1] if len(stack) + 1 < len(recipe) else None
        out = []
        for i, held in enumerate((chad, dave)):
            if held is not None:
                if held == nxt:
                    out.append(put(held, top(stack)))
                elif held == after:
                    out.append(WAIT)
                else:
                    out.append(put(held, TABLE))
            else:
                want = None
                for f in (nxt, after):
                    if f is not None and f in sides[i] and f not in (chad, dave):
                        want = f
                        break
                # the next ingredient held by the partner: fetch the one after it
                out.append(pick(want) if want is not None else WAIT)
        return tuple(out)

    def render(s):
        chad, dave, stack = s
        lying = [f for f in foods if f not in stack and f not in (chad, dave)]
        return (
            f"Recipe: {', '.join(recipe)}. "
            f"Stack on the cutting board: {', '.join(stack) or 'empty'}. "
            f"Chad holds {chad or 'nothing'}; Dave holds {dave or 'nothing'}. "
            f"On the right side: {', '.join(f for f in lying if f in cfg.right) or 'nothing'}; "
            f"on the left side: {', '.join(f for f in lying if f in cfg.left) or 'nothing'}."
        )

    return GameSpec(
        name=f"sandwich/{cfg.level}",
        agents=("Chad", "Dave"),
        action_sets=action_sets,
        wait=(WAIT, WAIT),
        initial_state=(None, None, ()),
        transition=transition,
        is_terminal=is_terminal,
        gamma=cfg.gamma,
        horizon=cfg.horizon,
        max_replans=cfg.max_replans,
        legal=legal,
        render=render,
        script=script,
        info={"task": "sandwich", "level": cfg.level, "recipe": recipe, "right": cfg.right, "left": cfg.left},
    )

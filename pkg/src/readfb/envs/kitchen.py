"""Grid kitchen with one pot: cook a two-onion soup and deliver it.

Layout legend (one character per cell):

====  ===============================================
X     counter (blocks movement, holds nothing)
' '   floor
O     onion source
D     dish source
P     pot
S     serving counter
=     pass counter (holds one onion or one dish)
A, B  floor cell where agent 0 / agent 1 starts
====  ===============================================

State ``(pos0, ori0, pos1, ori1, held0, held1, pot, counters)`` where ``pot`` is
one of ``0, 1, 2, cook2, cook1, ready, spent`` and ``counters`` lists the item on
each pass counter in reading order.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from ..game import DEFAULT_STATE_CAP, GameSpec, StateSpaceTooLarge
from .search import DistanceScript

ACTIONS = ("north", "south", "east", "west", "interact", "stay")
WAIT = "stay"
DIRS = {"north": (-1, 0), "south": (1, 0), "east": (0, 1), "west": (0, -1)}
ORIENT = {"north": "N", "south": "S", "east": "E", "west": "W"}
STEP = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
POT_STATES = (0, 1, 2, "cook2", "cook1", "ready", "spent")
LAYOUTS = {"cramped_room": 20, "forced_coordination": 25}
ONION_REWARD = 0.2
COOK_REWARD = 0.2
PLATE_REWARD = 0.2
DELIVERY_REWARD = 1.0


@dataclass(frozen=True)
class KitchenConfig:
    layout: str = "cramped_room"
    gamma: float = 0.95
    horizon: int | None = None
    max_replans: int = 15

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown kitchen layout {self.layout!r}; expected one of {sorted(LAYOUTS)}")

    @property
    def step_limit(self) -> int:
        return self.horizon if self.horizon is not None else LAYOUTS[self.layout]


@dataclass(frozen=True)
class Layout:
    grid: tuple[str, ...]
    starts: tuple[tuple[int, int], tuple[int, int]]
    pass_counters: tuple[tuple[int, int], ...]

    def cell(self, rc: tuple[int, int]) -> str:
        r, c = rc
        if not (0 <= r < len(self.grid) and 0 <= c < len(self.grid[r])):
            return "X"
        ch = self.grid[r][c]
        return " " if ch in "AB" else ch

    def floor(self) -> list[tuple[int, int]]:
        return [(r, c) for r, row in enumerate(self.grid) for c, _ in enumerate(row) if self.cell((r, c)) == " "]


def load_layout(name: str) -> Layout:
    text = resources.files(__package__).joinpath("layouts", f"{name}.txt").read_text(encoding="utf-8")
    return parse_layout(text)


def parse_layout(text: str) -> Layout:
    grid = tuple(line.rstrip("\n") for line in text.splitlines() if line.strip("\n"))
    width = max(len(r) for r in grid)
    grid = tuple(r.ljust(width) for r in grid)
    starts = {}
    passes = []
    for r, row in enumerate(grid):
        for c, ch in enumerate(row):
            if ch in "AB":
                starts[ch] = (r, c)
            elif ch == "=":
                passes.append((r, c))
            elif ch not in "XODPS ":
                raise ValueError(f"unknown layout character {ch!r} at row {r}, column {c}")
    if set(starts) != {"A", "B"}:
        raise ValueError("layout must place exactly one A and one B")
    return Layout(grid, (starts["A"], starts["B"]), tuple(passes))


def reachable_cells(layout: Layout, start: tuple[int, int]) -> set[tuple[int, int]]:
    seen = {start}
    stack = [start]
    while stack:
        r, c = stack.pop()
        for dr, dc in STEP.values():
            nb = (r + dr, c + dc)
            if nb not in seen and layout.cell(nb) == " ":
                seen.add(nb)
                stack.append(nb)
    return seen


def state_count_bound(layout: Layout) -> int:
    cells = [reachable_cells(layout, s) for s in layout.starts]
    pairs = sum(1 for a in cells[0] for b in cells[1] if a != b)
    return pairs * 16 * 4 * 4 * len(POT_STATES) * 3 ** len(layout.pass_counters)


def build_kitchen(cfg: KitchenConfig | str = "cramped_room") -> GameSpec:
    if isinstance(cfg, str):
        cfg = KitchenConfig(cfg)
    layout = load_layout(cfg.layout)
    bound = state_count_bound(layout)
    if bound > DEFAULT_STATE_CAP:
        raise StateSpaceTooLarge(DEFAULT_STATE_CAP)
    pass_index = {rc: k for k, rc in enumerate(layout.pass_counters)}

    def transition(s, a):
        pos = [s[0], s[2]]
        ori = [s[1], s[3]]
        held = [s[4], s[5]]
        pot = s[6]
        counters = list(s[7])
        if a == (WAIT, WAIT):
            return [(1.0, s, 0.0)]
        reward = 0.0
        # the cooking clock only runs on steps where somebody acts
        if pot == "cook2":
            pot = "cook1"
        elif pot == "cook1":
            pot = "ready"
        # movement: blocked moves only turn the agent
        want = list(pos)
        for i in (0, 1):
            if a[i] in DIRS:
                ori[i] = ORIENT[a[i]]
                dr, dc = DIRS[a[i]]
                dest = (pos[i][0] + dr, pos[i][1] + dc)
                if layout.cell(dest) == " ":
                    want[i] = dest
        if want[0] == want[1] or (want[0] == pos[1] and want[1] == pos[0]):
            want = list(pos)
        changed = True
        while changed:
            changed = False
            for i in (0, 1):
                j = 1 - i
                if want[i] != pos[i] and want[i] == want[j]:
                    want[i] = pos[i]
                    changed = True
        pos = want
        delivered = False
        for i in (0, 1):
            if a[i] != "interact":
                continue
            dr, dc = STEP[ori[i]]
            front = (pos[i][0] + dr, pos[i][1] + dc)
            kind = layout.cell(front)
            h = held[i]
            if kind == "O" and h is None:
                held[i] = "onion"
            elif kind == "D" and h is None:
                held[i] = "dish"
            elif kind == "P":
                if h == "onion" and pot in (0, 1):
                    pot += 1
                    held[i] = None
                    reward += ONION_REWARD
                elif h is None and pot == 2:
                    pot = "cook2"
                    reward += COOK_REWARD
                elif h == "dish" and pot == "ready":
                    pot = "spent"
                    held[i] = "soup"
                    reward += PLATE_REWARD
            elif kind == "S" and h == "soup":
                held[i] = None
                delivered = True
                reward += DELIVERY_REWARD
            elif kind == "=":
                k = pass_index[front]
                if h in ("onion", "dish") and counters[k] is None:
                    counters[k] = h
                    held[i] = None
                elif h is None and counters[k] is not None:
                    held[i] = counters[k]
                    counters[k] = None
        nxt = (pos[0], ori[0], pos[1], ori[1], held[0], held[1], "delivered" if delivered else pot, tuple(counters))
        return [(1.0, nxt, round(reward, 10))]

    def is_terminal(s):
        return s[6] == "delivered"

    def render(s):
        rows = [list(r.replace("A", " ").replace("B", " ")) for r in layout.grid]
        for k, (r, c) in enumerate(layout.pass_counters):
            if s[7][k] is not None:
                rows[r][c] = "o" if s[7][k] == "onion" else "d"
        for i, p in enumerate((s[0], s[2])):
            rows[p[0]][p[1]] = str(i)
        grid = "\n".join("".join(r) for r in rows)
        return (
            f"{grid}\nagent0 at {s[0]} facing {s[1]} holding {s[4] or 'nothing'}; "
            f"agent1 at {s[2]} facing {s[3]} holding {s[5] or 'nothing'}; pot: {s[6]}."
        )

    (r0, r1) = layout.starts
    init = (r0, "N", r1, "N", None, None, 0, tuple(None for _ in layout.pass_counters))
    spec = GameSpec(
        name=f"kitchen/{cfg.layout}",
        agents=("agent0", "agent1"),
        action_sets=(ACTIONS, ACTIONS),
        wait=(WAIT, WAIT),
        initial_state=init,
        transition=transition,
        is_terminal=is_terminal,
        gamma=cfg.gamma,
        horizon=cfg.step_limit,
        max_replans=cfg.max_replans,
        render=render,
        info={"task": "kitchen", "level": cfg.layout, "layout": layout, "state_bound": bound},
    )
    object.__setattr__(spec, "script", DistanceScript(spec))
    return spec

"""Breadth-first search utilities over deterministic games."""

from __future__ import annotations

from collections import deque

from ..game import DEFAULT_STATE_CAP, GameError, GameSpec, JointAction, State, StateSpaceTooLarge


def _successor(spec: GameSpec, s: State, a: JointAction) -> State:
    outcomes = spec.transition(s, a)
    if len(outcomes) != 1:
        raise GameError("breadth-first search needs deterministic transitions")
    return outcomes[0][1]


def min_steps(spec: GameSpec, start: State | None = None, cap: int = DEFAULT_STATE_CAP) -> int | None:
    """Fewest joint steps from ``start`` to a terminal state (``None`` if unreachable)."""
    start = spec.initial_state if start is None else start
    if spec.is_terminal(start):
        return 0
    seen = {start}
    frontier = [start]
    depth = 0
    while frontier:
        depth += 1
        nxt_frontier = []
        for s in frontier:
            for a in spec.legal_joint_actions(s):
                nxt = _successor(spec, s, a)
                if nxt in seen:
                    continue
                if spec.is_terminal(nxt):
                    return depth
                seen.add(nxt)
                if len(seen) > cap:
                    raise StateSpaceTooLarge(cap)
                nxt_frontier.append(nxt)
        frontier = nxt_frontier
    return None


def shortest_plan(spec: GameSpec, start: State | None = None, cap: int = DEFAULT_STATE_CAP) -> list[JointAction] | None:
    """A shortest joint-action sequence from ``start`` to a terminal state."""
    start = spec.initial_state if start is None else start
    if spec.is_terminal(start):
        return []
    parent: dict[State, tuple[State, JointAction] | None] = {start: None}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for a in spec.legal_joint_actions(s):
            nxt = _successor(spec, s, a)
            if nxt in parent:
                continue
            parent[nxt] = (s, a)
            if spec.is_terminal(nxt):
                plan = []
                cur = nxt
                while parent[cur] is not None:
                    prev, act = parent[cur]
                    plan.append(act)
                    cur = prev
                return plan[::-1]
            if len(parent) > cap:
                raise StateSpaceTooLarge(cap)
            queue.append(nxt)
    return None


class DistanceScript:
    """Optimal joint action from a backward breadth-first distance table.

    The table is built lazily on first use over all states reachable from the
    initial state.  States outside that set fall back to a forward search.
    """

    def __init__(self, spec: GameSpec, cap: int = DEFAULT_STATE_CAP):
        self.spec = spec
        self.cap = cap
        self._dist: dict[State, int] | None = None

    def distances(self) -> dict[State, int]:
        if self._dist is None:
            self._dist = distance_table(self.spec, cap=self.cap)
        return self._dist

    def __call__(self, state: State) -> JointAction:
        spec = self.spec
        dist = self.distances()
        if state not in dist:
            plan = shortest_plan(spec, state, self.cap)
            if not plan:
                return spec.joint_wait
            return plan[0]
        best, best_d = None, None
        for a in spec.legal_joint_actions(state):
            nxt = _successor(spec, state, a)
            d = 0 if spec.is_terminal(nxt) else dist.get(nxt)
            if d is None:
                continue
            if best_d is None or d < best_d:
                best, best_d = a, d
        return best if best is not None else spec.joint_wait


def distance_table(spec: GameSpec, start: State | None = None, cap: int = DEFAULT_STATE_CAP) -> dict[State, int]:
    """Steps-to-go for every state reachable from ``start`` that can still reach a terminal state."""
    start = spec.initial_state if start is None else start
    preds: dict[State, list[State]] = {start: []}
    order = [start]
    queue = deque([start])
    terminals = []
    while queue:
        s = queue.popleft()
        if spec.is_terminal(s):
            terminals.append(s)
            continue
        for a in spec.legal_joint_actions(s):
            nxt = _successor(spec, s, a)
            if nxt not in preds:
                preds[nxt] = []
                order.append(nxt)
                if len(order) > cap:
                    raise StateSpaceTooLarge(cap)
                queue.append(nxt)
            if nxt != s:
                preds[nxt].append(s)
    dist = {t: 0 for t in terminals}
    queue = deque(terminals)
    while queue:
        s = queue.popleft()
        for p in preds[s]:
            if p not in dist:
                dist[p] = dist[s] + 1
                queue.append(p)
    return dist

"""RandDistShift (RDS) and SwordShieldMonster (SSM) task factories.

Coordinates are ``(x, y)`` with ``x`` growing rightwards and ``y`` growing
downwards. Facing directions index :data:`DIRECTIONS`: 0 right, 1 down,
2 left, 3 up, so a clockwise turn adds one.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from .errors import GenerationError, UsageError
from .mdp import TabularMdp

DIRECTIONS = ((1, 0), (0, 1), (-1, 0), (0, -1))
FACING_GLYPHS = ">v<^"
SITUATIONS = ((0, 0), (0, 1), (1, 0), (1, 1))
MAX_RESAMPLES = 64

Cell = tuple[int, int]
Encoding = tuple[int, int, int, int, int, int]

# encoding of the absorbing state entered by stepping onto lava
LAVA_SINK: Encoding = (-1, -1, -1, 0, 0, 0)


class Kind(str, Enum):
    RDS = "rds"
    SSM = "ssm"


class ActionSpace(str, Enum):
    TURN_OR_FORWARD = "tof"
    ABSOLUTE_DIRECTION = "abs"
    TURN_AND_FORWARD = "taf"

    @property
    def n_actions(self) -> int:
        return 3 if self is ActionSpace.TURN_OR_FORWARD else 4

    @property
    def has_facing(self) -> bool:
        return self is not ActionSpace.ABSOLUTE_DIRECTION


@dataclass(frozen=True)
class TaskSpec:
    kind: Kind = Kind.RDS
    width: int = 8
    height: int = 8
    difficulty: float = 0.4
    seed: int = 0
    action_space: ActionSpace = ActionSpace.ABSOLUTE_DIRECTION
    action_noise: float = 0.0
    orientation: str = "left-right"

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "action_space", ActionSpace(self.action_space))
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"difficulty must lie in [0, 1], got {self.difficulty}")
        if not 0.0 <= self.action_noise <= 1.0:
            raise ValueError(f"action_noise must lie in [0, 1], got {self.action_noise}")
        if self.width < 4 or self.height < 4:
            raise ValueError("width and height must be at least 4")
        if self.orientation not in ("left-right", "top-bottom"):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if self.kind is Kind.SSM and self.action_space is not ActionSpace.ABSOLUTE_DIRECTION:
            raise ValueError("SSM supports the absolute-direction action space only")
        if self.kind is Kind.SSM and self.orientation != "left-right":
            raise ValueError("orientation applies to RDS only")


@dataclass(frozen=True)
class GridLayout:
    width: int
    height: int
    lava: frozenset = frozenset()
    goal: Cell | None = None
    spawn: tuple[Cell, ...] = ()
    sword: Cell | None = None
    shield: Cell | None = None
    monster: Cell | None = None
    kind: Kind = Kind.RDS
    action_space: ActionSpace = ActionSpace.ABSOLUTE_DIRECTION
    action_noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lava", frozenset(map(tuple, self.lava)))
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "action_space", ActionSpace(self.action_space))

    @property
    def n_actions(self) -> int:
        return self.action_space.n_actions

    @property
    def target_cell(self) -> Cell:
        """Cell whose entry ends the episode with success (goal or monster)."""
        return self.monster if self.kind is Kind.SSM else self.goal

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def cells(self) -> Iterable[Cell]:
        for y in range(self.height):
            for x in range(self.width):
                yield (x, y)


@dataclass(frozen=True)
class EnvState:
    pos: Cell
    facing: int | None = None
    sword: bool = False
    shield: bool = False
    terminal: bool = False

    @property
    def situation(self) -> tuple[int, int]:
        return int(self.sword), int(self.shield)


def encode(layout: GridLayout, state: EnvState) -> Encoding:
    """Integer tuple naming ``state``; terminal states drop their facing."""
    if state.terminal and state.pos in layout.lava:
        return LAVA_SINK
    facing = -1 if state.facing is None or state.terminal else state.facing
    x, y = state.pos
    return (x, y, facing, int(state.sword), int(state.shield), 0)


# ----------------------------------------------------------------------------
# generation


def _neighbors(cell: Cell, width: int, height: int):
    x, y = cell
    for dx, dy in DIRECTIONS:
        nx, ny = x + dx, y + dy
        if 0 <= nx < width and 0 <= ny < height:
            yield (nx, ny)


def _reachable(start: Cell, blocked: set, width: int, height: int) -> set:
    seen = {start}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        for nxt in _neighbors(cell, width, height):
            if nxt not in seen and nxt not in blocked:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def _lattice_path(a: Cell, b: Cell, rng: np.random.Generator) -> list[Cell]:
    """Random shortest 4-connected path from ``a`` to ``b`` (inclusive)."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    moves = [(int(np.sign(dx)), 0)] * abs(dx) + [(0, int(np.sign(dy)))] * abs(dy)
    order = rng.permutation(len(moves))
    path = [a]
    x, y = a
    for i in order:
        x, y = x + moves[i][0], y + moves[i][1]
        path.append((x, y))
    return path


def _sample_lava(candidates: list[Cell], difficulty: float, rng: np.random.Generator) -> set:
    draws = rng.random(len(candidates))
    return {c for c, u in zip(candidates, draws) if u < difficulty}


def _generate_rds(spec: TaskSpec, rng: np.random.Generator) -> GridLayout:
    w, h = spec.width, spec.height
    if spec.orientation == "left-right":
        ys = rng.integers(0, h, size=2)
        if rng.random() < 0.5:
            agent, goal = (0, int(ys[0])), (w - 1, int(ys[1]))
        else:
            agent, goal = (w - 1, int(ys[0])), (0, int(ys[1]))
        candidates = [(x, y) for y in range(h) for x in range(1, w - 1)]
    else:
        xs = rng.integers(0, w, size=2)
        if rng.random() < 0.5:
            agent, goal = (int(xs[0]), 0), (int(xs[1]), h - 1)
        else:
            agent, goal = (int(xs[0]), h - 1), (int(xs[1]), 0)
        candidates = [(x, y) for y in range(1, h - 1) for x in range(w)]

    for _ in range(MAX_RESAMPLES):
        lava = _sample_lava(candidates, spec.difficulty, rng)
        if goal in _reachable(agent, lava, w, h):
            break
    else:
        lava -= set(_lattice_path(agent, goal, rng))
    # the goal is terminal, so cells only reachable through it do not count
    component = _reachable(agent, lava | {goal}, w, h)
    if not any(n in component for n in _neighbors(goal, w, h)):
        raise GenerationError("path guarantee could not be established")
    # enclosed pockets would be non-terminal states outside the agent's component
    lava = {
        c for c in ((x, y) for y in range(h) for x in range(w))
        if c not in component and c != goal
    }
    return GridLayout(
        w, h, frozenset(lava), goal, (agent,), kind=Kind.RDS,
        action_space=spec.action_space, action_noise=spec.action_noise,
    )


def _generate_ssm(spec: TaskSpec, rng: np.random.Generator) -> GridLayout:
    w, h = spec.width, spec.height
    if rng.random() < 0.5:
        agent, monster = (0, int(rng.integers(h))), (w - 1, int(rng.integers(h)))
    else:
        agent, monster = (w - 1, int(rng.integers(h))), (0, int(rng.integers(h)))
    interior = [(x, y) for y in range(h) for x in range(1, w - 1)]
    picks = rng.choice(len(interior), size=2, replace=False)
    sword, shield = interior[int(picks[0])], interior[int(picks[1])]
    candidates = [c for c in interior if c not in (sword, shield)]

    def satisfied(lava: set) -> bool:
        comp = _reachable(agent, lava | {monster}, w, h)
        return (
            sword in comp
            and shield in comp
            and any(n in comp for n in _neighbors(monster, w, h))
        )

    for _ in range(MAX_RESAMPLES):
        lava = _sample_lava(candidates, spec.difficulty, rng)
        if satisfied(lava):
            break
    else:
        for a, b in ((agent, sword), (sword, shield), (shield, monster)):
            lava -= set(_lattice_path(a, b, rng))
    if not satisfied(lava):
        raise GenerationError("path guarantee could not be established")
    component = _reachable(agent, lava | {monster}, w, h)
    lava = {
        c for c in ((x, y) for y in range(h) for x in range(w))
        if c not in component and c != monster
    }
    return GridLayout(
        w, h, frozenset(lava), monster, (agent,), sword=sword, shield=shield,
        monster=monster, kind=Kind.SSM, action_space=spec.action_space,
        action_noise=spec.action_noise,
    )


def generate_task(spec: TaskSpec) -> GridLayout:
    """Sample a layout; the same spec always yields the same layout."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind is Kind.RDS:
        return _generate_rds(spec, rng)
    return _generate_ssm(spec, rng)


# ----------------------------------------------------------------------------
# dynamics


def _advance(layout: GridLayout, state: EnvState, action: int) -> tuple[EnvState, float]:
    space = layout.action_space
    if not 0 <= action < space.n_actions:
        raise ValueError(f"action {action} out of range for {space.value}")
    facing = state.facing
    move = True
    if space is ActionSpace.ABSOLUTE_DIRECTION:
        heading = action
    elif space is ActionSpace.TURN_OR_FORWARD:
        if action == 0:
            facing, move = (facing - 1) % 4, False
        elif action == 1:
            facing, move = (facing + 1) % 4, False
        heading = facing
    else:
        facing = (facing + (0, 1, -1, 2)[action]) % 4
        heading = facing

    if not move:
        return EnvState(state.pos, facing, state.sword, state.shield), 0.0
    dx, dy = DIRECTIONS[heading]
    cell = (state.pos[0] + dx, state.pos[1] + dy)
    if not layout.in_bounds(cell):
        cell = state.pos
    if cell in layout.lava:
        return EnvState(cell, None, state.sword, state.shield, terminal=True), 0.0
    if layout.kind is Kind.RDS:
        if cell == layout.goal:
            return EnvState(cell, None, terminal=True), 1.0
        return EnvState(cell, facing), 0.0
    if cell == layout.monster:
        won = state.sword and state.shield
        return EnvState(cell, None, state.sword, state.shield, terminal=True), float(won)
    sword = state.sword or cell == layout.sword
    shield = state.shield or cell == layout.shield
    return EnvState(cell, facing, sword, shield), 0.0


def step(
    layout: GridLayout,
    state: EnvState,
    action: int,
    rng: np.random.Generator | None = None,
) -> tuple[EnvState, float, bool]:
    """Apply one action; with probability ``action_noise`` it is replaced at random."""
    if state.terminal:
        raise UsageError("cannot step from a terminal state")
    if layout.action_noise > 0.0:
        if rng is None:
            raise UsageError("a random generator is required when action_noise > 0")
        if rng.random() < layout.action_noise:
            action = int(rng.integers(layout.n_actions))
    nxt, reward = _advance(layout, state, action)
    return nxt, reward, nxt.terminal


# ----------------------------------------------------------------------------
# compilation


def enumerate_states(layout: GridLayout) -> list[EnvState]:
    """All states: non-terminal first, then goal/monster terminals, then the lava sink."""
    facings = range(4) if layout.action_space.has_facing else (None,)
    situations = SITUATIONS if layout.kind is Kind.SSM else ((0, 0),)
    target = layout.target_cell
    states = []
    for sw, sh in situations:
        for cell in layout.cells():
            if cell in layout.lava or cell == target:
                continue
            if layout.kind is Kind.SSM:
                if cell == layout.sword and not sw:
                    continue
                if cell == layout.shield and not sh:
                    continue
            for f in facings:
                states.append(EnvState(cell, f, bool(sw), bool(sh)))
    for sw, sh in situations:
        states.append(EnvState(target, None, bool(sw), bool(sh), terminal=True))
    lava_cell = min(layout.lava) if layout.lava else (-1, -1)
    states.append(EnvState(lava_cell, None, terminal=True))
    return states


def compile_mdp(layout: GridLayout, init: str = "train") -> TabularMdp:
    """Exact tabular model of ``layout``.

    ``init="train"`` spreads the initial distribution uniformly over the
    non-terminal states; ``init="eval"`` starts at the spawn cells with no
    items held.
    """
    states = enumerate_states(layout)
    encodings = [encode(layout, s) for s in states]
    index = {e: i for i, e in enumerate(encodings)}
    n_s, n_a = len(states), layout.n_actions
    eps = layout.action_noise

    P = np.zeros((n_s, n_a, n_s))
    R = np.zeros((n_s, n_a, n_s))
    terminal = np.array([s.terminal for s in states])
    for i, s in enumerate(states):
        if s.terminal:
            continue
        det = np.empty(n_a, dtype=int)
        for a in range(n_a):
            nxt, rew = _advance(layout, s, a)
            det[a] = index[encode(layout, nxt)]
            R[i, :, det[a]] = rew
        for a in range(n_a):
            P[i, a, det[a]] += 1.0 - eps
            np.add.at(P[i, a], det, eps / n_a)

    init_dist = np.zeros(n_s)
    if init == "train":
        init_dist[~terminal] = 1.0
    elif init == "eval":
        for i, s in enumerate(states):
            if not s.terminal and s.pos in layout.spawn and s.situation == (0, 0):
                init_dist[i] = 1.0
    else:
        raise ValueError(f"unknown init mode {init!r}")
    init_dist /= init_dist.sum()

    target = layout.target_cell
    goal_states = tuple(
        i for i, s in enumerate(states)
        if s.terminal and s.pos == target and (layout.kind is Kind.RDS or s.situation == (1, 1))
    )
    mdp = TabularMdp(P, R, terminal, init_dist, encodings, goal_states)
    mdp.states = states
    mdp.layout = layout
    return mdp


def state_of(mdp: TabularMdp, index: int) -> EnvState:
    return mdp.states[index]


# ----------------------------------------------------------------------------
# rendering and serialization


def render_ascii(layout: GridLayout, state: EnvState | None = None) -> str:
    """One character per cell; the agent glyph wins over everything beneath it."""
    rows = []
    for y in range(layout.height):
        row = []
        for x in range(layout.width):
            cell = (x, y)
            ch = "."
            if cell in layout.lava:
                ch = "L"
            if cell == layout.goal and layout.kind is Kind.RDS:
                ch = "G"
            if cell == layout.shield and not (state and state.shield):
                ch = "H"
            if cell == layout.sword and not (state and state.sword):
                ch = "S"
            if cell == layout.monster:
                ch = "M"
            if state is not None and cell == state.pos:
                ch = "A" if state.facing is None else FACING_GLYPHS[state.facing]
            row.append(ch)
        rows.append("".join(row))
    return "\n".join(rows)


def _cell_or_none(c):
    return None if c is None else [int(c[0]), int(c[1])]


def to_json(spec: TaskSpec, layout: GridLayout) -> dict:
    return {
        "kind": spec.kind.value,
        "width": layout.width,
        "height": layout.height,
        "difficulty": spec.difficulty,
        "seed": spec.seed,
        "action_space": spec.action_space.value,
        "action_noise": spec.action_noise,
        "lava": [list(c) for c in sorted(layout.lava)],
        "goal": _cell_or_none(layout.goal),
        "spawn": [list(c) for c in layout.spawn],
        "sword": _cell_or_none(layout.sword),
        "shield": _cell_or_none(layout.shield),
        "monster": _cell_or_none(layout.monster),
    }


def dumps(spec: TaskSpec, layout: GridLayout) -> str:
    return json.dumps(to_json(spec, layout), sort_keys=False)


def from_json(data: dict | str) -> tuple[TaskSpec, GridLayout]:
    if isinstance(data, str):
        data = json.loads(data)

    def cell(v):
        return None if v is None else (int(v[0]), int(v[1]))

    spec = TaskSpec(
        kind=data["kind"], width=data["width"], height=data["height"],
        difficulty=data["difficulty"], seed=data["seed"],
        action_space=data["action_space"], action_noise=data["action_noise"],
    )
    layout = GridLayout(
        data["width"], data["height"], frozenset(cell(c) for c in data["lava"]),
        cell(data["goal"]), tuple(cell(c) for c in data["spawn"]),
        cell(data["sword"]), cell(data["shield"]), cell(data["monster"]),
        kind=spec.kind, action_space=spec.action_space, action_noise=spec.action_noise,
    )
    return spec, layout


# ----------------------------------------------------------------------------
# interactive wrapper used by the agents


@dataclass
class GridEnv:
    """Episode bookkeeping over a compiled MDP (state indices in, state indices out)."""

    mdp: TabularMdp
    max_steps: int = 128
    task_id: int = 0
    t: int = field(default=0, init=False)
    s: int = field(default=-1, init=False)

    def reset(self, rng: np.random.Generator, init: np.ndarray | None = None) -> int:
        dist = self.mdp.init if init is None else init
        self.s = int(rng.choice(len(dist), p=dist))
        self.t = 0
        return self.s

    def step(self, a: int, rng: np.random.Generator) -> tuple[int, float, bool, bool]:
        """Return ``(s', r, terminal, truncated)``."""
        if self.mdp.terminal[self.s]:
            raise UsageError("episode already terminated")
        s2, r = self.mdp.sample_next(self.s, a, rng)
        self.s = s2
        self.t += 1
        done = bool(self.mdp.terminal[s2])
        return s2, r, done, (not done and self.t >= self.max_steps)

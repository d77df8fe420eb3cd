"""Observation bundles: filled text templates plus image references."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Optional

import numpy as np

from .move_oracle import RotationTarget
from .snake_env import Coord, GameState, GameStateError

TEMPLATE_VERSION = "v1"
SNAKE_COLORS = {1: "green", 2: "blue"}
EXAMPLE_ANGLE = 180

# occupancy codes used by describe_state_text / parse_state_text
EMPTY, APPLE, OWN_HEAD, OWN_BODY, ENEMY_HEAD, ENEMY_BODY = range(6)
_GRID_CHARS = {EMPTY: ".", APPLE: "A", OWN_HEAD: "H", OWN_BODY: "S", ENEMY_HEAD: "E", ENEMY_BODY: "e"}
_CHAR_CODES = {v: k for k, v in _GRID_CHARS.items()}


@dataclass(frozen=True)
class ReasoningInstruction:
    id: str
    game: str
    text: str


@dataclass
class PromptBundle:
    text: str
    image_refs: list[str]
    game: str
    snake_id: Optional[int] = None
    with_instruction: bool = True
    instruction_id: Optional[str] = None
    # in-process extras (game state, instance) for built-in agents; never serialized
    metadata: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)


def _resource(name: str) -> str:
    return (resources.files("gamerl") / "resources" / "templates" / name).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def snake_template() -> str:
    return _resource(f"snake_{TEMPLATE_VERSION}.txt")


@lru_cache(maxsize=None)
def rotation_template() -> str:
    return _resource(f"rotation_{TEMPLATE_VERSION}.txt")


@lru_cache(maxsize=None)
def snake_instruction() -> ReasoningInstruction:
    return ReasoningInstruction("snake-manhattan", "snake", _resource(f"snake_instruction_{TEMPLATE_VERSION}.txt").strip())


@lru_cache(maxsize=None)
def rotation_strategies() -> tuple[ReasoningInstruction, ...]:
    folder = resources.files("gamerl") / "resources" / "templates" / "rotation_strategies"
    names = sorted(p.name for p in folder.iterdir() if p.name.endswith(".txt"))
    return tuple(
        ReasoningInstruction(n[:-4], "rotation", folder.joinpath(n).read_text(encoding="utf-8").strip())
        for n in names
    )


def format_coord(c: Coord) -> str:
    return f"({c[0]}, {c[1]})"


def format_coords(cells) -> str:
    return "[" + ", ".join(format_coord(c) for c in cells) + "]"


def build_snake_prompt(
    state: GameState,
    snake_id: int,
    with_instruction: bool = True,
    text_only: bool = False,
    image_ref: Optional[str] = None,
) -> PromptBundle:
    me = state.snake(snake_id)
    if not me.alive:
        raise GameStateError(f"snake {snake_id} is dead")
    enemy = state.other(snake_id)
    instruction = snake_instruction()
    text = snake_template().format(
        apple_position=format_coords(state.apples),
        last_action="None" if me.last_action is None else me.last_action.name,
        instruction=instruction.text + "\n" if with_instruction else "",
        snake_id=snake_id,
        snake_color=SNAKE_COLORS[snake_id],
        snake_position=format_coord(me.head),
        body_position=format_coords(me.body[1:]),
        enemy_color=SNAKE_COLORS[enemy.id],
        enemy_position=format_coords(enemy.body),
    )
    if text_only:
        text = text.rstrip("\n") + "\n\n" + describe_state_text(state, snake_id)
        refs: list[str] = []
    else:
        refs = [image_ref or f"board-t{state.turn}-s{snake_id}"]
    return PromptBundle(
        text=text,
        image_refs=refs,
        game="snake",
        snake_id=snake_id,
        with_instruction=with_instruction,
        instruction_id=instruction.id if with_instruction else None,
        metadata={"state": state},
    )


def answer_list(angle_set) -> str:
    order = (RotationTarget.CW90, RotationTarget.CCW90, RotationTarget.R180)
    return "[" + ", ".join(f"'{t.token}'" for t in order if t in set(angle_set)) + "]"


def build_rotation_prompt(instance, strategy_rng, with_instruction: bool = True) -> PromptBundle:
    """Rotation prompt with one of the five strategy hints drawn from ``strategy_rng``.

    ``strategy_rng`` may be a seed or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(strategy_rng) if not isinstance(strategy_rng, np.random.Generator) else strategy_rng
    strategies = rotation_strategies()
    choice = strategies[int(rng.integers(len(strategies)))]
    text = rotation_template().format(
        example_angle=EXAMPLE_ANGLE,
        instruction="\n" + choice.text + "\n" if with_instruction else "",
        answer_list=answer_list(instance.angle_set),
    )
    iid = instance.instance_id
    return PromptBundle(
        text=text,
        image_refs=[f"{iid}:example_init", f"{iid}:example_rot", f"{iid}:task_init", f"{iid}:task_rot"],
        game="rotation",
        with_instruction=with_instruction,
        instruction_id=choice.id if with_instruction else None,
        metadata={"instance": instance},
    )


# ---------------------------------------------------------------------------
# text-only state description
# ---------------------------------------------------------------------------


def occupancy_grid(state: GameState, snake_id: int) -> np.ndarray:
    """``(board_h, board_w)`` int grid indexed ``[y, x]`` from the perspective of ``snake_id``."""
    cfg = state.config
    grid = np.full((cfg.board_h, cfg.board_w), EMPTY, dtype=np.int8)
    for x, y in state.apples:
        grid[y, x] = APPLE
    me, enemy = state.snake(snake_id), state.other(snake_id)
    for snake, head_code, body_code in ((enemy, ENEMY_HEAD, ENEMY_BODY), (me, OWN_HEAD, OWN_BODY)):
        for x, y in snake.body[1:]:
            if state.in_bounds((x, y)):
                grid[y, x] = body_code
        if state.in_bounds(snake.head):
            grid[snake.head[1], snake.head[0]] = head_code
    return grid


def describe_state_text(state: GameState, snake_id: int) -> str:
    me = state.snake(snake_id)
    if not me.alive:
        raise GameStateError(f"snake {snake_id} is dead")
    enemy = state.other(snake_id)
    cfg = state.config
    grid = occupancy_grid(state, snake_id)
    lines = [
        f"Board: {cfg.board_w} x {cfg.board_h}; valid cells have 0 <= x <= {cfg.board_w - 1} and 0 <= y <= {cfg.board_h - 1}.",
        f"Your snake (ID {snake_id}): head {format_coord(me.head)}; body {format_coords(me.body[1:])}",
        f"Enemy snake (ID {enemy.id}): head {format_coord(enemy.head)}; body {format_coords(enemy.body[1:])}",
        f"Apples: {format_coords(state.apples)}",
        "Grid (top row is y = {top}; '.' empty, 'A' apple, 'H' your head, 'S' your body, "
        "'E' enemy head, 'e' enemy body):".format(top=cfg.board_h - 1),
    ]
    for y in range(cfg.board_h - 1, -1, -1):
        lines.append(f"y={y}: " + " ".join(_GRID_CHARS[int(v)] for v in grid[y]))
    return "\n".join(lines)


def parse_state_text(text: str) -> np.ndarray:
    """Rebuild the occupancy grid (indexed ``[y, x]``) from :func:`describe_state_text` output."""
    rows = {}
    for m in re.finditer(r"^y=(\d+): (.+)$", text, flags=re.MULTILINE):
        rows[int(m.group(1))] = [_CHAR_CODES[ch] for ch in m.group(2).split(" ")]
    if not rows:
        raise ValueError("no grid rows found")
    h = max(rows) + 1
    if sorted(rows) != list(range(h)):
        raise ValueError("grid rows are not contiguous")
    return np.array([rows[y] for y in range(h)], dtype=np.int8)

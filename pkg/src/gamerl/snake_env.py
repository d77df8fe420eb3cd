"""Two-snake grid world.

States are immutable; :func:`step` returns a new :class:`GameState`. The
random generator state travels inside the game state so a replay of the same
seed and actions reproduces every apple spawn.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Iterable, Optional

import numpy as np

Coord = tuple[int, int]


class GameStateError(RuntimeError):
    """Operation not allowed in the current game state."""


class ConfigError(ValueError):
    pass


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3

    @property
    def delta(self) -> Coord:
        return DELTAS[self]

    @classmethod
    def parse(cls, token: str) -> "Action":
        return cls[token.strip().upper()]


DELTAS: dict[Action, Coord] = {
    Action.UP: (0, 1),
    Action.DOWN: (0, -1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
}
ACTIONS: tuple[Action, ...] = tuple(Action)


class Winner(Enum):
    SNAKE1 = "snake1"
    SNAKE2 = "snake2"
    DRAW = "draw"
    ONGOING = "ongoing"


@dataclass(frozen=True)
class EnvConfig:
    board_w: int = 10
    board_h: int = 10
    num_apples: int = 5
    max_turns: int = 100
    growth_per_apple: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.board_w < 2 or self.board_h < 2:
            raise ConfigError("board must be at least 2x2")
        if self.num_apples < 1:
            raise ConfigError("num_apples must be >= 1")
        if self.max_turns < 1:
            raise ConfigError("max_turns must be >= 1")
        if self.growth_per_apple < 0:
            raise ConfigError("growth_per_apple must be >= 0")

    @property
    def paper_faithful(self) -> bool:
        return self.board_w == 10 and self.board_h == 10

    def with_seed(self, seed: int) -> "EnvConfig":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class SnakeState:
    id: int
    body: tuple[Coord, ...]
    alive: bool = True
    score: int = 0
    last_action: Optional[Action] = None
    # segments still to be added after apples (growth > 1 per apple)
    pending_growth: int = 0

    @property
    def head(self) -> Coord:
        return self.body[0]

    def __len__(self) -> int:
        return len(self.body)


@dataclass(frozen=True)
class GameState:
    turn: int
    snakes: tuple[SnakeState, SnakeState]
    apples: tuple[Coord, ...]
    config: EnvConfig = field(default_factory=EnvConfig)
    rng_state: tuple = ()

    def snake(self, snake_id: int) -> SnakeState:
        return self.snakes[snake_id - 1]

    def other(self, snake_id: int) -> SnakeState:
        return self.snakes[2 - snake_id]

    def occupied(self) -> set[Coord]:
        cells = set(self.snakes[0].body)
        cells.update(self.snakes[1].body)
        return cells

    def in_bounds(self, cell: Coord) -> bool:
        return 0 <= cell[0] < self.config.board_w and 0 <= cell[1] < self.config.board_h

    @property
    def done(self) -> bool:
        return winner(self) is not Winner.ONGOING

    def to_dict(self) -> dict:
        return {
            "turn": self.turn,
            "snakes": [
                {
                    "id": s.id,
                    "body": [list(c) for c in s.body],
                    "alive": s.alive,
                    "score": s.score,
                    "last_action": None if s.last_action is None else s.last_action.name,
                    **({"pending_growth": s.pending_growth} if s.pending_growth else {}),
                }
                for s in self.snakes
            ],
            "apples": [list(a) for a in self.apples],
        }

    @classmethod
    def from_dict(cls, data: dict, config: EnvConfig | None = None) -> "GameState":
        snakes = tuple(
            SnakeState(
                id=int(s["id"]),
                body=tuple((int(c[0]), int(c[1])) for c in s["body"]),
                alive=bool(s.get("alive", True)),
                score=int(s.get("score", 0)),
                last_action=None if s.get("last_action") is None else Action[s["last_action"]],
                pending_growth=int(s.get("pending_growth", 0)),
            )
            for s in data["snakes"]
        )
        config = config or EnvConfig()
        # serialized states carry no RNG; later respawns draw from the config seed
        return cls(
            turn=int(data.get("turn", 0)),
            snakes=snakes,  # type: ignore[arg-type]
            apples=tuple(sorted((int(a[0]), int(a[1])) for a in data["apples"])),
            config=config,
            rng_state=_freeze(np.random.default_rng(config.seed)),
        )


@dataclass(frozen=True)
class StepOutcome:
    deaths: tuple[bool, bool]
    apples_eaten: tuple[int, int]
    winner: Winner


def _rng(rng_state: tuple) -> np.random.Generator:
    bitgen = np.random.PCG64()
    s, inc, has32, u32 = rng_state
    bitgen.state = {
        "bit_generator": "PCG64",
        "state": {"state": s, "inc": inc},
        "has_uint32": has32,
        "uinteger": u32,
    }
    return np.random.Generator(bitgen)


def _freeze(rng: np.random.Generator) -> tuple:
    st = rng.bit_generator.state
    return (st["state"]["state"], st["state"]["inc"], st["has_uint32"], st["uinteger"])


def new_game(config: EnvConfig = EnvConfig()) -> GameState:
    """Two length-1 snakes and ``num_apples`` apples on distinct random cells."""
    w, h = config.board_w, config.board_h
    needed = 2 + config.num_apples
    if needed > w * h:
        raise ConfigError(f"cannot place {needed} entities on a {w}x{h} board")
    rng = np.random.default_rng(config.seed)
    picks = rng.choice(w * h, size=needed, replace=False)
    cells = [(int(p) % w, int(p) // w) for p in picks]
    snakes = (
        SnakeState(id=1, body=(cells[0],)),
        SnakeState(id=2, body=(cells[1],)),
    )
    return GameState(
        turn=0,
        snakes=snakes,
        apples=tuple(sorted(cells[2:])),
        config=config,
        rng_state=_freeze(rng),
    )


def winner(state: GameState) -> Winner:
    s1, s2 = state.snakes
    if s1.alive and s2.alive:
        if state.turn < state.config.max_turns:
            return Winner.ONGOING
        return _by_score(s1, s2)
    if s1.alive:
        return Winner.SNAKE1
    if s2.alive:
        return Winner.SNAKE2
    return _by_score(s1, s2)


def _by_score(s1: SnakeState, s2: SnakeState) -> Winner:
    if s1.score > s2.score:
        return Winner.SNAKE1
    if s2.score > s1.score:
        return Winner.SNAKE2
    return Winner.DRAW


def next_head(head: Coord, action: Action) -> Coord:
    dx, dy = DELTAS[action]
    return (head[0] + dx, head[1] + dy)


def step(state: GameState, actions: tuple[Action, Action]) -> tuple[GameState, StepOutcome]:
    """Move both heads simultaneously and resolve deaths, apples and respawns.

    A new head dies when it leaves the board, lands on any pre-move body cell
    (tails included), or meets the other snake's new head.
    """
    if winner(state) is not Winner.ONGOING:
        raise GameStateError("game is over")
    a1, a2 = Action(actions[0]), Action(actions[1])
    old = state.snakes
    occupied = state.occupied()
    heads = (next_head(old[0].head, a1), next_head(old[1].head, a2))
    dead = [not state.in_bounds(h) or h in occupied for h in heads]
    if heads[0] == heads[1]:
        dead = [True, True]

    apples = set(state.apples)
    eaten = [0, 0]
    snakes = []
    for i, (s, h, a) in enumerate(zip(old, heads, (a1, a2))):
        if dead[i]:
            snakes.append(replace(s, alive=False, last_action=a))
            continue
        grow = s.pending_growth
        score = s.score
        if h in apples:
            apples.discard(h)
            eaten[i] = 1
            score += 1
            grow += state.config.growth_per_apple
        if grow > 0:
            body = (h,) + s.body
            grow -= 1
        else:
            body = (h,) + s.body[:-1]
        snakes.append(replace(s, body=body, score=score, last_action=a, pending_growth=grow))

    rng_state = state.rng_state
    missing = state.config.num_apples - len(apples)
    if missing > 0:
        taken = set(apples)
        for s in snakes:
            taken.update(s.body)
        w, h = state.config.board_w, state.config.board_h
        empty = [(x, y) for y in range(h) for x in range(w) if (x, y) not in taken]
        if empty:
            rng = _rng(rng_state)
            for _ in range(min(missing, len(empty))):
                cell = empty.pop(int(rng.integers(len(empty))))
                apples.add(cell)
            rng_state = _freeze(rng)

    new = GameState(
        turn=state.turn + 1,
        snakes=(snakes[0], snakes[1]),
        apples=tuple(sorted(apples)),
        config=state.config,
        rng_state=rng_state,
    )
    return new, StepOutcome(deaths=(dead[0], dead[1]), apples_eaten=(eaten[0], eaten[1]), winner=winner(new))


def state_hash(state: GameState, include_rng: bool = True) -> str:
    """Stable SHA-256 over the canonical JSON form of ``state``."""
    payload = state.to_dict()
    if include_rng:
        payload["rng"] = [str(v) for v in state.rng_state]
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def board_key(state: GameState) -> tuple:
    """Hashable key of the visible board (bodies, apples, last moves)."""
    return (
        tuple((s.body, s.last_action) for s in state.snakes),
        state.apples,
    )


def replay(config: EnvConfig, actions: Iterable[tuple[Action, Action]]) -> GameState:
    state = new_game(config)
    for pair in actions:
        state, _ = step(state, pair)
    return state


# ---------------------------------------------------------------------------
# board image
# ---------------------------------------------------------------------------

CELL = 32
MARGIN_LEFT = 24
MARGIN_BOTTOM = 24
MARGIN_TOP = 8
MARGIN_RIGHT = 8

COLORS = {
    "background": (255, 255, 255),
    "grid": (160, 160, 160),
    "label": (0, 0, 0),
    "apple": (220, 30, 30),
    "snake1_body": (80, 200, 80),
    "snake1_head": (0, 110, 0),
    "snake2_body": (90, 140, 240),
    "snake2_head": (0, 40, 160),
}


def cell_origin(state_or_config, x: int, y: int) -> tuple[int, int]:
    """Top-left pixel of cell ``(x, y)`` in the board image."""
    cfg = state_or_config.config if isinstance(state_or_config, GameState) else state_or_config
    return MARGIN_LEFT + x * CELL, MARGIN_TOP + (cfg.board_h - 1 - y) * CELL


def render_board_image(state: GameState):
    """Draw the board as a Pillow RGB image with (0, 0) at the bottom-left."""
    from PIL import Image, ImageDraw, ImageFont

    cfg = state.config
    width = MARGIN_LEFT + cfg.board_w * CELL + MARGIN_RIGHT
    height = MARGIN_TOP + cfg.board_h * CELL + MARGIN_BOTTOM
    img = Image.new("RGB", (width, height), COLORS["background"])
    draw = ImageDraw.Draw(img)

    def fill(cell: Coord, color):
        x0, y0 = cell_origin(cfg, *cell)
        draw.rectangle([x0 + 1, y0 + 1, x0 + CELL - 1, y0 + CELL - 1], fill=color)

    for a in state.apples:
        fill(a, COLORS["apple"])
    for s in state.snakes:
        for c in s.body[1:]:
            if state.in_bounds(c):
                fill(c, COLORS[f"snake{s.id}_body"])
        if state.in_bounds(s.head):
            fill(s.head, COLORS[f"snake{s.id}_head"])

    for i in range(cfg.board_w + 1):
        x = MARGIN_LEFT + i * CELL
        draw.line([x, MARGIN_TOP, x, MARGIN_TOP + cfg.board_h * CELL], fill=COLORS["grid"])
    for j in range(cfg.board_h + 1):
        y = MARGIN_TOP + j * CELL
        draw.line([MARGIN_LEFT, y, MARGIN_LEFT + cfg.board_w * CELL, y], fill=COLORS["grid"])

    font = ImageFont.load_default()
    for x in range(cfg.board_w):
        cx = MARGIN_LEFT + x * CELL + CELL // 2 - 3
        draw.text((cx, MARGIN_TOP + cfg.board_h * CELL + 6), str(x), fill=COLORS["label"], font=font)
    for y in range(cfg.board_h):
        _, cy = cell_origin(cfg, 0, y)
        draw.text((8, cy + CELL // 2 - 6), str(y), fill=COLORS["label"], font=font)
    return img


def board_png_bytes(state: GameState) -> bytes:
    buf = io.BytesIO()
    render_board_image(state).save(buf, format="PNG", optimize=False)
    return buf.getvalue()

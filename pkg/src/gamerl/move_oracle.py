"""Ground-truth move labels and accuracy scoring."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .snake_env import ACTIONS, Action, Coord, GameState, GameStateError, next_head


@dataclass(frozen=True)
class MoveAssessment:
    fatal: frozenset[Action]
    nearest_apple: Optional[Coord]
    toward_nearest: frozenset[Action]
    best: frozenset[Action]

    def canonical_best(self) -> Optional[Action]:
        """First best move in UP, DOWN, LEFT, RIGHT order."""
        for a in ACTIONS:
            if a in self.best:
                return a
        return None


def manhattan(a: Coord, b: Coord) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def nearest_apple(head: Coord, apples: Iterable[Coord]) -> Optional[Coord]:
    best = None
    for apple in apples:
        key = (manhattan(head, apple), apple)
        if best is None or key < best:
            best = key
    return None if best is None else best[1]


def assess(state: GameState, snake_id: int, anticipate_opponent: bool = False) -> MoveAssessment:
    """Label every move of snake ``snake_id`` in ``state``.

    Fatal moves leave the board or enter a pre-move body cell of either
    snake. With ``anticipate_opponent`` the cells the opponent could reach
    next turn are also counted as fatal.
    """
    me = state.snake(snake_id)
    if not me.alive:
        raise GameStateError(f"snake {snake_id} is dead")
    occupied = state.occupied()
    danger: set[Coord] = set()
    if anticipate_opponent:
        other = state.other(snake_id)
        if other.alive:
            for a in ACTIONS:
                cell = next_head(other.head, a)
                if state.in_bounds(cell) and cell not in occupied:
                    danger.add(cell)

    fatal = set()
    for a in ACTIONS:
        cell = next_head(me.head, a)
        if not state.in_bounds(cell) or cell in occupied or cell in danger:
            fatal.add(a)

    target = nearest_apple(me.head, state.apples)
    safe = [a for a in ACTIONS if a not in fatal]
    toward: set[Action] = set()
    if target is not None:
        d0 = manhattan(me.head, target)
        toward = {a for a in safe if manhattan(next_head(me.head, a), target) < d0}
    best = toward if toward else set(safe)
    return MoveAssessment(
        fatal=frozenset(fatal),
        nearest_apple=target,
        toward_nearest=frozenset(toward),
        best=frozenset(best),
    )


def score_answer(
    assessment: MoveAssessment,
    predicted_best: Optional[Action],
    predicted_worst: Optional[Iterable[Action]],
) -> int:
    """1 iff the best move is a best move and the worst set is exactly the fatal set.

    ``predicted_worst=None`` stands for the empty set.
    """
    if predicted_best is None:
        return 0
    worst = frozenset(predicted_worst or ())
    if predicted_best not in assessment.best:
        return 0
    if predicted_best in worst:
        return 0
    return int(worst == assessment.fatal)


# ---------------------------------------------------------------------------
# rotation answers
# ---------------------------------------------------------------------------


class RotationTarget(Enum):
    CCW90 = 90
    CW90 = -90
    R180 = 180

    @property
    def token(self) -> str:
        return _TOKENS[self]

    @property
    def ccw_degrees(self) -> int:
        """Equivalent counter-clockwise angle in [0, 360)."""
        return self.value % 360

    @classmethod
    def from_token(cls, token: str) -> "RotationTarget":
        for t, s in _TOKENS.items():
            if s == normalize_rotation_token(token):
                return t
        raise ValueError(f"unknown rotation token {token!r}")


_TOKENS = {
    RotationTarget.CCW90: "counter clockwise 90",
    RotationTarget.CW90: "clockwise 90",
    RotationTarget.R180: "180",
}


def normalize_rotation_token(text: str) -> str:
    """Lower-case, strip quotes and degree marks, collapse whitespace."""
    t = text.strip().lower()
    t = t.strip("'\"`.[]() ")
    t = t.replace("°", " ").replace("-", " ").replace("_", " ")
    t = re.sub(r"\bdeg(rees?)?\b", " ", t)
    t = re.sub(r"\bcounterclockwise\b|\banticlockwise\b|\banti clockwise\b", "counter clockwise", t)
    t = re.sub(r"\s+", " ", t).strip()
    return t


def resolve_rotation_answer(
    predicted: Optional[str], angle_set: Iterable[RotationTarget]
) -> Optional[RotationTarget]:
    """Map a free-text answer to a target in ``angle_set``.

    A bare ``"90"`` resolves only when the active set holds exactly one
    90-degree option.
    """
    if predicted is None:
        return None
    options = list(angle_set)
    t = normalize_rotation_token(predicted)
    for o in options:
        if t == o.token:
            return o
    if t == "90":
        nineties = [o for o in options if o is not RotationTarget.R180]
        if len(nineties) == 1:
            return nineties[0]
    return None


def score_rotation(
    label: RotationTarget,
    predicted: Optional[str],
    angle_set: Iterable[RotationTarget] = (RotationTarget.CCW90, RotationTarget.R180),
) -> int:
    return int(resolve_rotation_answer(predicted, angle_set) is label)

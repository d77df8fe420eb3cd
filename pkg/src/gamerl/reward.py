"""Tagged-response parsing and the rule-based reward (accuracy + format)."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .move_oracle import (
    MoveAssessment,
    RotationTarget,
    resolve_rotation_answer,
    score_answer,
)
from .snake_env import Action

FORMAT_BONUS = 0.1
ACCURACY_REWARD = 1.0

SNAKE_TAGS = ("think", "best_answer", "worst_answer")
ROTATION_TAGS = ("think", "answer")


@dataclass(frozen=True)
class ResponseParse:
    """Parsed response.

    ``worst`` is ``None`` when no worst set could be extracted; the literal
    ``None`` answer parses to an empty frozenset.
    """

    well_formed: bool
    think: Optional[str] = None
    best: Optional[Action] = None
    worst: Optional[frozenset] = None
    answer: Optional[str] = None
    game: str = "snake"


@dataclass(frozen=True)
class RotationLabels:
    target: RotationTarget
    angle_set: tuple[RotationTarget, ...] = (RotationTarget.CCW90, RotationTarget.R180)


@dataclass(frozen=True)
class RewardBreakdown:
    reward: float
    r_accuracy: float
    r_format: float

    def to_dict(self) -> dict:
        return {"reward": self.reward, "r_accuracy": self.r_accuracy, "r_format": self.r_format}


def _structure(text: str, tags: tuple[str, ...]) -> bool:
    for tag in tags:
        if text.count(f"<{tag}>") != 1 or text.count(f"</{tag}>") != 1:
            return False
    pattern = r"\s*" + r"\s*".join(rf"<{t}>.*?</{t}>" for t in tags) + r"\s*"
    return re.fullmatch(pattern, text, flags=re.DOTALL) is not None


def _body(text: str, tag: str) -> Optional[str]:
    """Contents of the unique ``<tag>...</tag>`` pair, else ``None``."""
    found = re.findall(rf"<{tag}>(.*?)</{tag}>", text, flags=re.DOTALL)
    if len(found) != 1:
        return None
    return found[0]


def parse_move(body: Optional[str]) -> Optional[Action]:
    if body is None:
        return None
    token = body.strip().strip("'\"`.[]() ").upper()
    try:
        return Action[token]
    except KeyError:
        return None


def parse_move_set(body: Optional[str]) -> Optional[frozenset]:
    if body is None:
        return None
    cleaned = body.strip().strip("'\"`.[]() ")
    if cleaned.lower() == "none":
        return frozenset()
    parts = [p for p in re.split(r"[\s,;'\"`\[\]()]+", cleaned) if p]
    if not parts:
        return None
    moves = set()
    for p in parts:
        try:
            moves.add(Action[p.upper()])
        except KeyError:
            return None
    return frozenset(moves)


def parse_snake_response(text) -> ResponseParse:
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8", errors="replace")
    text = str(text)
    return ResponseParse(
        well_formed=_structure(text, SNAKE_TAGS),
        think=_body(text, "think"),
        best=parse_move(_body(text, "best_answer")),
        worst=parse_move_set(_body(text, "worst_answer")),
        game="snake",
    )


def parse_rotation_response(text) -> ResponseParse:
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8", errors="replace")
    text = str(text)
    answer = _body(text, "answer")
    return ResponseParse(
        well_formed=_structure(text, ROTATION_TAGS),
        think=_body(text, "think"),
        answer=None if answer is None else answer.strip(),
        game="rotation",
    )


Labels = Union[MoveAssessment, RotationLabels]


def reward_components(parse: ResponseParse, labels: Labels) -> RewardBreakdown:
    r_format = FORMAT_BONUS if parse.well_formed else 0.0
    if isinstance(labels, MoveAssessment):
        if parse.game != "snake":
            raise ValueError("snake labels given for a rotation response")
        hit = parse.best is not None and parse.worst is not None and score_answer(labels, parse.best, parse.worst)
    else:
        if parse.game != "rotation":
            raise ValueError("rotation labels given for a snake response")
        hit = resolve_rotation_answer(parse.answer, labels.angle_set) is labels.target
    r_acc = ACCURACY_REWARD if hit else 0.0
    return RewardBreakdown(reward=r_acc + r_format, r_accuracy=r_acc, r_format=r_format)


def total_reward(parse: ResponseParse, labels: Labels) -> float:
    return reward_components(parse, labels).reward


def score_response(text: str, labels: Labels) -> RewardBreakdown:
    """Parse ``text`` for the game implied by ``labels`` and score it."""
    if isinstance(labels, MoveAssessment):
        return reward_components(parse_snake_response(text), labels)
    return reward_components(parse_rotation_response(text), labels)


def format_snake_response(best: Optional[Action], worst, think: str = "") -> str:
    """Canonical tagged response; an empty worst set is written as ``None``."""
    worst = sorted(worst or (), key=int)
    worst_text = ", ".join(a.name for a in worst) if worst else "None"
    best_text = best.name if best is not None else ""
    return (
        f"<think>{think}</think>"
        f"<best_answer>{best_text}</best_answer>"
        f"<worst_answer>{worst_text}</worst_answer>"
    )


def format_rotation_response(answer: str, think: str = "") -> str:
    return f"<think>{think}</think><answer>{answer}</answer>"

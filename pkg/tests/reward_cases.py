"""Golden reward suite shared by the unit tests and the acceptance report."""

from gamerl.move_oracle import RotationTarget, assess
from gamerl.reward import RotationLabels

from conftest import make_state

# best {RIGHT}, fatal {LEFT, DOWN}
CORNER = assess(make_state([(0, 0)], [(9, 9)], [(3, 0)]), 1)
# best {UP}, no fatal moves, so the worst answer is "None"
OPEN = assess(make_state([(4, 4)], [(9, 9)], [(4, 6)]), 1)
TURN = RotationLabels(RotationTarget.R180)


def snake(think, best, worst):
    return f"<think>{think}</think><best_answer>{best}</best_answer><worst_answer>{worst}</worst_answer>"


GOLDEN = [
    # (case id, response, labels, expected reward)
    ("wf-correct", snake("go right", "RIGHT", "LEFT, DOWN"), CORNER, 1.1),
    ("wf-correct-casing", snake("", " right ", "down left"), CORNER, 1.1),
    ("wf-wrong-best", snake("x", "UP", "LEFT, DOWN"), CORNER, 0.1),
    ("wf-partial-worst", snake("x", "RIGHT", "LEFT"), CORNER, 0.1),
    ("wf-none-but-fatal-exists", snake("x", "RIGHT", "None"), CORNER, 0.1),
    ("wf-unknown-move", snake("x", "NORTH", "LEFT, DOWN"), CORNER, 0.1),
    ("mf-missing-close-think", "<think>x<best_answer>RIGHT</best_answer><worst_answer>LEFT, DOWN</worst_answer>", CORNER, 1.0),
    ("mf-trailing-text", snake("x", "RIGHT", "LEFT, DOWN") + " done.", CORNER, 1.0),
    (
        "mf-out-of-order",
        "<think>x</think><worst_answer>LEFT, DOWN</worst_answer><best_answer>RIGHT</best_answer>",
        CORNER,
        1.0,
    ),
    ("mf-missing-worst", "<think>x</think><best_answer>RIGHT</best_answer>", CORNER, 0.0),
    (
        "mf-duplicate-best",
        "<think>x</think><best_answer>RIGHT</best_answer><best_answer>RIGHT</best_answer>"
        "<worst_answer>LEFT, DOWN</worst_answer>",
        CORNER,
        0.0,
    ),
    ("mf-empty", "", CORNER, 0.0),
    ("mf-wrong-best", "<think>x<best_answer>UP</best_answer><worst_answer>LEFT, DOWN</worst_answer>", CORNER, 0.0),
    ("wf-none-correct", snake("safe everywhere", "UP", "None"), OPEN, 1.1),
    ("wf-none-lowercase", snake("", "up", " none "), OPEN, 1.1),
    ("wf-spurious-worst", snake("", "UP", "UP"), OPEN, 0.1),
    ("mf-leading-text-none", "Answer: " + snake("", "UP", "None"), OPEN, 1.0),
    ("rot-wf-correct", "<think>y</think><answer>180</answer>", TURN, 1.1),
    ("rot-wf-wrong", "<think>y</think><answer>counter clockwise 90</answer>", TURN, 0.1),
    ("rot-mf-out-of-order", "<answer>180</answer><think>y</think>", TURN, 1.0),
]

import pytest
from hypothesis import given, settings, strategies as st

from gamerl.move_oracle import (
    RotationTarget,
    assess,
    nearest_apple,
    normalize_rotation_token,
    score_answer,
    score_rotation,
)
from gamerl.snake_env import ACTIONS, Action, GameStateError
from gamerl.verify import brute_force_assess, oracle_disagreements, random_reachable_states

from conftest import make_state

U, D, L, R = Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT


def test_corner_example():
    s = make_state([(0, 0)], [(9, 9)], [(3, 0)])
    a = assess(s, 1)
    assert a.best == {R}
    assert a.fatal == {L, D}
    assert a.nearest_apple == (3, 0)


def test_adjacent_apple():
    s = make_state([(4, 4)], [(9, 9)], [(4, 5)])
    assert U in assess(s, 1).best


def test_boxed_in():
    # head at (0,0) with own body to the right and the other snake above
    s = make_state([(0, 0), (1, 0)], [(0, 1), (0, 2)], [(5, 5)])
    a = assess(s, 1)
    assert a.fatal == set(ACTIONS)
    assert a.best == frozenset()
    assert a.canonical_best() is None


def test_fallback_to_safe_moves():
    # the only move toward the apple runs into the opponent
    s = make_state([(0, 0)], [(1, 0), (2, 0)], [(3, 0)])
    a = assess(s, 1)
    assert a.toward_nearest == frozenset()
    assert a.best == {U}


def test_nearest_apple_tie_break():
    assert nearest_apple((5, 5), [(6, 5), (4, 5), (5, 4)]) == (4, 5)
    assert nearest_apple((5, 5), []) is None


def test_dead_snake_raises():
    s = make_state([(0, 0)], [(9, 9)], [(3, 0)], alive=(False, True))
    with pytest.raises(GameStateError):
        assess(s, 1)


def test_opponent_anticipation_flag():
    s = make_state([(3, 3)], [(5, 3)], [(9, 9)])
    assert R not in assess(s, 1).fatal
    assert R in assess(s, 1, anticipate_opponent=True).fatal


def test_score_answer_examples():
    a = assess(make_state([(0, 0)], [(9, 9)], [(3, 0)]), 1)
    assert score_answer(a, R, {L, D}) == 1
    assert score_answer(a, R, {L}) == 0
    assert score_answer(a, U, {L, D}) == 0
    assert score_answer(a, None, {L, D}) == 0


def test_score_answer_none_means_empty():
    a = assess(make_state([(4, 4)], [(9, 9)], [(4, 6)]), 1)
    assert a.fatal == frozenset()
    assert score_answer(a, U, None) == 1
    assert score_answer(a, U, set()) == 1


def test_best_and_worst_must_differ():
    a = assess(make_state([(0, 0)], [(9, 9)], [(3, 0)]), 1)
    assert score_answer(a, R, {L, D, R}) == 0


def test_oracle_matches_brute_force():
    states = random_reachable_states(1500, seed=4)
    assert oracle_disagreements(states) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_canonical_answer_scores_and_corruptions_do_not(seed):
    s = random_reachable_states(1, seed=seed)[0]
    for sid in (1, 2):
        a = assess(s, sid)
        assert not a.best & a.fatal
        if a.fatal != set(ACTIONS):
            assert a.best
        best = a.canonical_best()
        if best is None:
            continue
        assert score_answer(a, best, a.fatal) == 1
        for other in ACTIONS:
            if other not in a.best:
                assert score_answer(a, other, a.fatal) == 0
        for flip in ACTIONS:
            assert score_answer(a, best, a.fatal ^ {flip}) == 0


def test_brute_force_on_hand_state():
    s = make_state([(0, 0)], [(9, 9)], [(3, 0)])
    slow = brute_force_assess(s, 1)
    assert slow.fatal == {L, D} and slow.best == {R}


def test_rotation_scoring():
    assert score_rotation(RotationTarget.R180, "180") == 1
    assert score_rotation(RotationTarget.R180, "counter clockwise 90") == 0
    assert score_rotation(RotationTarget.CCW90, "Counter Clockwise 90") == 1
    assert score_rotation(RotationTarget.CCW90, "90") == 1
    uncontrolled = tuple(RotationTarget)
    assert score_rotation(RotationTarget.CCW90, "90", uncontrolled) == 0
    assert score_rotation(RotationTarget.CW90, "clockwise 90°", uncontrolled) == 1
    assert score_rotation(RotationTarget.R180, None) == 0


def test_rotation_token_normalization():
    assert normalize_rotation_token("  Counter-Clockwise  90 degrees ") == "counter clockwise 90"
    assert normalize_rotation_token("anticlockwise 90") == "counter clockwise 90"
    assert RotationTarget.from_token("180°") is RotationTarget.R180
    with pytest.raises(ValueError):
        RotationTarget.from_token("45")

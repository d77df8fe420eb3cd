import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from gamerl.snake_env import (
    ACTIONS,
    CELL,
    COLORS,
    Action,
    ConfigError,
    EnvConfig,
    GameStateError,
    Winner,
    board_png_bytes,
    cell_origin,
    new_game,
    render_board_image,
    replay,
    state_hash,
    step,
    winner,
)

from conftest import make_state

U, D, L, R = Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT


def test_action_deltas():
    assert U.delta == (0, 1)
    assert D.delta == (0, -1)
    assert L.delta == (-1, 0)
    assert R.delta == (1, 0)
    assert Action.parse(" right ") is R


def test_new_game_deterministic():
    a, b = new_game(EnvConfig(seed=7)), new_game(EnvConfig(seed=7))
    assert a == b
    # frozen once from the implementation
    assert a.snakes[0].body == ((6, 7),)
    assert a.snakes[1].body == ((7, 8),)
    assert a.apples == ((3, 8), (5, 6), (6, 5), (8, 8), (9, 5))
    assert state_hash(a) == "1545b731ba2694f94ce0ec2f282b52662222c14e978b0a3b19b87727ab57eded"


def test_new_game_cells_disjoint():
    for seed in range(50):
        s = new_game(EnvConfig(seed=seed))
        cells = [s.snakes[0].head, s.snakes[1].head, *s.apples]
        assert len(set(cells)) == 7
        assert all(len(sn) == 1 for sn in s.snakes)
        assert s.turn == 0


def test_seeds_give_different_placements():
    base = new_game(EnvConfig(seed=7))
    assert any(new_game(EnvConfig(seed=s)).to_dict() != base.to_dict() for s in range(8, 108))


def test_board_too_small():
    with pytest.raises(ConfigError):
        new_game(EnvConfig(board_w=2, board_h=2, num_apples=3))
    with pytest.raises(ConfigError):
        EnvConfig(num_apples=0)


def test_wall_death(build):
    s = build([(0, 0)], [(5, 5)], [(9, 9)])
    nxt, out = step(s, (L, U))
    assert out.deaths == (True, False)
    assert not nxt.snakes[0].alive
    assert winner(nxt) is Winner.SNAKE2


def test_eating_grows_and_respawns(build):
    s = build([(2, 2)], [(7, 7)], [(2, 3), (0, 9), (9, 0), (5, 0), (0, 5)])
    nxt, out = step(s, (U, L))
    sn = nxt.snakes[0]
    assert sn.score == 1 and len(sn) == 2 and sn.body == ((2, 3), (2, 2))
    assert out.apples_eaten == (1, 0)
    assert (2, 3) not in nxt.apples
    assert len(nxt.apples) == 5


def test_tail_moves_without_apple(build):
    s = build([(3, 3), (3, 2), (3, 1)], [(8, 8)], [(0, 9)])
    nxt, _ = step(s, (U, D))
    assert nxt.snakes[0].body == ((3, 4), (3, 3), (3, 2))


def test_tail_cell_is_not_vacated_same_tick(build):
    # head chases its own tail: fatal under pre-move body checking
    s = build([(1, 1), (2, 1), (2, 2), (1, 2)], [(8, 8)], [(9, 0)])
    nxt, out = step(s, (U, D))
    assert out.deaths[0]


def test_head_to_head_kills_both(build):
    s = build([(3, 3)], [(5, 3)], [(9, 9)], scores=(0, 0))
    nxt, out = step(s, (R, L))
    assert out.deaths == (True, True)
    assert winner(nxt) is Winner.DRAW


def test_simultaneous_death_score_tiebreak(build):
    s = build([(0, 0)], [(9, 9)], [(5, 5)], scores=(3, 1))
    nxt, _ = step(s, (L, R))
    assert winner(nxt) is Winner.SNAKE1


def test_winner_rules(build):
    assert winner(build([(1, 1)], [(5, 5)], [(9, 9)])) is Winner.ONGOING
    assert winner(build([(1, 1)], [(5, 5)], [(9, 9)], alive=(False, True))) is Winner.SNAKE2
    cfg = EnvConfig(max_turns=10)
    assert winner(build([(1, 1)], [(5, 5)], [(9, 9)], turn=10, config=cfg, scores=(4, 4))) is Winner.DRAW
    assert winner(build([(1, 1)], [(5, 5)], [(9, 9)], turn=10, config=cfg, scores=(2, 4))) is Winner.SNAKE2


def test_step_on_finished_game_raises(build):
    s = build([(1, 1)], [(5, 5)], [(9, 9)], alive=(False, True))
    with pytest.raises(GameStateError):
        step(s, (U, U))


def test_border_moves_never_survive():
    cfg = EnvConfig()
    border = [(x, y) for x in range(10) for y in range(10) if x in (0, 9) or y in (0, 9)]
    for cell in border:
        for a in ACTIONS:
            nx, ny = cell[0] + a.delta[0], cell[1] + a.delta[1]
            if 0 <= nx < 10 and 0 <= ny < 10:
                continue
            other = (5, 5) if cell != (5, 5) else (4, 4)
            s = make_state([cell], [other], [(4, 5) if cell != (4, 5) else (6, 6)], config=cfg)
            _, out = step(s, (a, U))
            assert out.deaths[0], (cell, a)


def _check_invariants(s):
    for sn in s.snakes:
        if not sn.alive:
            continue
        for c in sn.body:
            assert 0 <= c[0] < 10 and 0 <= c[1] < 10
        for p, q in zip(sn.body, sn.body[1:]):
            assert abs(p[0] - q[0]) + abs(p[1] - q[1]) == 1
        assert len(set(sn.body)) == len(sn.body)
    if all(sn.alive for sn in s.snakes):
        b1, b2 = set(s.snakes[0].body), set(s.snakes[1].body)
        assert not b1 & b2
        assert not (b1 | b2) & set(s.apples)
        assert len(s.apples) == s.config.num_apples


def test_fuzz_random_steps():
    rng = np.random.default_rng(0)
    steps = 0
    while steps < 10_000:
        s = new_game(EnvConfig(seed=int(rng.integers(1 << 30))))
        while not s.done and steps < 10_000:
            before = [sn.score for sn in s.snakes]
            s, _ = step(s, (ACTIONS[rng.integers(4)], ACTIONS[rng.integers(4)]))
            steps += 1
            assert all(sn.score >= b for sn, b in zip(s.snakes, before))
            _check_invariants(s)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.tuples(st.sampled_from(ACTIONS), st.sampled_from(ACTIONS)), max_size=40))
def test_replay_determinism(seed, moves):
    cfg = EnvConfig(seed=seed)
    played = []
    s = new_game(cfg)
    for pair in moves:
        if s.done:
            break
        s, _ = step(s, pair)
        played.append(pair)
    again = replay(cfg, played)
    assert again == s
    assert state_hash(again) == state_hash(s)


def test_replay_golden():
    st_ = replay(EnvConfig(seed=3), [(U, D), (L, R), (U, U)])
    assert state_hash(st_) == "d0bee94fc58e87a9f26aa97203391579f7c8699f0744fb2e0712c20829d3bded"


def test_dict_round_trip():
    s = new_game(EnvConfig(seed=11))
    s, _ = step(s, (U, D))
    again = type(s).from_dict(s.to_dict(), s.config)
    assert again.to_dict() == s.to_dict()


def _pixels(state):
    return np.asarray(Image.open(io.BytesIO(board_png_bytes(state))).convert("RGB"))


def _cell_color(img, state, x, y):
    x0, y0 = cell_origin(state, x, y)
    return tuple(int(v) for v in img[y0 + CELL // 2, x0 + CELL // 2])


def test_render_is_deterministic(build):
    s = build([(2, 2), (2, 1)], [(6, 6)], [(0, 0), (9, 9)])
    assert board_png_bytes(s) == board_png_bytes(s)


def test_render_bottom_left_apple(build):
    s = build([(2, 2)], [(6, 6)], [(0, 0)])
    img = _pixels(s)
    assert _cell_color(img, s, 0, 0) == COLORS["apple"]
    assert _cell_color(img, s, 0, 9) == COLORS["background"]


def test_render_colored_cell_count(build):
    s = build([(2, 2), (2, 1), (3, 1)], [(6, 6), (6, 7)], [(0, 0), (9, 9), (4, 8)])
    img = _pixels(s)
    colored = sum(_cell_color(img, s, x, y) != COLORS["background"] for x in range(10) for y in range(10))
    assert colored == 3 + 2 + 3
    assert _cell_color(img, s, 2, 2) == COLORS["snake1_head"]
    assert _cell_color(img, s, 3, 1) == COLORS["snake1_body"]
    assert _cell_color(img, s, 6, 7) == COLORS["snake2_body"]
    assert render_board_image(s).size == img.shape[1::-1]

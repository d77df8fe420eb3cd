import pytest

from gamerl import verify
from gamerl.move_oracle import assess
from gamerl.verify import brute_force_assess, oracle_disagreements, random_reachable_states, run_suites

from conftest import make_state


def test_reachable_states_are_live_and_seeded():
    a = random_reachable_states(50, seed=3)
    assert len(a) == 50 and all(not s.done for s in a)
    assert [s.turn for s in a] == [s.turn for s in random_reachable_states(50, seed=3)]


def test_brute_force_on_corner():
    s = make_state([(0, 0), (1, 0)], [(6, 6)], [(0, 3)])
    labels = brute_force_assess(s, 1)
    assert {a.name for a in labels.fatal} == {"DOWN", "LEFT", "RIGHT"}
    assert {a.name for a in labels.best} == {"UP"}


def test_head_to_head_is_not_deterministic_death():
    # moving right meets the enemy head only if the enemy moves left
    s = make_state([(3, 3)], [(5, 3)], [(9, 9)])
    assert "RIGHT" not in {a.name for a in brute_force_assess(s, 1).fatal}
    assert assess(s, 1).fatal == brute_force_assess(s, 1).fatal


def test_no_disagreements_on_sample():
    assert oracle_disagreements(random_reachable_states(150, seed=5)) == []


@pytest.mark.parametrize("name", ["reward", "rloo", "pass_at_k", "kernels"])
def test_quick_suites_pass(name):
    (res,) = run_suites([name])
    assert res.ok, res.detail


def test_crashing_check_is_reported(monkeypatch):
    def boom():
        raise RuntimeError("kaput")

    monkeypatch.setitem(verify.SUITES, "boom", boom)
    (res,) = run_suites(["boom"])
    assert not res.ok and "kaput" in res.detail
    with pytest.raises(KeyError):
        run_suites(["missing"])

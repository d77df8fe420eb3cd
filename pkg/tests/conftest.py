import pytest

from gamerl.snake_env import EnvConfig, GameState, SnakeState


def make_state(body1, body2, apples, turn=0, config=None, alive=(True, True), scores=(0, 0)):
    """Hand-built state; bodies are head-first coordinate lists."""
    config = config or EnvConfig()
    data = {
        "turn": turn,
        "snakes": [
            {"id": 1, "body": [list(c) for c in body1], "alive": alive[0], "score": scores[0]},
            {"id": 2, "body": [list(c) for c in body2], "alive": alive[1], "score": scores[1]},
        ],
        "apples": [list(a) for a in apples],
    }
    return GameState.from_dict(data, config)


@pytest.fixture
def build():
    return make_state


@pytest.fixture
def small_cfg():
    return EnvConfig(seed=5)


def pytest_collection_modifyitems(config, items):
    # training checks go last so quick failures surface first
    items.sort(key=lambda it: it.get_closest_marker("slow") is not None)

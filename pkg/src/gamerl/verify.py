"""Independent re-derivation of labels and the quick invariant suites behind ``gamerl verify``."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .move_oracle import MoveAssessment, assess
from .snake_env import ACTIONS, EnvConfig, GameState, new_game, step


def brute_force_assess(state: GameState, snake_id: int) -> MoveAssessment:
    """Labels obtained by simulating every move pair with the real step function.

    A move is fatal when the snake dies under all four opponent replies,
    i.e. the death does not depend on what the opponent does.
    """
    idx = 0 if snake_id == 1 else 1
    fatal = set()
    for mine in ACTIONS:
        deaths = 0
        for theirs in ACTIONS:
            pair = (mine, theirs) if idx == 0 else (theirs, mine)
            nxt, _ = step(state, pair)
            deaths += not nxt.snakes[idx].alive
        if deaths == len(ACTIONS):
            fatal.add(mine)
    head = state.snake(snake_id).head
    apples = sorted(state.apples, key=lambda c: (abs(c[0] - head[0]) + abs(c[1] - head[1]), c[0], c[1]))
    target = apples[0] if apples else None
    safe = [a for a in ACTIONS if a not in fatal]
    toward = set()
    if target is not None:
        d0 = abs(target[0] - head[0]) + abs(target[1] - head[1])
        for a in safe:
            dx, dy = a.delta
            if abs(target[0] - head[0] - dx) + abs(target[1] - head[1] - dy) < d0:
                toward.add(a)
    best = toward or set(safe)
    return MoveAssessment(frozenset(fatal), target, frozenset(toward), frozenset(best))


def random_reachable_states(n: int, seed: int = 0, config: EnvConfig = EnvConfig()) -> list[GameState]:
    """Ongoing states from games played with uniformly random moves (half the
    moves avoid immediate walls so games last long enough to grow snakes)."""
    rng = np.random.default_rng([seed, 17])
    out: list[GameState] = []
    while len(out) < n:
        state = new_game(config.with_seed(int(rng.integers(2**31))))
        while not state.done and len(out) < n:
            out.append(state)
            acts = []
            for s in state.snakes:
                legal = [a for a in ACTIONS if state.in_bounds((s.head[0] + a.delta[0], s.head[1] + a.delta[1]))]
                pool = legal if rng.random() < 0.5 else list(ACTIONS)
                acts.append(pool[int(rng.integers(len(pool)))])
            state, _ = step(state, (acts[0], acts[1]))
    return out


def oracle_disagreements(states, rng_seed: int = 0) -> list[tuple[int, int]]:
    """(state index, snake id) pairs where the fast and brute-force labels differ."""
    bad = []
    for i, st in enumerate(states):
        for sid in (1, 2):
            fast, slow = assess(st, sid), brute_force_assess(st, sid)
            if (fast.fatal, fast.best, fast.nearest_apple) != (slow.fatal, slow.best, slow.nearest_apple):
                bad.append((i, sid))
    return bad


# ---------------------------------------------------------------------------
# quick suites
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t)


def check_oracle(n: int = 2000) -> tuple[bool, str]:
    bad = oracle_disagreements(random_reachable_states(n, seed=1))
    return not bad, f"{len(bad)} disagreements over {n} states"


def check_rewards() -> tuple[bool, str]:
    from .reward import format_snake_response, score_response

    st = new_game(EnvConfig(seed=3))
    labels = assess(st, 1)
    good = format_snake_response(labels.canonical_best(), labels.fatal)
    cases = [
        (good, 1.1),
        ("junk " + good, 1.0),
        (format_snake_response(labels.canonical_best(), labels.fatal | {labels.canonical_best()}), 0.1),
        ("no tags at all", 0.0),
    ]
    wrong = [(t, want, score_response(t, labels).reward) for t, want in cases if abs(score_response(t, labels).reward - want) > 1e-12]
    return not wrong, f"{len(cases) - len(wrong)}/{len(cases)} cases"


def check_rloo(groups: int = 1000) -> tuple[bool, str]:
    from .rloo import rloo_advantages

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(groups):
        r = rng.choice([0.0, 0.1, 1.0, 1.1], size=int(rng.integers(2, 17)))
        a = rloo_advantages(r)
        worst = max(worst, abs(a.sum()), float(np.abs(rloo_advantages(r + 3.7) - a).max()))
    pair = rloo_advantages([1.1, 0.0])
    exact = pair[0] == 1.1 and pair[1] == -1.1
    return worst < 1e-9 and exact, f"max deviation {worst:.2e}; k=2 exact={exact}"


def check_pass_at_k() -> tuple[bool, str]:
    from fractions import Fraction

    from .harness import pass_at_k

    v = pass_at_k([[True, True, False, False]], 2, exact=True)
    return v == Fraction(5, 6), f"n=4 c=2 k=2 -> {v}"


def check_rotation(n: int = 12) -> tuple[bool, str]:
    from .rotation import RenderConfig, RotationDifficulty, builtin_meshes, make_instance, oracle_check

    meshes = builtin_meshes()
    rng = np.random.default_rng(0)
    cfg = RenderConfig(resolution=128)
    ok = 0
    for i in range(n):
        inst = make_instance(meshes[i % 3], RotationDifficulty.uncontrolled(), rng, meshes[3:], cfg)
        ok += oracle_check(inst)
    return ok == n, f"{ok}/{n} pixel-exact"


def check_gradients(probes: int = 10) -> tuple[bool, str]:
    from .nn import gradient_check

    worst = gradient_check(probes_per_layer=probes, seed=0)
    return worst < 1e-3, f"max relative error {worst:.2e}"


def check_kernels() -> tuple[bool, str]:
    from .kernels import col2im, im2col

    x = np.random.default_rng(0).normal(size=(2, 6, 6, 3)).astype(np.float32)
    a, b = im2col(x, backend="numba"), im2col(x, backend="numpy")
    c, d = col2im(a, x.shape, backend="numba"), col2im(a, x.shape, backend="numpy")
    same = np.array_equal(a, b) and np.array_equal(c, d)
    return same, "numba and numpy paths identical" if same else "backends differ"


SUITES: dict[str, Callable[[], tuple[bool, str]]] = {
    "oracle": check_oracle,
    "reward": check_rewards,
    "rloo": check_rloo,
    "pass_at_k": check_pass_at_k,
    "rotation": check_rotation,
    "gradients": check_gradients,
    "kernels": check_kernels,
}


def run_suites(names: Optional[list[str]] = None) -> list[CheckResult]:
    names = names or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suites: {unknown}")
    return [_timed(n, SUITES[n]) for n in names]

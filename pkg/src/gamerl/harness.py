"""Agents, head-to-head snake matches, rotation evaluation and pass@k."""

from __future__ import annotations

import json
import queue
import subprocess
import threading
import time
import urllib.request
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .move_oracle import assess, nearest_apple, manhattan, resolve_rotation_answer
from .prompts import PromptBundle, build_rotation_prompt, build_snake_prompt
from .reward import format_rotation_response, format_snake_response, parse_snake_response
from .snake_env import (
    ACTIONS,
    Action,
    EnvConfig,
    GameState,
    Winner,
    new_game,
    next_head,
    state_hash,
    step,
    winner,
)

DEFAULT_TIMEOUT = 60.0
MAX_TIMEOUTS = 10


class AgentTimeout(TimeoutError):
    pass


class Agent:
    """``act(bundle) -> text``. Subclasses may ignore ``timeout`` when they cannot block."""

    name = "agent"

    def act(self, bundle: PromptBundle, timeout: float = DEFAULT_TIMEOUT) -> str:
        raise NotImplementedError

    def close(self) -> None:
        pass


class OracleAgent(Agent):
    name = "oracle"

    def act(self, bundle, timeout=DEFAULT_TIMEOUT):
        if bundle.game == "rotation":
            return format_rotation_response(bundle.metadata["instance"].target.token)
        labels = assess(bundle.metadata["state"], bundle.snake_id)
        return format_snake_response(labels.canonical_best(), labels.fatal)


class RandomAgent(Agent):
    """Uniform over the four moves (or the answer list), always well formed."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng([seed, 23])

    def act(self, bundle, timeout=DEFAULT_TIMEOUT):
        if bundle.game == "rotation":
            opts = bundle.metadata["instance"].angle_set
            return format_rotation_response(opts[int(self.rng.integers(len(opts)))].token)
        move = ACTIONS[int(self.rng.integers(4))]
        return format_snake_response(move, ())


class GreedyAgent(Agent):
    """Steps toward the nearest apple, ignoring every hazard."""

    name = "greedy"

    def act(self, bundle, timeout=DEFAULT_TIMEOUT):
        state: GameState = bundle.metadata["state"]
        head = state.snake(bundle.snake_id).head
        target = nearest_apple(head, state.apples)
        move = Action.UP
        if target is not None:
            d0 = manhattan(head, target)
            for a in ACTIONS:
                if manhattan(next_head(head, a), target) < d0:
                    move = a
                    break
        return format_snake_response(move, ())


class ConstantAgent(Agent):
    """Always returns the same text (handy for baselines and tests)."""

    def __init__(self, text: str, name: str = "constant"):
        self.text = text
        self.name = name

    def act(self, bundle, timeout=DEFAULT_TIMEOUT):
        return self.text


class PolicyNetAgent(Agent):
    """Plays the masked greedy move of a trained policy network.

    Keeps its own grid history per snake; a turn-0 state starts a new game.
    The worst-move answer is the set of moves the action mask removes.
    """

    name = "ppo"

    def __init__(self, net):
        self.net = net
        self.history: dict = {}

    @classmethod
    def from_checkpoint(cls, path) -> "PolicyNetAgent":
        from .nn import ConvPolicyNet

        return cls(ConvPolicyNet.load(path))

    def act(self, bundle, timeout=DEFAULT_TIMEOUT):
        from .ppo import HISTORY, encode_grid, encode_obs, fatal_mask

        state: GameState = bundle.metadata["state"]
        sid = bundle.snake_id
        if state.turn == 0 or sid not in self.history:
            self.history[sid] = deque(maxlen=HISTORY)
        hist = self.history[sid]
        logits, _ = self.net.forward(encode_obs(state, sid, hist))
        mask = fatal_mask(state, sid)
        move = ACTIONS[int(np.argmax(np.where(mask, -np.inf, logits)))]
        hist.append(encode_grid(state, sid))
        return format_snake_response(move, assess(state, sid).fatal)


def builtin_agents(seed: int = 0) -> dict[str, Agent]:
    return {"oracle": OracleAgent(), "random": RandomAgent(seed), "greedy": GreedyAgent()}


# ---------------------------------------------------------------------------
# external agents
#
# request  {"id": str, "prompt": str, "images": [path, ...]}
# response {"id": str, "text": str}
# One JSON object per line on stdin/stdout, or one HTTP POST per request
# with the same bodies.
# ---------------------------------------------------------------------------


def wire_request(req_id: str, bundle: PromptBundle, image_paths: Sequence[str] = ()) -> dict:
    return {"id": req_id, "prompt": bundle.text, "images": [str(p) for p in image_paths]}


class SubprocessAgent(Agent):
    """External agent speaking JSON lines over the child's stdin/stdout.

    Replies whose ``id`` does not match the pending request (late answers
    to a request that already timed out) are discarded.
    """

    def __init__(self, command: Sequence[str], name: str = "subprocess", image_dir=None):
        self.name = name
        self.image_dir = Path(image_dir) if image_dir else None
        self.proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )
        self._lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()
        self._n = 0

    def _pump(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def act(self, bundle, timeout=DEFAULT_TIMEOUT):
        self._n += 1
        req_id = f"{self.name}-{self._n}"
        images = _materialize_images(bundle, self.image_dir, req_id)
        self.proc.stdin.write(json.dumps(wire_request(req_id, bundle, images)) + "\n")
        self.proc.stdin.flush()
        deadline = time.monotonic() + timeout
        while True:
            try:
                line = self._lines.get(timeout=max(0.0, deadline - time.monotonic()))
            except queue.Empty:
                raise AgentTimeout(f"{self.name}: no reply within {timeout}s") from None
            if line is None:
                raise RuntimeError(f"{self.name}: agent process exited")
            try:
                reply = json.loads(line)
            except json.JSONDecodeError:
                continue
            if reply.get("id") == req_id:
                return str(reply.get("text", ""))

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class HttpAgent(Agent):
    def __init__(self, url: str, name: str = "http", image_dir=None):
        self.url = url
        self.name = name
        self.image_dir = Path(image_dir) if image_dir else None
        self._n = 0

    def act(self, bundle, timeout=DEFAULT_TIMEOUT):
        self._n += 1
        req_id = f"{self.name}-{self._n}"
        images = _materialize_images(bundle, self.image_dir, req_id)
        body = json.dumps(wire_request(req_id, bundle, images)).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                reply = json.loads(resp.read().decode())
        except TimeoutError as exc:
            raise AgentTimeout(str(exc)) from exc
        return str(reply.get("text", ""))


def _materialize_images(bundle: PromptBundle, directory: Optional[Path], req_id: str) -> list[str]:
    """Write the bundle's images to PNG files so an external agent can read them."""
    if directory is None:
        return list(bundle.image_refs)
    from .rotation import png_bytes
    from .snake_env import board_png_bytes

    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    if bundle.game == "snake":
        p = directory / f"{req_id}.png"
        p.write_bytes(board_png_bytes(bundle.metadata["state"]))
        paths.append(str(p))
    else:
        inst = bundle.metadata["instance"]
        for tag, img in zip(("example_init", "example_rot", "task_init", "task_rot"),
                            (inst.example_init, inst.example_rot, inst.image_init, inst.image_rot)):
            p = directory / f"{req_id}-{tag}.png"
            p.write_bytes(png_bytes(img))
            paths.append(str(p))
    return paths


# ---------------------------------------------------------------------------
# matches
# ---------------------------------------------------------------------------


@dataclass
class MatchResult:
    winner: str  # "A", "B" or "Draw"
    scores: tuple[int, int]
    turns: int
    replay: Optional[str] = None
    forfeit: Optional[str] = None
    fallbacks: tuple[int, int] = (0, 0)
    final_hash: str = ""


@dataclass
class _Seat:
    agent: Agent
    timeouts: int = 0
    fallbacks: int = 0
    last: Optional[Action] = None


def _choose(seat: _Seat, state: GameState, sid: int, rng, timeout: float, with_instruction: bool) -> Action:
    bundle = build_snake_prompt(state, sid, with_instruction=with_instruction)
    try:
        move = parse_snake_response(seat.agent.act(bundle, timeout)).best
    except AgentTimeout:
        seat.timeouts += 1
        move = None
    except Exception:
        move = None
    if move is None:
        seat.fallbacks += 1
        if seat.last is not None:
            move = seat.last
        else:
            me = state.snake(sid)
            legal = [a for a in ACTIONS if state.in_bounds(next_head(me.head, a)) and next_head(me.head, a) not in state.occupied()]
            pool = legal or list(ACTIONS)
            move = pool[int(rng.integers(len(pool)))]
    seat.last = move
    return move


_LABEL = {Winner.SNAKE1: "A", Winner.SNAKE2: "B", Winner.DRAW: "Draw"}


def play_match(
    agent_a: Agent,
    agent_b: Agent,
    seed: int,
    config: EnvConfig = EnvConfig(),
    replay_path=None,
    timeout: float = DEFAULT_TIMEOUT,
    with_instruction: bool = True,
) -> MatchResult:
    """Agent A drives snake 1 and agent B snake 2. Both answer each turn before the step.

    The parsed best move is played; an unparseable answer or a timeout
    falls back to the agent's previous move, else a uniform random move
    that does not hit a wall or body. More than ``MAX_TIMEOUTS`` timeouts
    forfeits the match.
    """
    state = new_game(config.with_seed(seed))
    rng = np.random.default_rng([seed, 29])
    seats = (_Seat(agent_a), _Seat(agent_b))
    lines = [{"kind": "header", "seed": seed, "config": _config_dict(config), "agents": [agent_a.name, agent_b.name]}]
    forfeit = None
    while not state.done:
        acts = tuple(_choose(seats[i], state, i + 1, rng, timeout, with_instruction) for i in range(2))
        state, _ = step(state, acts)
        lines.append({"turn": state.turn, "actions": [a.name for a in acts], "state_hash": state_hash(state)})
        over = [i for i in range(2) if seats[i].timeouts > MAX_TIMEOUTS]
        if over:
            forfeit = "AB"[over[0]] if len(over) == 1 else "both"
            break
    if forfeit is None:
        result = _LABEL[winner(state)]
    else:
        result = {"A": "B", "B": "A", "both": "Draw"}[forfeit]
    lines.append({"kind": "result", "winner": result, "forfeit": forfeit, "scores": [s.score for s in state.snakes]})
    ref = None
    if replay_path is not None:
        Path(replay_path).parent.mkdir(parents=True, exist_ok=True)
        Path(replay_path).write_text("".join(json.dumps(x, sort_keys=True) + "\n" for x in lines))
        ref = str(replay_path)
    return MatchResult(
        winner=result,
        scores=(state.snakes[0].score, state.snakes[1].score),
        turns=state.turn,
        replay=ref,
        forfeit=forfeit,
        fallbacks=(seats[0].fallbacks, seats[1].fallbacks),
        final_hash=state_hash(state),
    )


def _config_dict(config: EnvConfig) -> dict:
    from dataclasses import asdict

    return asdict(config)


def replay_match(path) -> tuple[GameState, str]:
    """Re-simulate a replay file; returns the final state and the recomputed winner.

    Raises ``ValueError`` when a recorded state hash does not match.
    """
    rows = [json.loads(x) for x in Path(path).read_text().splitlines() if x.strip()]
    header = rows[0]
    config = EnvConfig(**header["config"]).with_seed(header["seed"])
    state = new_game(config)
    for row in rows[1:]:
        if row.get("kind") == "result":
            if row.get("forfeit"):
                return state, row["winner"]
            break
        state, _ = step(state, tuple(Action[a] for a in row["actions"]))
        if state_hash(state) != row["state_hash"]:
            raise ValueError(f"replay diverged at turn {row['turn']}")
    return state, _LABEL[winner(state)]


@dataclass
class TournamentResult:
    a_wins: int
    b_wins: int
    draws: int
    matches: list[MatchResult] = field(default_factory=list)

    def counts(self) -> tuple[int, int, int]:
        return self.a_wins, self.b_wins, self.draws


def tournament(agent_a: Agent, agent_b: Agent, n: int = 10, seed: int = 0, config: EnvConfig = EnvConfig(), replay_dir=None, **kw) -> TournamentResult:
    """``n`` matches on seeds ``seed, seed+1, ...``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    results = []
    for i in range(n):
        path = Path(replay_dir) / f"match_{i:03d}.jsonl" if replay_dir else None
        results.append(play_match(agent_a, agent_b, seed + i, config, replay_path=path, **kw))
    return TournamentResult(
        a_wins=sum(r.winner == "A" for r in results),
        b_wins=sum(r.winner == "B" for r in results),
        draws=sum(r.winner == "Draw" for r in results),
        matches=results,
    )


# ---------------------------------------------------------------------------
# rotation evaluation and pass@k
# ---------------------------------------------------------------------------


def eval_rotation(agent: Agent, instances: Sequence, seed: int = 0, timeout: float = DEFAULT_TIMEOUT) -> float:
    """Fraction of instances answered correctly (bare "90" resolves within the angle set)."""
    if not instances:
        raise ValueError("no instances to evaluate")
    from .reward import parse_rotation_response

    rng = np.random.default_rng([seed, 31])
    hits = 0
    for inst in instances:
        text = agent.act(build_rotation_prompt(inst, rng), timeout)
        answer = parse_rotation_response(text).answer
        hits += resolve_rotation_answer(answer, inst.angle_set) is inst.target
    return hits / len(instances)


def pass_at_k(outcomes, k: int, exact: bool = False):
    """Mean over problems of ``1 - C(n-c, k) / C(n, k)``.

    ``outcomes`` is a sequence of per-problem boolean sequences. With
    ``exact`` the result is a :class:`fractions.Fraction`.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    vals = []
    for row in outcomes:
        n = len(row)
        c = int(sum(bool(x) for x in row))
        if k > n:
            raise ValueError(f"k={k} exceeds the {n} samples of a problem")
        vals.append(1 - Fraction(comb(n - c, k), comb(n, k)))
    if not vals:
        raise ValueError("no problems")
    mean = sum(vals, Fraction(0)) / len(vals)
    return mean if exact else float(mean)

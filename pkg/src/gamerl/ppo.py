"""PPO self-play trainer for the snake policy network."""

from __future__ import annotations

import csv
import logging
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .move_oracle import assess
from .nn import Adam, ConvPolicyNet, softmax_logprob_entropy
from .snake_env import ACTIONS, Action, EnvConfig, GameState, board_key, new_game, step

log = logging.getLogger(__name__)

HISTORY = 3
CODE_EMPTY, CODE_APPLE, CODE_OWN, CODE_OTHER = 0.0, 1.0, 2.0, 3.0


@dataclass
class PPOConfig:
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    minibatch: int = 32
    epochs: int = 4
    gamma: float = 0.99
    lr: float = 1e-3
    buffer_size: int = 2048
    normalize_advantages: bool = False
    head_scale: float = 1.0


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------


def encode_grid(state: GameState, snake_id: int) -> np.ndarray:
    """``(H, W)`` grid: 0 empty, 1 apple, 2 own body, 3 other body.

    Cell ``(x, y)`` sits at ``[H-1-y, x]`` so row 0 is the top of the board.
    """
    cfg = state.config
    h = cfg.board_h
    g = np.zeros((h, cfg.board_w), dtype=np.float32)
    for x, y in state.apples:
        g[h - 1 - y, x] = CODE_APPLE
    for s in state.snakes:
        code = CODE_OWN if s.id == snake_id else CODE_OTHER
        for x, y in s.body:
            if state.in_bounds((x, y)):
                g[h - 1 - y, x] = code
    return g


def encode_obs(state: GameState, snake_id: int, history: Sequence[np.ndarray] = ()) -> np.ndarray:
    """``(H, W, 4)`` stack of grids, channel 0 oldest and channel 3 current.

    ``history`` holds up to three earlier grids, oldest first; missing
    leading slots are filled with the current grid.
    """
    cur = encode_grid(state, snake_id)
    past = list(history)[-HISTORY:]
    frames = [cur] * (HISTORY - len(past)) + past + [cur]
    return np.stack(frames, axis=-1)


def fatal_mask(state: GameState, snake_id: int) -> np.ndarray:
    """Boolean mask of deterministic-death moves; all False if every move is fatal."""
    fatal = assess(state, snake_id).fatal
    m = np.array([a in fatal for a in ACTIONS])
    if m.all():
        m[:] = False
    return m


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


class RolloutBuffer:
    def __init__(self, capacity: int = 2048, obs_shape=(10, 10, 4)):
        self.capacity = capacity
        self.obs = np.zeros((capacity, *obs_shape), dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.logprobs = np.zeros(capacity, dtype=np.float32)
        self.values = np.zeros(capacity, dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=bool)
        self.masks = np.zeros((capacity, len(ACTIONS)), dtype=bool)
        self.streams = np.zeros(capacity, dtype=np.int64)
        self.bootstrap: dict[int, float] = {}
        self.ptr = 0

    def __len__(self) -> int:
        return self.ptr

    @property
    def full(self) -> bool:
        return self.ptr >= self.capacity

    def clear(self) -> None:
        self.ptr = 0
        self.bootstrap = {}

    def add(self, obs, action, logprob, value, reward, done, mask, stream) -> None:
        if self.full:
            raise RuntimeError("rollout buffer is full")
        i = self.ptr
        self.obs[i] = obs
        self.actions[i] = action
        self.logprobs[i] = logprob
        self.values[i] = value
        self.rewards[i] = reward
        self.dones[i] = done
        self.masks[i] = mask
        self.streams[i] = stream
        self.ptr += 1

    def returns(self, gamma: float) -> np.ndarray:
        """Discounted returns per stream; truncated streams bootstrap from the stored value."""
        G = np.zeros(self.ptr, dtype=np.float64)
        running: dict[int, float] = {}
        for i in range(self.ptr - 1, -1, -1):
            s = int(self.streams[i])
            if s not in running:
                running[s] = 0.0 if self.dones[i] else float(self.bootstrap.get(s, 0.0))
            if self.dones[i]:
                running[s] = 0.0
            running[s] = float(self.rewards[i]) + gamma * running[s]
            G[i] = running[s]
        return G


def sample_masked(logits: np.ndarray, mask: np.ndarray, rng: np.random.Generator):
    probs, logp, _ = softmax_logprob_entropy(np.asarray(logits, dtype=np.float64), mask)
    a = int(rng.choice(len(probs), p=probs))
    return a, float(logp[a])


class SelfPlayCollector:
    """Runs self-play games with one shared network; episodes span buffer fills."""

    def __init__(self, env_config: EnvConfig = EnvConfig(), seed: int = 0):
        self.env_config = env_config
        self.rng = np.random.default_rng(seed)
        self.episode = -1
        self.finished: list[dict] = []
        self._reset()

    def _reset(self) -> None:
        self.episode += 1
        self.state = new_game(self.env_config.with_seed(int(self.rng.integers(2**31))))
        self.history = {1: deque(maxlen=HISTORY), 2: deque(maxlen=HISTORY)}

    def collect(self, net: ConvPolicyNet, buffer: RolloutBuffer) -> RolloutBuffer:
        buffer.clear()
        while not buffer.full:
            st = self.state
            obs = np.stack([encode_obs(st, sid, self.history[sid]) for sid in (1, 2)])
            masks = np.stack([fatal_mask(st, sid) for sid in (1, 2)])
            logits, values = net.forward(obs)
            picks = [sample_masked(logits[k], masks[k], self.rng) for k in range(2)]
            nxt, out = step(st, (Action(picks[0][0]), Action(picks[1][0])))
            done = nxt.done
            for k, sid in enumerate((1, 2)):
                r = float(out.apples_eaten[k]) - (1.0 if out.deaths[k] else 0.0)
                buffer.add(obs[k], picks[k][0], picks[k][1], values[k], r, done, masks[k], self.episode * 2 + k)
                self.history[sid].append(obs[k][..., -1])
            self.state = nxt
            if done:
                self.finished.append({"apples": [s.score for s in nxt.snakes], "turns": nxt.turn})
                self._reset()
        if not self.state.done and self.state.turn > 0:
            obs = np.stack([encode_obs(self.state, sid, self.history[sid]) for sid in (1, 2)])
            _, values = net.forward(obs)
            for k in range(2):
                buffer.bootstrap[self.episode * 2 + k] = float(values[k])
        return buffer


def collect_rollouts(env_config: EnvConfig, net: ConvPolicyNet, buffer: RolloutBuffer, seed: int = 0) -> RolloutBuffer:
    """Fill ``buffer`` with fresh self-play transitions."""
    return SelfPlayCollector(env_config, seed).collect(net, buffer)


# ---------------------------------------------------------------------------
# update
# ---------------------------------------------------------------------------


def ppo_minibatch_grads(net: ConvPolicyNet, batch: dict, cfg: PPOConfig):
    """Loss statistics and parameter gradients of the clipped PPO loss on one minibatch."""
    logits, values = net.forward(batch["obs"])
    probs, logp, ent = softmax_logprob_entropy(logits.astype(np.float64), batch["masks"])
    M, A = logits.shape
    idx = np.arange(M)
    acts = batch["actions"]
    adv = batch["adv"]
    ratio = np.exp(logp[idx, acts] - batch["logp_old"])
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr = np.minimum(ratio * adv, clipped * adv)
    active = ratio * adv <= clipped * adv

    onehot = np.zeros((M, A))
    onehot[idx, acts] = 1.0
    d_logp = np.where(active, -adv * ratio, 0.0)[:, None]
    dlogits = d_logp * (onehot - probs)
    safe_logp = np.where(probs > 0, logp, 0.0)
    dlogits += cfg.entropy_coef * probs * (safe_logp + ent[:, None])
    dlogits /= M

    err = batch["returns"] - values.astype(np.float64)
    dvalue = -2.0 * cfg.value_coef * err / M
    grads = net.backward(dlogits.astype(net.dtype), dvalue.astype(net.dtype))
    stats = {
        "policy_loss": float(-surr.mean()),
        "value_loss": float((err**2).mean()),
        "entropy": float(ent.mean()),
        "clip_frac": float((np.abs(ratio - 1.0) > cfg.clip_eps).mean()),
        "surrogate": float(surr.mean()),
    }
    return stats, grads


def ppo_update(
    net: ConvPolicyNet,
    buffer: RolloutBuffer,
    cfg: PPOConfig,
    optimizer: Optional[Adam] = None,
    rng: Optional[np.random.Generator] = None,
) -> dict:
    """Several epochs of clipped-surrogate minibatch updates; returns mean losses."""
    if len(buffer) == 0:
        raise RuntimeError("empty rollout buffer")
    optimizer = optimizer or Adam(net.params, lr=cfg.lr)
    rng = rng or np.random.default_rng(0)
    n = len(buffer)
    returns = buffer.returns(cfg.gamma)
    adv = returns - buffer.values[:n]
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    totals: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = perm[start : start + cfg.minibatch]
            batch = {
                "obs": buffer.obs[mb],
                "actions": buffer.actions[mb],
                "logp_old": buffer.logprobs[mb].astype(np.float64),
                "masks": buffer.masks[mb],
                "adv": adv[mb],
                "returns": returns[mb],
            }
            stats, grads = ppo_minibatch_grads(net, batch, cfg)
            optimizer.step(grads)
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in totals.items()}


# ---------------------------------------------------------------------------
# policies, evaluation, training loop
# ---------------------------------------------------------------------------

Policy = Callable[[GameState, int, Sequence[np.ndarray], np.random.Generator], int]


def net_policy(net: ConvPolicyNet, greedy: bool = False) -> Policy:
    def act(state, sid, history, rng):
        obs = encode_obs(state, sid, history)
        logits, _ = net.forward(obs)
        mask = fatal_mask(state, sid)
        if greedy:
            return int(np.argmax(np.where(mask, -np.inf, logits)))
        return sample_masked(logits, mask, rng)[0]

    return act


def random_masked_policy(state, sid, history, rng) -> int:
    mask = fatal_mask(state, sid)
    legal = np.flatnonzero(~mask)
    return int(rng.choice(legal))


def play_episode(policy: Policy, env_config: EnvConfig, seed: int) -> GameState:
    """One self-play episode from ``new_game(seed)``; both snakes use ``policy``."""
    rng = np.random.default_rng([seed, 7])
    state = new_game(env_config.with_seed(seed))
    hist = {1: deque(maxlen=HISTORY), 2: deque(maxlen=HISTORY)}
    while not state.done:
        acts = []
        for sid in (1, 2):
            acts.append(Action(policy(state, sid, hist[sid], rng)))
        for sid in (1, 2):
            hist[sid].append(encode_grid(state, sid))
        state, _ = step(state, (acts[0], acts[1]))
    return state


def mean_apples(policy: Policy, env_config: EnvConfig, seeds: Sequence[int]) -> float:
    """Mean apples per snake per episode over the given seeds."""
    totals = [np.mean([s.score for s in play_episode(policy, env_config, int(sd)).snakes]) for sd in seeds]
    return float(np.mean(totals))


@dataclass
class TrainResult:
    net: ConvPolicyNet
    curve: list[dict] = field(default_factory=list)


def train_ppo(
    updates: int = 200,
    cfg: PPOConfig = PPOConfig(),
    env_config: EnvConfig = EnvConfig(),
    seed: int = 0,
    net: Optional[ConvPolicyNet] = None,
    callback: Optional[Callable[[int, dict], None]] = None,
) -> TrainResult:
    net = net or ConvPolicyNet(seed=seed, head_scale=cfg.head_scale)
    opt = Adam(net.params, lr=cfg.lr)
    collector = SelfPlayCollector(env_config, seed=seed + 1)
    buffer = RolloutBuffer(cfg.buffer_size)
    rng = np.random.default_rng(seed + 2)
    curve = []
    for u in range(updates):
        seen = len(collector.finished)
        collector.collect(net, buffer)
        stats = ppo_update(net, buffer, cfg, opt, rng)
        eps = collector.finished[seen:]
        stats["update"] = u
        stats["episodes"] = len(eps)
        stats["mean_apples"] = float(np.mean([np.mean(e["apples"]) for e in eps])) if eps else float("nan")
        stats["mean_return"] = float(buffer.rewards[: len(buffer)].sum() / max(1, 2 * len(eps))) if eps else float("nan")
        curve.append(stats)
        if callback:
            callback(u, stats)
        log.debug("update %d: %s", u, stats)
    return TrainResult(net=net, curve=curve)


def write_curve_csv(curve: list[dict], path) -> None:
    keys = ["update", "mean_return", "mean_apples", "episodes", "policy_loss", "value_loss", "entropy", "clip_frac"]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        for row in curve:
            w.writerow({k: row.get(k) for k in keys})


# ---------------------------------------------------------------------------
# state harvesting
# ---------------------------------------------------------------------------


def harvest_states(
    policy,
    n: int,
    snake_len_range: tuple[int, int] = (1, 5),
    seed: int = 0,
    env_config: EnvConfig = EnvConfig(),
    accept_prob: float = 0.35,
    step_budget: Optional[int] = None,
) -> list[GameState]:
    """Distinct mid-game states visited by self-play, filtered by snake length.

    ``policy`` is a :class:`ConvPolicyNet` or a policy callable. Each eligible
    visited state is kept with probability ``accept_prob`` (uniform thinning
    over visitation). Fewer than ``n`` states triggers a warning and a
    partial result.
    """
    if isinstance(policy, ConvPolicyNet):
        policy = net_policy(policy)
    lo, hi = snake_len_range
    rng = np.random.default_rng([seed, 11])
    budget = step_budget if step_budget is not None else max(10_000, 50 * n)
    out: list[GameState] = []
    seen: set = set()
    steps = 0
    while len(out) < n and steps < budget:
        state = new_game(env_config.with_seed(int(rng.integers(2**31))))
        hist = {1: deque(maxlen=HISTORY), 2: deque(maxlen=HISTORY)}
        while not state.done and len(out) < n and steps < budget:
            if all(lo <= len(s.body) <= hi for s in state.snakes) and rng.random() < accept_prob:
                key = board_key(state)
                if key not in seen:
                    seen.add(key)
                    out.append(state)
            acts = [Action(policy(state, sid, hist[sid], rng)) for sid in (1, 2)]
            for sid in (1, 2):
                hist[sid].append(encode_grid(state, sid))
            state, _ = step(state, (acts[0], acts[1]))
            steps += 1
    if len(out) < n:
        warnings.warn(f"harvested only {len(out)} of {n} states within {budget} steps", RuntimeWarning)
    return out


def config_dict(cfg: PPOConfig) -> dict:
    return asdict(cfg)

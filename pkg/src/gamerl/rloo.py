"""Leave-one-out group advantages and a KL-free policy-gradient loop.

The toy policy answers the best/worst-move question with two categorical
heads on the shared conv trunk: a best move (4 options) and a worst-move
set (16 subsets, bit ``a`` set when ``Action(a)`` is in the set). Sampled
answers are rendered to the tagged text format and scored by the reward
module, so the same reward path serves both toy and real policies.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .move_oracle import MoveAssessment, assess
from .nn import Adam, ConvPolicyNet, softmax_logprob_entropy
from .ppo import harvest_states, random_masked_policy
from .reward import format_snake_response, score_response
from .snake_env import ACTIONS, Action, EnvConfig, GameState, board_key

TOY_HEADS = (("best", 4), ("worst", 16))


def rloo_advantages(rewards) -> np.ndarray:
    """``A_i = r_i - mean(r_j for j != i)``, accumulated in float64."""
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    k = r.size
    if k < 2:
        raise ValueError(f"leave-one-out needs at least 2 rewards, got {k}")
    others = np.where(~np.eye(k, dtype=bool), r[None, :], 0.0).sum(axis=1)
    return r - others / (k - 1)


@dataclass
class RlooGroup:
    prompt_id: str
    responses: list[str]
    rewards: np.ndarray
    advantages: Optional[np.ndarray] = None
    # toy-policy extras: observation and sampled (best, worst-subset) indices
    obs: Optional[np.ndarray] = field(default=None, repr=False)
    choices: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.rewards.size < 2:
            raise ValueError("a group needs k >= 2 responses")
        if len(self.responses) != self.rewards.size:
            raise ValueError("responses and rewards differ in length")
        if self.advantages is None:
            self.advantages = rloo_advantages(self.rewards)

    @property
    def k(self) -> int:
        return int(self.rewards.size)


@dataclass
class RlooConfig:
    """Group size, rollout batch and sampling temperature. There is no KL term."""

    k: int = 8
    batch: int = 128
    temperature: float = 1.0
    lr: float = 3e-4
    updates: int = 22000
    time_budget_s: float = 270.0
    seed: int = 0
    # Without it the 16-way worst head locks onto "None" and stops exploring.
    entropy_coef: float = 0.05
    warmup: int = 1000  # linear lr ramp over this many updates
    decay: bool = True  # then linear decay to zero at ``updates``

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.batch % self.k:
            raise ValueError("batch must be a multiple of k")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def groups_per_batch(self) -> int:
        return self.batch // self.k

    def lr_at(self, update: int) -> float:
        """Learning rate for the 1-based ``update``."""
        scale = 1.0
        if self.warmup and update <= self.warmup:
            scale = update / self.warmup
        elif self.decay:
            span = max(1, self.updates - self.warmup)
            scale = max(0.0, 1.0 - (update - self.warmup) / span)
        return self.lr * scale


# ---------------------------------------------------------------------------
# toy policy
# ---------------------------------------------------------------------------


def subset_index(moves) -> int:
    return sum(1 << int(a) for a in moves)


def subset_moves(index: int) -> frozenset:
    return frozenset(a for a in ACTIONS if index >> int(a) & 1)


def toy_features(state: GameState, snake_id: int) -> np.ndarray:
    """Egocentric ``(2H-1, 2W-1, 4)`` planes centred on the snake's head.

    Channels: off-board, own body behind the head, enemy body, apples.
    Up on the board is up in the array. Centring makes "the cell above
    the head" the same input unit everywhere, which the small conv net
    needs to learn collision rules from a few thousand updates.
    """
    cfg = state.config
    sh, sw = 2 * cfg.board_h - 1, 2 * cfg.board_w - 1
    cy, cx = sh // 2, sw // 2
    hx, hy = state.snake(snake_id).head
    f = np.zeros((sh, sw, 4), dtype=np.float32)
    f[..., 0] = 1.0
    f[cy - (cfg.board_h - 1 - hy) : cy + hy + 1, cx - hx : cx + cfg.board_w - hx, 0] = 0.0
    planes = ((state.snake(snake_id).body[1:], 1), (state.other(snake_id).body, 2), (state.apples, 3))
    for cells, c in planes:
        for x, y in cells:
            if state.in_bounds((x, y)):
                f[cy - (y - hy), cx + (x - hx), c] = 1.0
    return f


def sample_choices(pb: np.ndarray, pw: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    B = pb.shape[0]
    out = np.empty((B, k, 2), dtype=np.int64)
    for b in range(B):
        out[b, :, 0] = rng.choice(4, size=k, p=pb[b])
        out[b, :, 1] = rng.choice(16, size=k, p=pw[b])
    return out


def toy_net(seed: int = 0, board: int = 10) -> ConvPolicyNet:
    """Narrow conv net over the egocentric ``2*board-1`` window."""
    return ConvPolicyNet(heads=TOY_HEADS, seed=seed, board=2 * board - 1, c1=8, c2=16, hidden=64)


class ToyPolicy:
    def __init__(self, seed: int = 0, net: Optional[ConvPolicyNet] = None):
        self.net = net or toy_net(seed)

    def distributions(self, obs: np.ndarray, temperature: float = 1.0):
        best_logits, worst_logits = self.net.forward(obs)
        pb = softmax_logprob_entropy(np.asarray(best_logits, dtype=np.float64) / temperature)[0]
        pw = softmax_logprob_entropy(np.asarray(worst_logits, dtype=np.float64) / temperature)[0]
        return pb, pw

    def sample(self, obs: np.ndarray, k: int, rng: np.random.Generator, temperature: float = 1.0) -> np.ndarray:
        """``(B, k, 2)`` sampled (best, worst-subset) indices."""
        return sample_choices(*self.distributions(obs, temperature), k, rng)
    def logprob(self, obs: np.ndarray, choices: np.ndarray, temperature: float = 1.0) -> np.ndarray:
        """``(B, k)`` log-probabilities of the given responses."""
        pb, pw = self.distributions(obs, temperature)
        b = np.arange(pb.shape[0])[:, None]
        return np.log(pb[b, choices[..., 0]]) + np.log(pw[b, choices[..., 1]])

    def greedy(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        best_logits, worst_logits = self.net.forward(obs)
        return np.argmax(best_logits, axis=-1), np.argmax(worst_logits, axis=-1)

    def render(self, best_idx: int, worst_idx: int) -> str:
        return format_snake_response(Action(int(best_idx)), subset_moves(int(worst_idx)))


def policy_gradient_step(
    policy: ToyPolicy,
    groups: Sequence[RlooGroup],
    config: RlooConfig,
    optimizer: Optional[Adam] = None,
    dists=None,
) -> dict:
    """One Adam step on ``-sum_groups sum_i A_i log pi(response_i)``, minus the optional entropy bonus."""
    optimizer = optimizer or Adam(policy.net.params, lr=config.lr)
    grads = policy_gradients(policy, groups, config.temperature, dists, config.entropy_coef)
    optimizer.step(grads)
    adv = np.concatenate([g.advantages for g in groups])
    rew = np.concatenate([g.rewards for g in groups])
    return {"mean_reward": float(rew.mean()), "mean_abs_advantage": float(np.abs(adv).mean())}


def policy_gradients(
    policy: ToyPolicy, groups: Sequence[RlooGroup], temperature: float = 1.0, dists=None, entropy_coef: float = 0.0
) -> dict:
    """Gradients of the RLOO loss.

    ``dists`` may pass the ``(pb, pw)`` of the most recent forward pass when
    it was run on exactly these groups' observations; the forward is skipped.
    """
    T = temperature
    if dists is None:
        pb, pw = policy.distributions(np.stack([g.obs for g in groups]), T)
    else:
        pb, pw = dists
    # d(-A log p_c)/dz = -A (onehot_c - p) / T, summed over the group
    d_best = pb * 0.0
    d_worst = pw * 0.0
    for i, g in enumerate(groups):
        a = np.asarray(g.advantages, dtype=np.float64)
        ch = np.asarray(g.choices)
        np.add.at(d_best[i], ch[:, 0], -a / T)
        np.add.at(d_worst[i], ch[:, 1], -a / T)
        d_best[i] += a.sum() * pb[i] / T
        d_worst[i] += a.sum() * pw[i] / T
    if entropy_coef:
        # -beta * k * H(p) per state; dH/dz = -p (log p + H) / T
        k = np.array([[g.k] for g in groups], dtype=np.float64)
        for d, p in ((d_best, pb), (d_worst, pw)):
            logp = np.log(np.maximum(p, 1e-300))
            H = -(p * logp).sum(axis=1, keepdims=True)
            d += entropy_coef * k * p * (logp + H) / T
    dt = policy.net.dtype
    return policy.net.backward_heads({"best": d_best.astype(dt), "worst": d_worst.astype(dt)})


# ---------------------------------------------------------------------------
# toy training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    state: GameState
    snake_id: int
    labels: MoveAssessment
    obs: np.ndarray


def make_problems(states: Sequence[GameState], seed: int, oracle=assess) -> list[Problem]:
    """Pair each state with a random live snake; drop problems with no best move."""
    rng = np.random.default_rng([seed, 3])
    out = []
    for st in states:
        sid = int(rng.integers(1, 3))
        labels = oracle(st, sid)
        if labels.best:
            out.append(Problem(st, sid, labels, toy_features(st, sid)))
    return out


def toy_problem_split(n_train: int = 20000, n_eval: int = 1000, seed: int = 0, snake_len_range=(1, 5)):
    """Disjoint train / held-out problem sets from random-masked self-play."""
    states = harvest_states(random_masked_policy, n_train + n_eval, snake_len_range, seed=seed, env_config=EnvConfig())
    train_states = states[:n_train]
    seen = {board_key(s) for s in train_states}
    eval_states = [s for s in states[n_train:] if board_key(s) not in seen]
    return make_problems(train_states, seed), make_problems(eval_states, seed + 1)


def best_move_accuracy(policy: ToyPolicy, problems: Sequence[Problem], greedy: bool = True, seed: int = 0) -> float:
    """Fraction of problems whose chosen best move is in the oracle best set."""
    obs = np.stack([p.obs for p in problems])
    if greedy:
        best, _ = policy.greedy(obs)
    else:
        best = policy.sample(obs, 1, np.random.default_rng(seed))[:, 0, 0]
    return float(np.mean([Action(int(b)) in p.labels.best for b, p in zip(best, problems)]))


@dataclass
class ToyResult:
    policy: ToyPolicy
    curve: list[dict]
    updates: int
    seconds: float


def train_toy(
    env_sampler: Callable[[np.random.Generator], Problem],
    oracle=assess,
    reward_fn=score_response,
    config: RlooConfig = RlooConfig(),
    policy: Optional[ToyPolicy] = None,
    plateau: Optional[Callable[[list[dict]], bool]] = None,
    callback: Optional[Callable[[int, dict], None]] = None,
) -> ToyResult:
    """Train the toy policy until ``plateau(curve)`` holds or the step/time budget runs out.

    ``env_sampler(rng)`` returns a :class:`Problem`; labels are recomputed
    with ``oracle`` and each rendered response is scored by ``reward_fn``.
    """
    policy = policy or ToyPolicy(seed=config.seed)
    opt = Adam(policy.net.params, lr=config.lr)
    rng = np.random.default_rng([config.seed, 5])
    curve: list[dict] = []
    start = time.perf_counter()
    u = 0
    for u in range(1, config.updates + 1):
        opt.state.lr = config.lr_at(u)
        probs = [env_sampler(rng) for _ in range(config.groups_per_batch)]
        obs = np.stack([p.obs for p in probs])
        dists = policy.distributions(obs, config.temperature)
        choices = sample_choices(*dists, config.k, rng)
        groups = []
        hits = 0
        for i, p in enumerate(probs):
            labels = oracle(p.state, p.snake_id)
            texts = [policy.render(b, w) for b, w in choices[i]]
            rewards = [reward_fn(t, labels).reward for t in texts]
            hits += sum(Action(int(b)) in labels.best for b, _ in choices[i])
            groups.append(RlooGroup(f"p{u}-{i}", texts, rewards, obs=p.obs, choices=choices[i]))
        stats = policy_gradient_step(policy, groups, config, opt, dists)
        stats["update"] = u
        stats["sample_best_acc"] = hits / config.batch
        curve.append(stats)
        if callback:
            callback(u, stats)
        if plateau is not None and plateau(curve):
            break
        if time.perf_counter() - start > config.time_budget_s:
            break
    return ToyResult(policy=policy, curve=curve, updates=u, seconds=time.perf_counter() - start)


def pool_sampler(problems: Sequence[Problem]) -> Callable[[np.random.Generator], Problem]:
    def sample(rng):
        return problems[int(rng.integers(len(problems)))]

    return sample


def reward_plateau(window: int = 50, min_updates: int = 200, target: float = 1.05) -> Callable[[list[dict]], bool]:
    """Stop once the windowed mean reward reaches ``target`` (1.1 is perfect)."""

    def check(curve):
        if len(curve) < max(window, min_updates):
            return False
        return float(np.mean([c["mean_reward"] for c in curve[-window:]])) >= target

    return check


def moving_average(values, window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        return v.copy()
    return np.convolve(v, np.ones(window) / window, mode="valid")

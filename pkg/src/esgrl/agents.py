"""On-policy actor-critic agents (A2C and PPO) for :class:`PortfolioEnv`.

Both algorithms share the rollout buffer, GAE advantages, a Gaussian actor
with a state-independent log-std, and a separate value network, each with
its own Adam optimizer.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .env import EpisodeResult, ObsStats, PortfolioEnv, run_episode

logger = logging.getLogger(__name__)

ALGORITHMS = ("A2C", "PPO")

_ALGO_DEFAULTS = {
    "A2C": dict(learning_rate=2e-4, rollout_length=5),
    "PPO": dict(learning_rate=1e-4, rollout_length=2048),
}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class AgentHyper:
    algorithm: str = "A2C"
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float | None = None
    entropy_coef: float = 0.005
    clip_epsilon: float = 0.2
    batch_size: int = 128
    n_epochs: int = 10
    rollout_length: int | None = None
    total_timesteps: int = 50_000
    value_coef: float = 0.5
    max_grad_norm: float | None = 0.5
    normalize_advantages: bool = True
    hidden: tuple[int, ...] = (64, 64)
    log_std_init: float = 0.0
    seed: int = 0

    def __post_init__(self):
        algo = self.algorithm.upper()
        if algo not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        object.__setattr__(self, "algorithm", algo)
        for key, val in _ALGO_DEFAULTS[algo].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, val)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.learning_rate < 0 or self.entropy_coef < 0 or self.value_coef < 0:
            raise ValueError("learning_rate, entropy_coef and value_coef must be non-negative")
        if self.rollout_length < 1 or self.batch_size < 1 or self.n_epochs < 1:
            raise ValueError("rollout_length, batch_size and n_epochs must be >= 1")
        if self.total_timesteps < self.rollout_length:
            raise ValueError("total_timesteps must be >= rollout_length")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden layer sizes must be >= 1")

    @property
    def n_updates(self) -> int:
        return self.total_timesteps // self.rollout_length


# --------------------------------------------------------------------------
# rollouts and advantages
# --------------------------------------------------------------------------

class RolloutBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.log_probs = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.values = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.advantages = np.zeros(capacity)
        self.returns = np.zeros(capacity)
        self.size = 0
        self.consumed = False

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def add(self, obs, action, log_prob, reward, done) -> None:
        if self.full:
            raise TrainingError("rollout buffer overflow")
        k = self.size
        self.obs[k] = obs
        self.actions[k] = action
        self.log_probs[k] = log_prob
        self.rewards[k] = reward
        self.dones[k] = float(done)
        self.size += 1

    def consume(self) -> None:
        if not self.full:
            raise TrainingError("update on a partially filled buffer")
        if self.consumed:
            raise TrainingError("rollout buffer already consumed")
        self.consumed = True


def compute_advantages(rewards, values, dones, last_value, gamma, gae_lambda):
    """GAE advantages and critic targets (``advantages + values``).

    ``dones[t]`` marks that the transition at ``t`` ended its episode, so
    nothing is bootstrapped across it.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not len(rewards) == len(values) == len(dones):
        raise ValueError("rewards, values and dones must have equal length")
    adv = np.zeros(len(rewards))
    next_value, next_adv = float(last_value), 0.0
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * gae_lambda * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def standardize(x: np.ndarray) -> np.ndarray:
    if x.size < 2:
        return x - x.mean()
    return (x - x.mean()) / (x.std() + 1e-8)


# --------------------------------------------------------------------------
# losses and gradients
# --------------------------------------------------------------------------

@dataclass
class Grads:
    actor: list[np.ndarray]
    critic: list[np.ndarray]
    policy_loss: float
    value_loss: float
    entropy: float


def _actor_backward(actor: nn.GaussianPolicy, cache, mu, actions, dlogp, entropy_coef):
    """Gradients of ``sum(dlogp * log_prob) - entropy_coef * H`` for the actor.

    ``dlogp`` already carries the 1/n batch weight and the loss sign.
    """
    log_std = actor.clamped_log_std()
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mu
    g_mu = dlogp[:, None] * diff * inv_var
    net_grads = nn.backward(actor.mean_net, cache, g_mu)
    g_ls = np.sum(dlogp[:, None] * (diff * diff * inv_var - 1.0), axis=0) - entropy_coef
    active = (actor.log_std > nn.LOG_STD_MIN) & (actor.log_std < nn.LOG_STD_MAX)
    g_ls = np.where(active, g_ls, 0.0)
    return net_grads.arrays() + [g_ls]


def _critic_grads(critic: nn.MlpParams, obs, targets, coef):
    v, cache = nn.forward(critic, obs)
    v = v[:, 0]
    err = targets - v
    loss = float(np.mean(err * err))
    g = (-2.0 * coef / len(v)) * err
    return nn.backward(critic, cache, g[:, None]).arrays(), loss


def a2c_objective(actor, obs, actions, advantages, entropy_coef) -> float:
    """Scalar actor loss ``mean(-log_prob * A) - c * H`` (for finite-difference checks)."""
    logp = nn.policy_log_prob(actor, obs, actions)
    return float(np.mean(-logp * advantages) - entropy_coef * nn.policy_entropy(actor))


def a2c_grads(actor, critic, obs, actions, advantages, returns, entropy_coef) -> Grads:
    n = len(obs)
    mu, cache = nn.forward(actor.mean_net, obs)
    logp = nn.gaussian_log_prob(actions, mu, actor.clamped_log_std())
    entropy = nn.policy_entropy(actor)
    policy_loss = float(np.mean(-logp * advantages) - entropy_coef * entropy)
    g_actor = _actor_backward(actor, cache, mu, actions, -advantages / n, entropy_coef)
    g_critic, value_loss = _critic_grads(critic, obs, returns, 1.0)
    return Grads(g_actor, g_critic, policy_loss, value_loss, entropy)


def ppo_objective(actor, obs, actions, old_log_probs, advantages, clip_epsilon, entropy_coef) -> float:
    """Negated clipped surrogate plus entropy bonus (actor part of the PPO loss)."""
    logp = nn.policy_log_prob(actor, obs, actions)
    ratio = np.exp(logp - old_log_probs)
    surr = np.minimum(ratio * advantages, np.clip(ratio, 1 - clip_epsilon, 1 + clip_epsilon) * advantages)
    return float(-np.mean(surr) - entropy_coef * nn.policy_entropy(actor))


def ppo_grads(actor, critic, obs, actions, old_log_probs, advantages, returns, hyper: AgentHyper) -> Grads:
    n = len(obs)
    eps = hyper.clip_epsilon
    mu, cache = nn.forward(actor.mean_net, obs)
    logp = nn.gaussian_log_prob(actions, mu, actor.clamped_log_std())
    ratio = np.exp(logp - old_log_probs)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * advantages
    entropy = nn.policy_entropy(actor)
    policy_loss = float(-np.mean(np.minimum(unclipped, clipped)) - hyper.entropy_coef * entropy)
    # the min picks the clipped branch only where clipping lowers the objective
    live = unclipped <= clipped
    dlogp = -(ratio * advantages * live) / n
    g_actor = _actor_backward(actor, cache, mu, actions, dlogp, hyper.entropy_coef)
    g_critic, value_loss = _critic_grads(critic, obs, returns, hyper.value_coef)
    return Grads(g_actor, g_critic, policy_loss, value_loss, entropy)


class Optimizers:
    def __init__(self, lr: float):
        self.actor = nn.AdamState(lr=lr)
        self.critic = nn.AdamState(lr=lr)


def apply_grads(actor: nn.GaussianPolicy, critic: nn.MlpParams, g: Grads, opt: Optimizers,
                max_grad_norm: float | None) -> tuple[float, float]:
    for loss in (g.policy_loss, g.value_loss):
        if not math.isfinite(loss):
            raise nn.NumericalError(f"non-finite loss (policy={g.policy_loss}, value={g.value_loss})")
    na = nn.clip_by_global_norm(g.actor, max_grad_norm)
    nc = nn.clip_by_global_norm(g.critic, max_grad_norm)
    nn.adam_step(actor.arrays(), g.actor, opt.actor)
    nn.adam_step(critic.arrays(), g.critic, opt.critic)
    actor.mean_net.version += 1
    critic.version += 1
    return na, nc


def _advantages_for_update(buf: RolloutBuffer, hyper: AgentHyper) -> np.ndarray:
    return standardize(buf.advantages) if hyper.normalize_advantages else buf.advantages


def a2c_update(buf: RolloutBuffer, actor, critic, hyper: AgentHyper, opt: Optimizers) -> dict:
    buf.consume()
    adv = _advantages_for_update(buf, hyper)
    g = a2c_grads(actor, critic, buf.obs, buf.actions, adv, buf.returns, hyper.entropy_coef)
    apply_grads(actor, critic, g, opt, hyper.max_grad_norm)
    return {"policy_loss": g.policy_loss, "value_loss": g.value_loss, "entropy": g.entropy}


def ppo_update(buf: RolloutBuffer, actor, critic, hyper: AgentHyper, opt: Optimizers,
               rng: np.random.Generator) -> dict:
    buf.consume()
    adv_all = buf.advantages
    n = buf.size
    bs = min(hyper.batch_size, n)
    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_fraction": []}
    for _ in range(hyper.n_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = order[lo:lo + bs]
            adv = adv_all[idx]
            if hyper.normalize_advantages:
                adv = standardize(adv)
            g = ppo_grads(actor, critic, buf.obs[idx], buf.actions[idx], buf.log_probs[idx],
                          adv, buf.returns[idx], hyper)
            apply_grads(actor, critic, g, opt, hyper.max_grad_norm)
            stats["policy_loss"].append(g.policy_loss)
            stats["value_loss"].append(g.value_loss)
            stats["entropy"].append(g.entropy)
    return {k: float(np.mean(v)) if v else 0.0 for k, v in stats.items() if k != "clip_fraction"}


# --------------------------------------------------------------------------
# training and evaluation
# --------------------------------------------------------------------------

@dataclass
class TrainedPolicy:
    actor: nn.GaussianPolicy
    critic: nn.MlpParams
    stats: ObsStats
    fingerprint: str
    hyper: AgentHyper

    def act(self, obs) -> np.ndarray:
        """Deterministic (mean) action."""
        return self.actor.mean(obs)

    def save(self, path) -> None:
        path = Path(path)
        nn.save_checkpoint(path, self.actor, self.critic,
                           {"obs_mean": self.stats.mean, "obs_std": self.stats.std})
        sidecar = {"fingerprint": self.fingerprint, "hyper": asdict(self.hyper)}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "TrainedPolicy":
        path = Path(path)
        actor, critic, extra = nn.load_checkpoint(path)
        side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        hyper = AgentHyper(**side["hyper"])
        return cls(actor, critic, ObsStats(extra["obs_mean"], extra["obs_std"]), side["fingerprint"], hyper)


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("update", "timestep", "policy_loss", "value_loss", "entropy", "mean_reward")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["update"], r["timestep"], *(repr(float(r[k])) for k in self.COLUMNS[2:])])


def make_networks(obs_dim: int, act_dim: int, hyper: AgentHyper, seed_seq: np.random.SeedSequence):
    s_actor, s_critic = seed_seq.spawn(2)
    actor = nn.GaussianPolicy.create([obs_dim, *hyper.hidden, act_dim], np.random.default_rng(s_actor),
                                     hyper.log_std_init)
    critic = nn.init([obs_dim, *hyper.hidden, 1], np.random.default_rng(s_critic))
    return actor, critic


def train(env: PortfolioEnv, hyper: AgentHyper, log_every: int = 0) -> tuple[TrainedPolicy, TrainingLog]:
    """Collect rollouts and update until ``total_timesteps`` are used up.

    The environment restarts from ``reset()`` whenever its window runs out.
    Everything stochastic derives from ``hyper.seed``.
    """
    root = np.random.SeedSequence(hyper.seed)
    s_nets, s_act, s_shuffle = root.spawn(3)
    actor, critic = make_networks(env.obs_dim, env.n_assets, hyper, s_nets)
    act_rng = np.random.default_rng(s_act)
    shuffle_rng = np.random.default_rng(s_shuffle)
    opt = Optimizers(hyper.learning_rate)
    log = TrainingLog()

    obs = env.reset()
    timestep = 0
    for update in range(1, hyper.n_updates + 1):
        buf = RolloutBuffer(hyper.rollout_length, env.obs_dim, env.n_assets)
        while not buf.full:
            a, logp = nn.policy_sample(actor, obs, act_rng)
            out = env.step(a)
            buf.add(obs, a, logp, out.reward, out.done)
            obs = env.reset() if out.done else out.observation
        timestep += buf.size
        values = nn.forward(critic, buf.obs)[0][:, 0]
        last_value = float(nn.forward(critic, obs)[0][0])
        buf.values[:] = values
        buf.advantages[:], buf.returns[:] = compute_advantages(
            buf.rewards, values, buf.dones, last_value, hyper.gamma, hyper.gae_lambda
        )
        if hyper.algorithm == "A2C":
            diag = a2c_update(buf, actor, critic, hyper, opt)
        else:
            diag = ppo_update(buf, actor, critic, hyper, opt, shuffle_rng)
        row = {"update": update, "timestep": timestep, "mean_reward": float(buf.rewards.mean()), **diag}
        log.rows.append(row)
        if log_every and update % log_every == 0:
            logger.info("update %d t=%d pl=%.4g vl=%.4g H=%.3f r=%.3g", update, timestep,
                        row["policy_loss"], row["value_loss"], row["entropy"], row["mean_reward"])

    policy = TrainedPolicy(actor, critic, env.stats, env.fingerprint(), hyper)
    return policy, log


def evaluate(policy: TrainedPolicy, env: PortfolioEnv) -> EpisodeResult:
    """One full episode with the mean action, no sampling."""
    if env.fingerprint() != policy.fingerprint:
        raise TrainingError(
            f"policy trained under {policy.fingerprint} cannot run in env {env.fingerprint()}"
        )
    return run_episode(env, policy.act)


def with_seed(hyper: AgentHyper, seed: int) -> AgentHyper:
    return replace(hyper, seed=seed)

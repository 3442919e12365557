"""Advantage actor-critic that decides, per source token, whether to mask it.

Each episode is one document: the agent sees one state row per source token,
samples attend (1) or mask (0) for each independently, and receives a single
terminal reward. With no intermediate rewards and no bootstrapping the return
of every step is that reward, so the advantage is ``R - b(s_t)``.

The critic loss squares the advantage. Left linear, it is unbounded below and
would push the value head to infinity.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .numerics import Tensor

MASK, ATTEND = 0, 1


@dataclass
class AgentConfig:
    state_dim: int = 8
    hidden: tuple[int, ...] = (32,)
    beta: float = 0.01
    lr: float = 1e-3
    value_coef: float = 1.0
    baseline_mode: str = "previous_value"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("entropy coefficient must be >= 0")
        if self.baseline_mode not in ("previous_value", "current_value"):
            raise ValueError("baseline_mode must be 'previous_value' or 'current_value'")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_header(self) -> dict[str, object]:
        out = {f"agent.{k}": v for k, v in asdict(self).items()}
        out["agent.hidden"] = ",".join(str(h) for h in self.hidden)
        return out

    @classmethod
    def from_header(cls, header: Mapping[str, str]) -> AgentConfig:
        kw: dict[str, object] = {}
        for f in fields(cls):
            raw = header.get(f"agent.{f.name}")
            if raw is None:
                continue
            if f.name == "hidden":
                kw[f.name] = tuple(int(x) for x in raw.split(",") if x)
            elif f.name in ("state_dim",):
                kw[f.name] = int(raw)
            elif f.name == "baseline_mode":
                kw[f.name] = raw
            else:
                kw[f.name] = float(raw)
        return cls(**kw)


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    probs: Tensor          # [T, 2] as (p_mask, p_attend)
    log_probs: Tensor      # [T] log pi(a_t | s_t)
    log_policy: Tensor     # [T, 2]
    values: Tensor         # [T]
    reward: float | None = None
    baseline: np.ndarray | None = None
    advantages: np.ndarray | None = None

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])

    @property
    def entropy_terms(self) -> np.ndarray:
        """Per-token sum_i P log P (between -ln 2 and 0)."""
        return (self.probs.data * self.log_policy.data).sum(axis=1)

    @property
    def masked_fraction(self) -> float:
        return float((self.actions == MASK).mean()) if self.length else 0.0


class ActorCritic:
    """Shared MLP trunk with a 2-way policy head and a scalar value head."""

    def __init__(self, config: AgentConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, Tensor] = {}
        sizes = (config.state_dim, *config.hidden)
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params[f"trunk{i}.w"] = nx.parameter(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)))
            self.params[f"trunk{i}.b"] = nx.parameter(np.zeros(b))
        last = sizes[-1]
        self.params["policy.w"] = nx.parameter(np.zeros((last, 2)))
        self.params["policy.b"] = nx.parameter(np.zeros(2))
        self.params["value.w"] = nx.parameter(np.zeros((last, 1)))
        self.params["value.b"] = nx.parameter(np.zeros(1))

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def save(self, path, extra: Mapping[str, object] | None = None) -> None:
        header = self.config.to_header()
        header.update(extra or {})
        nx.save_parameters(path, self.params, header)

    @classmethod
    def load(cls, path) -> ActorCritic:
        arrays, header = nx.load_parameters(path)
        agent = cls(AgentConfig.from_header(header))
        nx.assign_parameters(agent.params, {k: arrays[k] for k in agent.params})
        return agent

    def heads(self, states: np.ndarray) -> tuple[Tensor, Tensor]:
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or states.shape[1] != self.config.state_dim:
            raise ValueError(f"states must be [T, {self.config.state_dim}], got {states.shape}")
        h: Tensor = nx.Tensor(states)
        for i in range(len(self.config.hidden)):
            h = nx.tanh(h @ self.params[f"trunk{i}.w"] + self.params[f"trunk{i}.b"])
        logits = h @ self.params["policy.w"] + self.params["policy.b"]
        values = (h @ self.params["value.w"] + self.params["value.b"]).reshape(-1)
        return logits, values

    def act(self, states: np.ndarray, rng: np.random.Generator | None = None,
            greedy: bool = False) -> Trajectory:
        """Sample attend/mask per token; ``greedy`` takes the likelier action instead."""
        states = np.asarray(states, dtype=float)
        if states.shape[0] < 1:
            raise ValueError("act needs at least one state")
        logits, values = self.heads(states)
        log_policy = nx.log_softmax_lastdim(logits)
        probs = nx.softmax_lastdim(logits)
        p_attend = probs.data[:, ATTEND]
        if greedy:
            actions = (p_attend >= 0.5).astype(np.int64)
        else:
            if rng is None:
                raise ValueError("sampling needs an rng")
            actions = (rng.random(len(states)) < p_attend).astype(np.int64)
        log_probs = log_policy[np.arange(len(actions)), actions]
        return Trajectory(states, actions, probs, log_probs, log_policy, values)


class BaselineCache:
    """Value estimates from each example's previous episode."""

    def __init__(self):
        self._store: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._store)

    def get(self, key: str, current: np.ndarray) -> np.ndarray:
        prev = self._store.get(key)
        if prev is None or prev.shape != current.shape:
            return np.array(current, copy=True)
        return prev.copy()

    def update(self, key: str, values: np.ndarray) -> None:
        self._store[key] = np.array(values, copy=True)

    def reset(self) -> None:
        self._store.clear()


def advantage(traj: Trajectory, reward: float, baseline: np.ndarray | None = None) -> np.ndarray:
    """Fill in ``traj`` with ``A_t = R - b(s_t)``; ``b`` defaults to the current values."""
    if not np.isfinite(reward):
        raise nx.NumericError(f"non-finite reward {reward!r}")
    b = traj.values.data.copy() if baseline is None else np.asarray(baseline, dtype=float)
    traj.reward = float(reward)
    traj.baseline = b
    traj.advantages = float(reward) - b
    return traj.advantages


@dataclass
class A2CLoss:
    total: Tensor
    actor: Tensor
    critic: Tensor
    entropy: Tensor

    def values(self) -> tuple[float, float, float, float]:
        return self.total.item(), self.actor.item(), self.critic.item(), self.entropy.item()


def a2c_loss(traj: Trajectory, beta: float, value_coef: float = 1.0) -> A2CLoss:
    """Actor, critic and entropy losses, all scaled by ``1 / 2T``.

    The actor sees the advantage as a constant. The critic regresses the
    current value estimate onto the episode reward.
    """
    t = traj.length
    if t == 0:
        raise ValueError("empty trajectory")
    if traj.advantages is None or traj.reward is None:
        raise ValueError("trajectory has no reward yet; call advantage() first")
    scale = 1.0 / (2 * t)
    actor = (traj.log_probs * traj.advantages).sum() * -scale
    critic = ((traj.values * -1.0 + traj.reward) ** 2).sum() * scale
    entropy = (traj.probs * traj.log_policy).sum() * scale
    total = actor + critic * value_coef + entropy * beta
    return A2CLoss(total, actor, critic, entropy)


def agent_update(loss: A2CLoss | Tensor, optimizer: nx.Adam) -> None:
    """One descent step on the agent's parameters only."""
    total = loss.total if isinstance(loss, A2CLoss) else loss
    optimizer.zero_grad()
    nx.backward(total)
    optimizer.step()


# ---------------------------------------------------------------------------
# synthetic salient/noise environment
# ---------------------------------------------------------------------------

@dataclass
class SalienceEnv:
    """Bandit where attending salient tokens and masking noise tokens pays.

    Reward is (fraction of salient tokens attended) - (fraction of noise
    tokens attended); the optimum is 1. Feature 0 of each state is +1 for
    salient and -1 for noise plus Gaussian jitter; the rest is pure noise.
    """

    state_dim: int = 8
    min_tokens: int = 10
    max_tokens: int = 30
    jitter: float = 0.3
    salient_rate: float = 0.4

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        t = int(rng.integers(self.min_tokens, self.max_tokens + 1))
        salient = rng.random(t) < self.salient_rate
        salient[rng.integers(t)] = True
        states = rng.normal(0.0, 1.0, size=(t, self.state_dim))
        states[:, 0] = np.where(salient, 1.0, -1.0) + rng.normal(0.0, self.jitter, size=t)
        return states, salient

    @staticmethod
    def reward(actions: np.ndarray, salient: np.ndarray) -> float:
        attended = actions == ATTEND
        noise = ~salient
        gain = attended[salient].mean() if salient.any() else 0.0
        cost = attended[noise].mean() if noise.any() else 0.0
        return float(gain - cost)


@dataclass
class BanditRun:
    rewards: list[float] = field(default_factory=list)

    def tail_mean(self, n: int = 100) -> float:
        return float(np.mean(self.rewards[-n:]))


def run_bandit(episodes: int, seed: int, config: AgentConfig | None = None,
               env: SalienceEnv | None = None) -> BanditRun:
    env = env or SalienceEnv()
    config = config or AgentConfig(state_dim=env.state_dim, baseline_mode="current_value")
    rng = np.random.default_rng(seed)
    agent = ActorCritic(config, rng)
    opt = nx.Adam(agent.params, lr=config.lr)
    run = BanditRun()
    for _ in range(episodes):
        states, salient = env.sample(rng)
        traj = agent.act(states, rng)
        r = env.reward(traj.actions, salient)
        advantage(traj, r)
        agent_update(a2c_loss(traj, config.beta, config.value_coef), opt)
        run.rewards.append(r)
    return run

"""Query-refinement policy trained with clipped PPO, implemented on numpy.

The policy is a two-layer tanh MLP (query embedding -> hidden 256 -> three
action logits) with a value head that shares the hidden layer. Episodes are
single-step: the agent sees a query embedding, picks one of three rewriting
actions, and receives one composite reward. Gradients are computed
analytically and are checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import IntEnum
from typing import Protocol

import numpy as np

from .errors import (
    ComponentOutOfRangeError,
    EmptyBatchError,
    NonFiniteGradientError,
    NonFiniteLogitsError,
)

ACTION_NAMES = ("expand", "simplify", "decompose")

# Optimization passes over each collected buffer per training epoch.
UPDATE_PASSES = 4


class RefinementAction(IntEnum):
    """The three query rewriting strategies; index order is frozen."""

    EXPAND = 0
    SIMPLIFY = 1
    DECOMPOSE = 2

    @property
    def label(self) -> str:
        return ACTION_NAMES[self.value]


@dataclass(frozen=True)
class RewardWeights:
    """Mixing weights for the four reward components; they must sum to 1."""

    relevance: float = 0.25
    causal_depth: float = 0.25
    similarity: float = 0.25
    hallucination: float = 0.25

    def __post_init__(self):
        values = (self.relevance, self.causal_depth, self.similarity, self.hallucination)
        if any(v < 0 for v in values):
            raise ValueError("reward weights must be non-negative")
        if abs(sum(values) - 1.0) > 1e-9:
            raise ValueError(f"reward weights must sum to 1, got {sum(values)}")


def compute_reward(weights: RewardWeights, relevance: float, causal_depth: float,
                   similarity: float, hallucination: float) -> float:
    """Weighted mix of normalized components; high hallucination lowers it.

    All four inputs must already be normalized to [0, 1]; the result is then
    guaranteed to lie in [0, 1].
    """
    for name, value in (("relevance", relevance), ("causal_depth", causal_depth),
                        ("similarity", similarity), ("hallucination", hallucination)):
        if not 0.0 <= value <= 1.0:
            raise ComponentOutOfRangeError(f"{name}={value} outside [0, 1]")
    return (weights.relevance * relevance
            + weights.causal_depth * causal_depth
            + weights.similarity * similarity
            + weights.hallucination * (1.0 - hallucination))


def normalize_components(relevance: float, causal_depth: float, similarity: float,
                         hallucination: float, max_hops: int = 3) -> dict[str, float]:
    """Map raw reward inputs into [0, 1].

    Cosines (relevance, similarity) clamp at zero; causal depth is mean hops
    scaled by the hop budget and saturates at 1; hallucination is already a
    rate and passes through.
    """
    return {
        "relevance": max(0.0, float(relevance)),
        "causal_depth": min(1.0, float(causal_depth) / float(max_hops)),
        "similarity": max(0.0, float(similarity)),
        "hallucination": float(hallucination),
    }


@dataclass
class Transition:
    """One single-step episode as collected for PPO."""

    state: np.ndarray
    action: int
    old_logprob: float
    reward: float
    value: float


@dataclass
class PpoConfig:
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    entropy_coef: float = 0.01
    batch_size: int = 64
    epochs: int = 100
    steps_per_query: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _softmax_logprobs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class PolicyNetwork:
    """Two-layer tanh MLP with action logits and a shared-hidden value head."""

    def __init__(self, dimension: int = 384, hidden: int = 256,
                 n_actions: int = len(ACTION_NAMES), seed: int = 0):
        self.dimension = dimension
        self.hidden = hidden
        self.n_actions = n_actions
        rng = np.random.default_rng(seed)
        self.w1 = rng.uniform(-0.05, 0.05, size=(hidden, dimension))
        self.b1 = np.zeros(hidden)
        self.w2 = rng.uniform(-0.05, 0.05, size=(n_actions, hidden))
        self.b2 = np.zeros(n_actions)
        self.wv = rng.uniform(-0.05, 0.05, size=hidden)
        self.bv = 0.0

    def parameters(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "wv": self.wv, "bv": np.asarray(self.bv)}

    def forward(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Logits, state values, and hidden activations for a batch of states."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        hidden = np.tanh(states @ self.w1.T + self.b1)
        logits = hidden @ self.w2.T + self.b2
        values = hidden @ self.wv + self.bv
        return logits, values, hidden

    def logprobs(self, state: np.ndarray) -> np.ndarray:
        logits, _, _ = self.forward(state)
        logits = logits[0]
        if not np.all(np.isfinite(logits)):
            raise NonFiniteLogitsError(f"logits {logits}")
        return _softmax_logprobs(logits)

    def value(self, state: np.ndarray) -> float:
        _, values, _ = self.forward(state)
        return float(values[0])

    def act(self, state: np.ndarray,
            rng: np.random.Generator | int | None = None) -> tuple[RefinementAction, float]:
        """Choose an action and return it with its log-probability.

        With `rng` absent the choice is greedy (argmax probability, ties to
        the lowest index). Passing a seeded Generator or an int seed samples
        from the softmax reproducibly.
        """
        logp = self.logprobs(state)
        if rng is None:
            action = int(np.argmax(logp))
        else:
            if isinstance(rng, int):
                rng = np.random.default_rng(rng)
            action = int(rng.choice(len(logp), p=np.exp(logp)))
        return RefinementAction(action), float(logp[action])


def ppo_update(policy: PolicyNetwork, batch: list[Transition],
               config: PpoConfig) -> dict[str, float]:
    """One gradient step on the clipped surrogate plus value and entropy terms.

    Advantages are reward minus the value recorded at collection time,
    standardized over the batch (std guarded at 1e-8). The loss is
    -L_clip - entropy_coef * H(pi) + value MSE; the policy is updated in
    place and scalar stats are returned.
    """
    if not batch:
        raise EmptyBatchError("ppo_update on empty batch")
    eps = config.clip_epsilon
    n = len(batch)
    states = np.stack([np.asarray(t.state, dtype=np.float64) for t in batch])
    actions = np.array([int(t.action) for t in batch])
    old_logprobs = np.array([t.old_logprob for t in batch])
    rewards = np.array([t.reward for t in batch])
    old_values = np.array([t.value for t in batch])

    advantages = rewards - old_values
    std = float(advantages.std())
    advantages = (advantages - advantages.mean()) / max(std, 1e-8)

    logits, values, hidden = policy.forward(states)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteLogitsError("non-finite logits in ppo_update")
    logp_all = _softmax_logprobs(logits)
    probs = np.exp(logp_all)
    rows = np.arange(n)
    logp_taken = logp_all[rows, actions]

    ratios = np.exp(logp_taken - old_logprobs)
    surr_unclipped = ratios * advantages
    surr_clipped = np.clip(ratios, 1.0 - eps, 1.0 + eps) * advantages
    surrogate = np.minimum(surr_unclipped, surr_clipped)
    # Clipping bound: |min(surr1, surr2)| can never exceed max(r, 1+eps)|A|.
    assert np.all(np.abs(surrogate)
                  <= np.maximum(ratios, 1.0 + eps) * np.abs(advantages) + 1e-12)

    entropies = -(probs * logp_all).sum(axis=1)
    policy_loss = -float(surrogate.mean())
    entropy = float(entropies.mean())
    value_errors = values - rewards
    value_loss = float(np.mean(value_errors ** 2))

    # Backward pass. Total loss = policy_loss - entropy_coef*entropy + value_loss.
    unclipped_active = surr_unclipped <= surr_clipped
    g_ratio = np.where(unclipped_active, advantages, 0.0) * (-1.0 / n)
    g_logp_taken = g_ratio * ratios
    one_hot = np.zeros_like(logp_all)
    one_hot[rows, actions] = 1.0
    g_logits = g_logp_taken[:, None] * (one_hot - probs)
    # d(-c_e * mean entropy)/d logits.
    g_logits += (config.entropy_coef / n) * probs * (logp_all + entropies[:, None])
    g_values = (2.0 / n) * value_errors

    g_w2 = g_logits.T @ hidden
    g_b2 = g_logits.sum(axis=0)
    g_hidden = g_logits @ policy.w2 + g_values[:, None] * policy.wv[None, :]
    g_wv = hidden.T @ g_values
    g_bv = float(g_values.sum())
    g_z1 = g_hidden * (1.0 - hidden ** 2)
    g_w1 = g_z1.T @ states
    g_b1 = g_z1.sum(axis=0)

    grads = (g_w1, g_b1, g_w2, g_b2, g_wv, np.asarray(g_bv))
    if any(not np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteGradientError("non-finite gradient in ppo_update")

    lr = config.learning_rate
    policy.w1 -= lr * g_w1
    policy.b1 -= lr * g_b1
    policy.w2 -= lr * g_w2
    policy.b2 -= lr * g_b2
    policy.wv -= lr * g_wv
    policy.bv -= lr * g_bv

    return {"policy_loss": policy_loss, "value_loss": value_loss, "entropy": entropy}


def ppo_loss(policy: PolicyNetwork, batch: list[Transition],
             config: PpoConfig) -> float:
    """Scalar loss used by ppo_update, without touching the weights.

    Exists so finite-difference checks can probe exactly the objective the
    analytic gradients descend.
    """
    if not batch:
        raise EmptyBatchError("ppo_loss on empty batch")
    eps = config.clip_epsilon
    states = np.stack([np.asarray(t.state, dtype=np.float64) for t in batch])
    actions = np.array([int(t.action) for t in batch])
    old_logprobs = np.array([t.old_logprob for t in batch])
    rewards = np.array([t.reward for t in batch])
    old_values = np.array([t.value for t in batch])

    advantages = rewards - old_values
    advantages = (advantages - advantages.mean()) / max(float(advantages.std()), 1e-8)

    logits, values, _ = policy.forward(states)
    logp_all = _softmax_logprobs(logits)
    probs = np.exp(logp_all)
    rows = np.arange(len(batch))
    ratios = np.exp(logp_all[rows, actions] - old_logprobs)
    surrogate = np.minimum(ratios * advantages,
                           np.clip(ratios, 1.0 - eps, 1.0 + eps) * advantages)
    entropy = float((-(probs * logp_all).sum(axis=1)).mean())
    value_loss = float(np.mean((values - rewards) ** 2))
    return -float(surrogate.mean()) - config.entropy_coef * entropy + value_loss


class RefinementEnvironment(Protocol):
    """Single-step episode source: a state, one action, one reward."""

    def reset(self) -> np.ndarray: ...

    def step(self, action: RefinementAction) -> float: ...


class BanditEnvironment:
    """State-independent bandit over the three actions; states are random
    unit vectors. Useful for training sanity checks and offline policy
    bootstrapping."""

    def __init__(self, rewards: tuple[float, float, float] = (0.3, 0.3, 0.9),
                 dimension: int = 384, seed: int = 0, noise: float = 0.0):
        self.rewards = tuple(float(r) for r in rewards)
        self.dimension = dimension
        self.noise = noise
        self._rng = np.random.default_rng(seed)
        self._state: np.ndarray | None = None

    def reset(self) -> np.ndarray:
        v = self._rng.normal(size=self.dimension)
        self._state = v / np.linalg.norm(v)
        return self._state

    def step(self, action: RefinementAction) -> float:
        reward = self.rewards[int(action)]
        if self.noise:
            reward = float(np.clip(reward + self._rng.normal(scale=self.noise), 0.0, 1.0))
        return reward


@dataclass
class PolicySnapshot:
    """Serialized policy weights plus the config and reward log behind them."""

    dimension: int
    hidden: int
    actions: tuple[str, ...]
    weights: dict[str, list]
    config: PpoConfig
    epoch_rewards: list[float] = field(default_factory=list)

    @classmethod
    def from_policy(cls, policy: PolicyNetwork, config: PpoConfig,
                    epoch_rewards: list[float] | None = None) -> "PolicySnapshot":
        return cls(
            dimension=policy.dimension,
            hidden=policy.hidden,
            actions=ACTION_NAMES,
            weights={
                "w1": policy.w1.tolist(),
                "b1": policy.b1.tolist(),
                "w2": policy.w2.tolist(),
                "b2": policy.b2.tolist(),
                "wv": policy.wv.tolist(),
                "bv": float(policy.bv),
            },
            config=config,
            epoch_rewards=list(epoch_rewards or []),
        )

    def to_policy(self) -> PolicyNetwork:
        policy = PolicyNetwork(dimension=self.dimension, hidden=self.hidden,
                               n_actions=len(self.actions))
        policy.w1 = np.asarray(self.weights["w1"], dtype=np.float64)
        policy.b1 = np.asarray(self.weights["b1"], dtype=np.float64)
        policy.w2 = np.asarray(self.weights["w2"], dtype=np.float64)
        policy.b2 = np.asarray(self.weights["b2"], dtype=np.float64)
        policy.wv = np.asarray(self.weights["wv"], dtype=np.float64)
        policy.bv = float(self.weights["bv"])
        return policy

    def to_json(self) -> str:
        payload = {
            "dimension": self.dimension,
            "hidden": self.hidden,
            "actions": list(self.actions),
            "weights": self.weights,
            "config": asdict(self.config),
            "epoch_rewards": self.epoch_rewards,
        }
        return json.dumps(payload, sort_keys=True)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str) -> "PolicySnapshot":
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
        return cls(
            dimension=int(payload["dimension"]),
            hidden=int(payload["hidden"]),
            actions=tuple(payload["actions"]),
            weights=payload["weights"],
            config=PpoConfig(**payload["config"]),
            epoch_rewards=list(payload["epoch_rewards"]),
        )


def train(policy: PolicyNetwork, env: RefinementEnvironment,
          config: PpoConfig) -> PolicySnapshot:
    """Collect-then-update PPO training loop.

    Each epoch samples `steps_per_query` single-step episodes from the
    environment, then runs UPDATE_PASSES shuffled minibatch passes over the
    buffer. Deterministic given the config seed and a deterministic
    environment.
    """
    rng = np.random.default_rng(config.seed)
    epoch_rewards: list[float] = []
    for _ in range(config.epochs):
        buffer: list[Transition] = []
        for _ in range(config.steps_per_query):
            state = env.reset()
            action, logprob = policy.act(state, rng=rng)
            value = policy.value(state)
            reward = env.step(action)
            buffer.append(Transition(state=state, action=int(action),
                                     old_logprob=logprob, reward=reward, value=value))
        epoch_rewards.append(float(np.mean([t.reward for t in buffer])))
        for _ in range(UPDATE_PASSES):
            order = rng.permutation(len(buffer))
            for start in range(0, len(buffer), config.batch_size):
                chunk = [buffer[i] for i in order[start:start + config.batch_size]]
                ppo_update(policy, chunk, config)
    return PolicySnapshot.from_policy(policy, config, epoch_rewards)

"""Shared test utilities: random PPO batches and finite-difference checks."""

import copy

import numpy as np

from causalrag.agent import PolicyNetwork, PpoConfig, Transition, ppo_loss, ppo_update


def randomized_policy(dimension: int, hidden: int, rng: np.random.Generator) -> PolicyNetwork:
    """Policy with non-trivial weights so gradients are informative."""
    policy = PolicyNetwork(dimension=dimension, hidden=hidden, seed=0)
    policy.w1 = rng.normal(scale=0.3, size=policy.w1.shape)
    policy.b1 = rng.normal(scale=0.1, size=policy.b1.shape)
    policy.w2 = rng.normal(scale=0.3, size=policy.w2.shape)
    policy.b2 = rng.normal(scale=0.1, size=policy.b2.shape)
    policy.wv = rng.normal(scale=0.3, size=policy.wv.shape)
    policy.bv = float(rng.normal(scale=0.1))
    return policy


def random_batch(dimension: int, size: int, rng: np.random.Generator) -> list[Transition]:
    batch = []
    for _ in range(size):
        state = rng.normal(size=dimension)
        state /= np.linalg.norm(state)
        batch.append(Transition(
            state=state,
            action=int(rng.integers(3)),
            old_logprob=float(np.log(rng.uniform(0.1, 0.9))),
            reward=float(rng.uniform(0.0, 1.0)),
            value=float(rng.uniform(0.0, 1.0)),
        ))
    return batch


def analytic_gradients(policy: PolicyNetwork, batch, config: PpoConfig) -> dict:
    """Recover the gradients ppo_update descends by diffing a lr=1 step."""
    probe_config = PpoConfig(
        clip_epsilon=config.clip_epsilon, learning_rate=1.0,
        entropy_coef=config.entropy_coef, batch_size=config.batch_size,
        epochs=config.epochs, steps_per_query=config.steps_per_query,
        seed=config.seed)
    updated = copy.deepcopy(policy)
    ppo_update(updated, batch, probe_config)
    return {
        "w1": policy.w1 - updated.w1,
        "b1": policy.b1 - updated.b1,
        "w2": policy.w2 - updated.w2,
        "b2": policy.b2 - updated.b2,
        "wv": policy.wv - updated.wv,
        "bv": np.asarray(policy.bv - updated.bv),
    }


def _get(policy: PolicyNetwork, name: str, idx):
    if name == "bv":
        return policy.bv
    return getattr(policy, name)[idx]


def _set(policy: PolicyNetwork, name: str, idx, value):
    if name == "bv":
        policy.bv = value
    else:
        getattr(policy, name)[idx] = value


def fd_worst_relative_error(policy: PolicyNetwork, batch, config: PpoConfig,
                            h: float = 1e-4, sample: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Checks every parameter by default; `sample` restricts the check to that
    many randomly chosen coordinates per parameter array (for large nets).
    """
    grads = analytic_gradients(policy, batch, config)
    worst = 0.0
    for name, grad in grads.items():
        if grad.shape == ():
            coords = [()]
        else:
            coords = list(np.ndindex(grad.shape))
            if sample is not None and len(coords) > sample:
                assert rng is not None
                chosen = rng.choice(len(coords), size=sample, replace=False)
                coords = [coords[i] for i in chosen]
        for idx in coords:
            original = _get(policy, name, idx)
            _set(policy, name, idx, original + h)
            up = ppo_loss(policy, batch, config)
            _set(policy, name, idx, original - h)
            down = ppo_loss(policy, batch, config)
            _set(policy, name, idx, original)
            fd = (up - down) / (2.0 * h)
            analytic = float(grad[idx]) if grad.shape else float(grad)
            denom = max(abs(fd), abs(analytic), 1e-8)
            worst = max(worst, abs(fd - analytic) / denom)
    return worst

"""PPO with a clipped surrogate objective and GAE, on float64 torch.

The trainer is deliberately environment-agnostic: it takes a factory for
steppable environments (reset/step/action_dim/observation_dim, as
implemented by :class:`hybridplan.env.PlannerEnv`) and an optional
evaluation callback whose score drives best-checkpoint selection.  Helpers
at the bottom wire it to scenario corpora.
"""

import copy
import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .env import PlannerEnv, RewardConfig
from .policy import GaussianPolicy, LstmState, PolicySpec
from .simulation import PlannerSettings

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 3e-4
    clip_epsilon: float = 0.1
    gamma: float = 0.99
    gae_lambda: float = 0.97
    batch_size: int = 2352
    epochs: int = 5
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    rollout_length: int = 294
    n_envs: int = 8
    total_timesteps: int = 200_000
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        for name in ("gamma", "gae_lambda"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.batch_size > self.rollout_length * self.n_envs:
            raise ValueError("batch_size exceeds rollout_length * n_envs")
        if min(self.batch_size, self.rollout_length, self.n_envs, self.epochs) < 1:
            raise ValueError("sizes must be positive")


@dataclass
class RolloutBuffer:
    """One rollout of (T, N, ...) transitions plus GAE results."""

    observations: np.ndarray
    actions: np.ndarray
    pre_tanh: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    episode_starts: np.ndarray
    initial_h: np.ndarray = None
    initial_c: np.ndarray = None
    advantages: np.ndarray = None
    returns: np.ndarray = None

    @property
    def n_steps(self) -> int:
        return self.observations.shape[0]

    @property
    def n_envs(self) -> int:
        return self.observations.shape[1]

    @property
    def size(self) -> int:
        return self.n_steps * self.n_envs


def compute_gae(rewards, values, dones, bootstrap_value, gamma, lam):
    """Generalized advantage estimation over (T,) or (T, N) arrays.

    done flags cut the recursion: delta_t = r_t + g*V_{t+1}*(1-done) - V_t,
    A_t = delta_t + g*l*(1-done)*A_{t+1}.  Returns (advantages, returns)
    with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    advantages = np.zeros_like(rewards)
    next_advantage = np.zeros_like(rewards[0] if rewards.ndim > 1 else rewards[:1][0])
    next_value = np.asarray(bootstrap_value, dtype=float)
    for t in range(len(rewards) - 1, -1, -1):
        mask = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * mask - values[t]
        next_advantage = delta + gamma * lam * mask * next_advantage
        advantages[t] = next_advantage
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(adv: torch.Tensor) -> torch.Tensor:
    return (adv - adv.mean()) / (adv.std(correction=0) + 1e-8)


def ppo_loss(
    policy: GaussianPolicy,
    observations: torch.Tensor,
    pre_tanh: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    returns: torch.Tensor,
    clip_epsilon: float,
    entropy_coef: float,
    value_coef: float,
    episode_starts: torch.Tensor = None,
    init_state: LstmState = None,
):
    """Clipped-surrogate loss on one (normalized-advantage) batch.

    Feedforward batches are flat (B, ...); recurrent batches are
    sequence-shaped (T, n, ...) with ``episode_starts`` and ``init_state``
    so the LSTM can be replayed.  Returns (loss, diagnostics); the loss
    tensor carries the graph for backward.
    """
    if init_state is not None:
        log_prob, entropy, value = policy.evaluate_sequence(
            observations, pre_tanh, episode_starts, init_state
        )
        log_prob, entropy, value = (
            log_prob.reshape(-1),
            entropy.reshape(-1),
            value.reshape(-1),
        )
        old_log_probs = old_log_probs.reshape(-1)
        advantages = advantages.reshape(-1)
        returns = returns.reshape(-1)
    else:
        log_prob, entropy, value = policy.evaluate_actions(observations, pre_tanh)

    log_ratio = log_prob - old_log_probs
    ratio = torch.exp(log_ratio)
    unclipped = ratio * advantages
    clipped = torch.clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    policy_loss = -torch.minimum(unclipped, clipped).mean()
    value_loss = ((value - returns) ** 2).mean()
    entropy_mean = entropy.mean()
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy_mean

    if not torch.isfinite(loss):
        raise RuntimeError(
            "non-finite PPO loss: "
            f"policy={float(policy_loss.detach())!r} "
            f"value={float(value_loss.detach())!r} "
            f"max|log ratio|={float(log_ratio.detach().abs().max())!r}"
        )
    diagnostics = {
        "policy_loss": float(policy_loss.detach()),
        "value_loss": float(value_loss.detach()),
        "entropy": float(entropy_mean.detach()),
        "clip_fraction": float(
            ((ratio.detach() - 1.0).abs() > clip_epsilon).double().mean()
        ),
    }
    return loss, diagnostics


@dataclass
class RolloutCarry:
    """Cross-rollout continuation: current observations, episode-start
    flags, recurrent state, and running per-env episode accumulators."""

    observations: np.ndarray
    episode_starts: np.ndarray
    lstm: LstmState
    episode_return: np.ndarray
    episode_length: np.ndarray


def _reset_all(envs, seed):
    obs = [
        env.reset(seed=None if seed is None else seed + i)
        for i, env in enumerate(envs)
    ]
    return np.stack(obs).astype(float)


def collect_rollouts(
    envs,
    policy: GaussianPolicy,
    rollout_length: int,
    carry: RolloutCarry = None,
    seed: int = None,
):
    """Step all envs for ``rollout_length`` steps with sampled actions.

    Returns (buffer, carry, finished-episode stats).  The recurrent state
    is carried across rollouts and zeroed at episode starts; bootstrap
    values for GAE are taken from the carry observations at the end.
    """
    n_envs = len(envs)
    if carry is None:
        obs = _reset_all(envs, seed)
        carry = RolloutCarry(
            observations=obs,
            episode_starts=np.ones(n_envs),
            lstm=policy.initial_state(n_envs) if policy.recurrent else None,
            episode_return=np.zeros(n_envs),
            episode_length=np.zeros(n_envs, dtype=int),
        )
    obs_dim = carry.observations.shape[1]
    action_dim = policy.action_dim

    buf = RolloutBuffer(
        observations=np.empty((rollout_length, n_envs, obs_dim)),
        actions=np.empty((rollout_length, n_envs, action_dim)),
        pre_tanh=np.empty((rollout_length, n_envs, action_dim)),
        log_probs=np.empty((rollout_length, n_envs)),
        values=np.empty((rollout_length, n_envs)),
        rewards=np.empty((rollout_length, n_envs)),
        dones=np.empty((rollout_length, n_envs)),
        episode_starts=np.empty((rollout_length, n_envs)),
    )
    if policy.recurrent:
        buf.initial_h = carry.lstm.h.numpy().copy()
        buf.initial_c = carry.lstm.c.numpy().copy()

    finished = []
    for t in range(rollout_length):
        obs_t = torch.as_tensor(carry.observations, dtype=torch.float64)
        starts_t = torch.as_tensor(carry.episode_starts, dtype=torch.float64)
        action, pre, log_prob, value, new_lstm = policy.act(
            obs_t, carry.lstm, starts_t
        )
        buf.observations[t] = carry.observations
        buf.episode_starts[t] = carry.episode_starts
        buf.actions[t] = action.numpy()
        buf.pre_tanh[t] = pre.numpy()
        buf.log_probs[t] = log_prob.numpy()
        buf.values[t] = value.numpy()

        next_obs = np.empty_like(carry.observations)
        next_starts = np.zeros(n_envs)
        for i, env in enumerate(envs):
            result = env.step(buf.actions[t, i])
            buf.rewards[t, i] = result.reward
            buf.dones[t, i] = float(result.terminated)
            carry.episode_return[i] += result.reward
            carry.episode_length[i] += 1
            if result.terminated:
                status = getattr(result, "termination_status", None)
                finished.append(
                    {
                        "return": float(carry.episode_return[i]),
                        "length": int(carry.episode_length[i]),
                        "status": getattr(status, "value", status),
                    }
                )
                carry.episode_return[i] = 0.0
                carry.episode_length[i] = 0
                next_obs[i] = env.reset()
                next_starts[i] = 1.0
            else:
                next_obs[i] = result.observation
        carry.observations = next_obs
        carry.episode_starts = next_starts
        carry.lstm = new_lstm.detach() if new_lstm is not None else None

    with torch.no_grad():
        obs_t = torch.as_tensor(carry.observations, dtype=torch.float64)
        starts_t = torch.as_tensor(carry.episode_starts, dtype=torch.float64)
        _, _, bootstrap, _ = policy.forward(obs_t, carry.lstm, starts_t)
    return buf, carry, finished, bootstrap.numpy()


def _update_feedforward(policy, optimizer, buf: RolloutBuffer, hp: Hyperparams):
    flat = {
        "obs": torch.as_tensor(
            buf.observations.reshape(buf.size, -1), dtype=torch.float64
        ),
        "pre": torch.as_tensor(buf.pre_tanh.reshape(buf.size, -1), dtype=torch.float64),
        "logp": torch.as_tensor(buf.log_probs.reshape(-1), dtype=torch.float64),
        "adv": torch.as_tensor(buf.advantages.reshape(-1), dtype=torch.float64),
        "ret": torch.as_tensor(buf.returns.reshape(-1), dtype=torch.float64),
    }
    last = {}
    for _ in range(hp.epochs):
        perm = torch.randperm(buf.size)
        for lo in range(0, buf.size, hp.batch_size):
            idx = perm[lo : lo + hp.batch_size]
            loss, last = ppo_loss(
                policy,
                flat["obs"][idx],
                flat["pre"][idx],
                flat["logp"][idx],
                normalize_advantages(flat["adv"][idx]),
                flat["ret"][idx],
                hp.clip_epsilon,
                hp.entropy_coef,
                hp.value_coef,
            )
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(policy.parameters(), hp.max_grad_norm)
            optimizer.step()
            last["loss"] = float(loss.detach())
    return last


def _update_recurrent(policy, optimizer, buf: RolloutBuffer, hp: Hyperparams):
    tensors = {
        "obs": torch.as_tensor(buf.observations, dtype=torch.float64),
        "pre": torch.as_tensor(buf.pre_tanh, dtype=torch.float64),
        "logp": torch.as_tensor(buf.log_probs, dtype=torch.float64),
        "adv": torch.as_tensor(buf.advantages, dtype=torch.float64),
        "ret": torch.as_tensor(buf.returns, dtype=torch.float64),
        "starts": torch.as_tensor(buf.episode_starts, dtype=torch.float64),
        "h0": torch.as_tensor(buf.initial_h, dtype=torch.float64),
        "c0": torch.as_tensor(buf.initial_c, dtype=torch.float64),
    }
    envs_per_batch = max(1, hp.batch_size // buf.n_steps)
    last = {}
    for _ in range(hp.epochs):
        perm = torch.randperm(buf.n_envs)
        for lo in range(0, buf.n_envs, envs_per_batch):
            cols = perm[lo : lo + envs_per_batch]
            init = LstmState(tensors["h0"][cols], tensors["c0"][cols])
            loss, last = ppo_loss(
                policy,
                tensors["obs"][:, cols],
                tensors["pre"][:, cols],
                tensors["logp"][:, cols],
                normalize_advantages(tensors["adv"][:, cols]),
                tensors["ret"][:, cols],
                hp.clip_epsilon,
                hp.entropy_coef,
                hp.value_coef,
                episode_starts=tensors["starts"][:, cols],
                init_state=init,
            )
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(policy.parameters(), hp.max_grad_norm)
            optimizer.step()
            last["loss"] = float(loss.detach())
    return last


def _parameters_finite(policy) -> bool:
    return all(torch.isfinite(p).all() for p in policy.parameters())


@dataclass
class TrainResult:
    """Trained policy (best evaluation checkpoint loaded), the log rows,
    the final parameters, and the best evaluation score."""

    policy: GaussianPolicy
    log: list
    final_state_dict: dict
    best_score: float


def train(
    env_factory,
    hyperparams: Hyperparams = None,
    policy_spec: PolicySpec = None,
    eval_fn=None,
    seed: int = 0,
    eval_every: int = 1,
    progress=None,
) -> TrainResult:
    """PPO training loop with evaluation-based best-model selection.

    ``env_factory(i)`` builds the i-th environment; ``eval_fn(policy)``
    (optional) returns a scalar score — the checkpoint with the best score
    is restored into the returned policy at the end.
    """
    hp = hyperparams or Hyperparams()
    torch.manual_seed(seed)
    envs = [env_factory(i) for i in range(hp.n_envs)]
    policy = GaussianPolicy(
        envs[0].observation_dim, envs[0].action_dim, policy_spec
    )
    optimizer = torch.optim.Adam(policy.parameters(), lr=hp.learning_rate)

    steps_per_rollout = hp.rollout_length * hp.n_envs
    n_updates = math.ceil(hp.total_timesteps / steps_per_rollout)
    carry = None
    log = []
    best_score = -math.inf
    best_state = None
    last_good = copy.deepcopy(policy.state_dict())

    for update in range(n_updates):
        buf, carry, finished, bootstrap = collect_rollouts(
            envs, policy, hp.rollout_length, carry, seed=seed
        )
        buf.advantages, buf.returns = compute_gae(
            buf.rewards, buf.values, buf.dones, bootstrap, hp.gamma, hp.gae_lambda
        )
        try:
            if policy.recurrent:
                parts = _update_recurrent(policy, optimizer, buf, hp)
            else:
                parts = _update_feedforward(policy, optimizer, buf, hp)
        except RuntimeError as exc:
            policy.load_state_dict(last_good)
            row = {"update": update, "aborted": str(exc)}
            log.append(row)
            break
        if not _parameters_finite(policy):
            policy.load_state_dict(last_good)
            log.append({"update": update, "aborted": "non-finite parameters"})
            break
        last_good = copy.deepcopy(policy.state_dict())

        returns = [ep["return"] for ep in finished]
        statuses = Counter(ep["status"] for ep in finished)
        goal = sum(
            statuses[s]
            for s in (
                "goal_reached_in_time",
                "goal_reached_faster",
                "goal_reached_slower",
            )
        )
        row = {
            "update": update,
            "timesteps": (update + 1) * steps_per_rollout,
            "mean_return": float(np.mean(returns)) if returns else math.nan,
            "episodes": len(finished),
            "success_rate": goal / len(finished) if finished else math.nan,
            "collisions": statuses.get("collision", 0),
            "eval_return": math.nan,
            **parts,
        }
        if eval_fn is not None and (
            update % eval_every == 0 or update == n_updates - 1
        ):
            score = float(eval_fn(policy))
            row["eval_return"] = score
            if score > best_score:
                best_score = score
                best_state = copy.deepcopy(policy.state_dict())
        log.append(row)
        if progress is not None:
            progress(row)

    final_state = copy.deepcopy(policy.state_dict())
    if best_state is not None:
        policy.load_state_dict(best_state)
    return TrainResult(
        policy=policy,
        log=log,
        final_state_dict=final_state,
        best_score=best_score,
    )


@torch.no_grad()
def evaluate_policy(policy, env, n_episodes: int, deterministic: bool = True):
    """Run full episodes; returns (mean return, status counter, returns)."""
    totals = []
    statuses = Counter()
    for _ in range(n_episodes):
        obs = env.reset()
        lstm = policy.initial_state(1) if policy.recurrent else None
        starts = torch.ones(1, dtype=torch.float64)
        done = False
        total = 0.0
        status = None
        while not done:
            obs_t = torch.as_tensor(obs, dtype=torch.float64).unsqueeze(0)
            action, _, _, _, lstm = policy.act(
                obs_t, lstm, starts, deterministic=deterministic
            )
            starts = torch.zeros(1, dtype=torch.float64)
            result = env.step(action[0].numpy())
            total += result.reward
            obs = result.observation
            done = result.terminated
            status = getattr(result, "termination_status", None)
        totals.append(total)
        statuses[getattr(status, "value", status)] += 1
    return float(np.mean(totals)), statuses, totals


def make_env_factory(
    scenarios,
    reward_config: RewardConfig = None,
    settings: PlannerSettings = None,
    weight_reset: str = "per_episode",
    sample_mode: str = "round_robin",
):
    """Factory of planner environments, staggered across the corpus."""

    def factory(index: int) -> PlannerEnv:
        return PlannerEnv(
            scenarios,
            reward_config=reward_config,
            settings=settings,
            weight_reset=weight_reset,
            sample_mode=sample_mode,
            first_scenario=index,
        )

    return factory


def make_eval_fn(
    scenarios,
    reward_config: RewardConfig = None,
    settings: PlannerSettings = None,
    weight_reset: str = "per_episode",
):
    """Mean deterministic return over one pass of the given corpus."""
    env = PlannerEnv(
        scenarios,
        reward_config=reward_config,
        settings=settings,
        weight_reset=weight_reset,
    )

    def eval_fn(policy) -> float:
        mean_return, _, _ = evaluate_policy(policy, env, len(scenarios))
        return mean_return

    return eval_fn


def save_checkpoint(path, policy: GaussianPolicy, hyperparams: Hyperparams = None,
                    extra: dict = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "obs_dim": policy.obs_dim,
        "action_dim": policy.action_dim,
        "policy_spec": {
            "hidden": list(policy.spec.hidden),
            "recurrent": policy.spec.recurrent,
            "lstm_hidden": policy.spec.lstm_hidden,
        },
        "state_dict": policy.state_dict(),
        "hyperparams": asdict(hyperparams) if hyperparams else None,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild a policy from a checkpoint; returns (policy, payload)."""
    payload = torch.load(path, weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    spec = PolicySpec(
        hidden=tuple(payload["policy_spec"]["hidden"]),
        recurrent=payload["policy_spec"]["recurrent"],
        lstm_hidden=payload["policy_spec"]["lstm_hidden"],
    )
    policy = GaussianPolicy(payload["obs_dim"], payload["action_dim"], spec)
    policy.load_state_dict(payload["state_dict"])
    policy.eval()
    return policy, payload

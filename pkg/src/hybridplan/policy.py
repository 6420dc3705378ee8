"""Gaussian actor-critic networks, feedforward or recurrent, in float64.

Actions live in [-1, 1]: a diagonal Gaussian with state-independent
learnable log-std is squashed by tanh, with the exact log-density
correction.  The recurrent variant inserts a single LSTM cell between the
MLP trunk and the heads; its state is zeroed at episode starts.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

_LOG_2 = math.log(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PolicySpec:
    hidden: tuple = (64, 64)
    recurrent: bool = False
    lstm_hidden: int = 64

    def __post_init__(self):
        if not self.hidden:
            raise ValueError("need at least one hidden layer")
        if self.lstm_hidden < 1:
            raise ValueError("lstm_hidden must be positive")


@dataclass
class LstmState:
    """Hidden and cell state, shape (batch, lstm_hidden) each."""

    h: torch.Tensor
    c: torch.Tensor

    def masked_reset(self, episode_starts: torch.Tensor) -> "LstmState":
        """Zero the state rows where an episode just started."""
        keep = (1.0 - episode_starts).unsqueeze(-1)
        return LstmState(self.h * keep, self.c * keep)

    def detach(self) -> "LstmState":
        return LstmState(self.h.detach(), self.c.detach())


def lstm_step(x: torch.Tensor, state: LstmState, cell: nn.LSTMCell):
    """One standard LSTM cell update; returns (output, new state)."""
    h, c = cell(x, (state.h, state.c))
    return h, LstmState(h, c)


def tanh_log_correction(pre_tanh: torch.Tensor) -> torch.Tensor:
    """log(1 - tanh(u)^2) computed without catastrophic cancellation."""
    return 2.0 * (_LOG_2 - pre_tanh - F.softplus(-2.0 * pre_tanh))


def squashed_log_prob(
    mean: torch.Tensor, log_std: torch.Tensor, pre_tanh: torch.Tensor
) -> torch.Tensor:
    """Log-density of a = tanh(u), u ~ N(mean, exp(log_std)), summed over
    action dimensions.  ``pre_tanh`` is u, which callers must store at
    sampling time (atanh of actions near +-1 is numerically hopeless)."""
    std = torch.exp(log_std)
    z = (pre_tanh - mean) / std
    base = -0.5 * z * z - log_std - _LOG_SQRT_2PI
    return (base - tanh_log_correction(pre_tanh)).sum(-1)


class GaussianPolicy(nn.Module):
    """Shared-trunk actor-critic with a squashed diagonal Gaussian head."""

    def __init__(self, obs_dim: int, action_dim: int, spec: PolicySpec = None):
        super().__init__()
        if spec is None:
            spec = PolicySpec()
        self.spec = spec
        self.obs_dim = obs_dim
        self.action_dim = action_dim

        layers = []
        last = obs_dim
        for width in spec.hidden:
            layers += [nn.Linear(last, width), nn.Tanh()]
            last = width
        self.trunk = nn.Sequential(*layers)
        self.cell = nn.LSTMCell(last, spec.lstm_hidden) if spec.recurrent else None
        feat = spec.lstm_hidden if spec.recurrent else last
        self.mean_head = nn.Linear(feat, action_dim)
        self.value_head = nn.Linear(feat, 1)
        self.log_std = nn.Parameter(torch.zeros(action_dim))
        self.double()

    @property
    def recurrent(self) -> bool:
        return self.cell is not None

    def initial_state(self, batch: int) -> LstmState:
        size = self.spec.lstm_hidden
        return LstmState(
            torch.zeros(batch, size, dtype=torch.float64),
            torch.zeros(batch, size, dtype=torch.float64),
        )

    def _features(self, obs, state: LstmState, episode_starts):
        feat = self.trunk(obs)
        if self.cell is None:
            return feat, state
        if state is None:
            state = self.initial_state(obs.shape[0])
        if episode_starts is not None:
            state = state.masked_reset(episode_starts)
        feat, state = lstm_step(feat, state, self.cell)
        return feat, state

    def forward(self, obs, state: LstmState = None, episode_starts=None):
        """Returns (mean, log_std, value, new lstm state)."""
        feat, state = self._features(obs, state, episode_starts)
        return (
            self.mean_head(feat),
            self.log_std,
            self.value_head(feat).squeeze(-1),
            state,
        )

    @torch.no_grad()
    def act(self, obs, state: LstmState = None, episode_starts=None,
            deterministic: bool = False):
        """Sample (or take the mean of) the squashed Gaussian.

        Returns (action, pre_tanh, log_prob, value, new state).
        """
        mean, log_std, value, state = self.forward(obs, state, episode_starts)
        if deterministic:
            pre = mean
        else:
            pre = mean + torch.exp(log_std) * torch.randn_like(mean)
        action = torch.tanh(pre)
        log_prob = squashed_log_prob(mean, log_std, pre)
        return action, pre, log_prob, value, state

    def entropy(self) -> torch.Tensor:
        """Entropy of the pre-squash Gaussian (the usual PPO surrogate;
        the squashed distribution has no closed form)."""
        return (0.5 * (1.0 + math.log(2.0 * math.pi)) + self.log_std).sum()

    def evaluate_actions(self, obs, pre_tanh):
        """Feedforward batch evaluation: (log_prob, entropy, value)."""
        mean, log_std, value, _ = self.forward(obs)
        log_prob = squashed_log_prob(mean, log_std, pre_tanh)
        entropy = self.entropy().expand(log_prob.shape)
        return log_prob, entropy, value

    def evaluate_sequence(self, obs_seq, pre_tanh_seq, episode_starts_seq,
                          init_state: LstmState):
        """Recurrent batch evaluation over contiguous sequences.

        Inputs are (T, N, ...); the LSTM is replayed from ``init_state``
        with per-step episode-start resets.  Returns (T, N) tensors.
        """
        steps = obs_seq.shape[0]
        state = init_state
        log_probs, values = [], []
        for t in range(steps):
            mean, log_std, value, state = self.forward(
                obs_seq[t], state, episode_starts_seq[t]
            )
            log_probs.append(squashed_log_prob(mean, log_std, pre_tanh_seq[t]))
            values.append(value)
        log_prob = torch.stack(log_probs)
        entropy = self.entropy().expand(log_prob.shape)
        return log_prob, entropy, torch.stack(values)

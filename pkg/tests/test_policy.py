import math

import numpy as np
import pytest
import torch
from torch import nn

from hybridplan.policy import (
    GaussianPolicy,
    LstmState,
    PolicySpec,
    lstm_step,
    squashed_log_prob,
    tanh_log_correction,
)

from oracles import lstm_scalar_step

OBS_DIM = 57
ACT_DIM = 5


def make_policy(recurrent=False, seed=0):
    torch.manual_seed(seed)
    return GaussianPolicy(OBS_DIM, ACT_DIM, PolicySpec(recurrent=recurrent))


def test_spec_validation():
    with pytest.raises(ValueError, match="hidden"):
        PolicySpec(hidden=())
    with pytest.raises(ValueError, match="lstm_hidden"):
        PolicySpec(lstm_hidden=0)


def test_parameters_are_float64():
    policy = make_policy()
    assert all(p.dtype == torch.float64 for p in policy.parameters())
    assert policy.log_std.shape == (ACT_DIM,)
    assert torch.equal(policy.log_std, torch.zeros(ACT_DIM, dtype=torch.float64))


def test_squashed_log_prob_matches_naive_formula():
    torch.manual_seed(1)
    mean = torch.randn(40, ACT_DIM, dtype=torch.float64)
    log_std = torch.randn(ACT_DIM, dtype=torch.float64) * 0.3
    pre = torch.randn(40, ACT_DIM, dtype=torch.float64) * 2.0

    std = torch.exp(log_std)
    gauss = (
        -0.5 * ((pre - mean) / std) ** 2
        - torch.log(std)
        - 0.5 * math.log(2.0 * math.pi)
    )
    naive = (gauss - torch.log1p(-torch.tanh(pre) ** 2)).sum(-1)
    got = squashed_log_prob(mean, log_std, pre)
    assert torch.allclose(got, naive, atol=1e-12)


def test_tanh_correction_stable_far_from_origin():
    # log(1 - tanh(u)^2) ~ 2(log 2 - u) for large u; the naive form
    # underflows to log(0) long before u = 300
    u = torch.tensor([30.0, 100.0, 300.0], dtype=torch.float64)
    got = tanh_log_correction(u)
    assert torch.isfinite(got).all()
    assert torch.allclose(got, 2.0 * (math.log(2.0) - u), atol=1e-12)


def test_squashed_density_integrates_to_one():
    mean = torch.tensor([0.3], dtype=torch.float64)
    log_std = torch.tensor([-0.2], dtype=torch.float64)
    a = torch.linspace(-1.0 + 1e-7, 1.0 - 1e-7, 400_001, dtype=torch.float64)
    pre = torch.atanh(a)
    log_p = squashed_log_prob(mean, log_std, pre.unsqueeze(-1))
    mass = torch.trapezoid(torch.exp(log_p), a)
    assert float(mass) == pytest.approx(1.0, abs=1e-3)


def test_act_deterministic_uses_mean():
    policy = make_policy()
    obs = torch.randn(3, OBS_DIM, dtype=torch.float64)
    action, pre, log_prob, value, _ = policy.act(obs, deterministic=True)
    mean, log_std, value2, _ = policy.forward(obs)
    assert torch.equal(pre, mean)
    assert torch.equal(action, torch.tanh(mean))
    assert torch.equal(value, value2)
    assert torch.equal(log_prob, squashed_log_prob(mean, log_std, mean))
    again, _, _, _, _ = policy.act(obs, deterministic=True)
    assert torch.equal(action, again)


def test_act_sampling_seeded_and_bounded():
    policy = make_policy()
    obs = torch.randn(4, OBS_DIM, dtype=torch.float64)
    torch.manual_seed(7)
    a1, p1, lp1, _, _ = policy.act(obs)
    torch.manual_seed(7)
    a2, p2, lp2, _, _ = policy.act(obs)
    assert torch.equal(a1, a2) and torch.equal(p1, p2) and torch.equal(lp1, lp2)
    assert (a1.abs() < 1.0).all()
    assert torch.equal(a1, torch.tanh(p1))


def test_evaluate_actions_agrees_with_act():
    policy = make_policy()
    obs = torch.randn(8, OBS_DIM, dtype=torch.float64)
    _, pre, log_prob, value, _ = policy.act(obs)
    log_prob2, entropy, value2 = policy.evaluate_actions(obs, pre)
    assert torch.equal(log_prob, log_prob2)
    assert torch.equal(value, value2)
    assert entropy.shape == log_prob.shape


def test_entropy_closed_form():
    policy = make_policy()
    expected = ACT_DIM * 0.5 * (1.0 + math.log(2.0 * math.pi))
    assert float(policy.entropy().detach()) == pytest.approx(expected, rel=1e-12)
    with torch.no_grad():
        policy.log_std += 0.5
    assert float(policy.entropy().detach()) == pytest.approx(
        expected + 0.5 * ACT_DIM, rel=1e-12
    )


# ---------------------------------------------------------------------------
# LSTM


@torch.no_grad()
def test_lstm_step_matches_scalar_reference():
    torch.manual_seed(3)
    cell = nn.LSTMCell(6, 4).double()
    for trial in range(10):
        x = torch.randn(1, 6, dtype=torch.float64)
        state = LstmState(
            torch.randn(1, 4, dtype=torch.float64),
            torch.randn(1, 4, dtype=torch.float64),
        )
        out, new = lstm_step(x, state, cell)
        h_ref, c_ref = lstm_scalar_step(
            x[0].numpy(),
            state.h[0].numpy(),
            state.c[0].numpy(),
            cell.weight_ih.detach().numpy(),
            cell.weight_hh.detach().numpy(),
            cell.bias_ih.detach().numpy(),
            cell.bias_hh.detach().numpy(),
        )
        np.testing.assert_allclose(out[0].numpy(), h_ref, atol=1e-10)
        np.testing.assert_allclose(new.c[0].numpy(), c_ref, atol=1e-10)


def test_lstm_zero_weights_zero_state_gives_zero_output():
    cell = nn.LSTMCell(3, 2).double()
    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
    state = LstmState(torch.zeros(1, 2).double(), torch.zeros(1, 2).double())
    out, new = lstm_step(torch.zeros(1, 3).double(), state, cell)
    assert torch.equal(out, torch.zeros(1, 2).double())
    assert torch.equal(new.c, torch.zeros(1, 2).double())


def test_lstm_closed_forget_gate_ignores_previous_cell():
    torch.manual_seed(4)
    cell = nn.LSTMCell(3, 2).double()
    with torch.no_grad():
        # forget-gate block is the second quarter of the bias vector
        cell.bias_ih[2:4] = -1e3
        cell.bias_hh[2:4] = -1e3
    x = torch.randn(1, 3, dtype=torch.float64)
    h = torch.randn(1, 2, dtype=torch.float64)
    _, a = lstm_step(x, LstmState(h, torch.full((1, 2), 5.0).double()), cell)
    _, b = lstm_step(x, LstmState(h, torch.full((1, 2), -7.0).double()), cell)
    assert torch.allclose(a.c, b.c, atol=1e-12)


def test_masked_reset_zeroes_started_rows():
    state = LstmState(
        torch.ones(3, 4, dtype=torch.float64) * 2.0,
        torch.ones(3, 4, dtype=torch.float64) * 3.0,
    )
    reset = state.masked_reset(torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64))
    assert torch.equal(reset.h[0], torch.zeros(4).double())
    assert torch.equal(reset.h[1], state.h[1])
    assert torch.equal(reset.c[2], torch.zeros(4).double())


def test_initial_state_is_zero():
    policy = make_policy(recurrent=True)
    state = policy.initial_state(5)
    assert state.h.shape == (5, 64) and state.c.shape == (5, 64)
    assert not state.h.any() and not state.c.any()


def test_recurrent_state_changes_output():
    policy = make_policy(recurrent=True)
    obs = torch.randn(1, OBS_DIM, dtype=torch.float64)
    state = policy.initial_state(1)
    a1, _, _, _, state = policy.act(obs, state, deterministic=True)
    a2, _, _, _, _ = policy.act(obs, state, deterministic=True)
    fresh, _, _, _, _ = policy.act(obs, policy.initial_state(1), deterministic=True)
    assert torch.equal(a1, fresh)
    assert not torch.equal(a1, a2)


def test_evaluate_sequence_replays_stepwise_forward():
    policy = make_policy(recurrent=True, seed=5)
    T, N = 6, 2
    torch.manual_seed(6)
    obs = torch.randn(T, N, OBS_DIM, dtype=torch.float64)
    pre = torch.randn(T, N, ACT_DIM, dtype=torch.float64)
    starts = torch.zeros(T, N, dtype=torch.float64)
    starts[0] = 1.0
    starts[3, 1] = 1.0  # env 1 begins a new episode mid-sequence
    init = LstmState(
        torch.randn(N, 64, dtype=torch.float64),
        torch.randn(N, 64, dtype=torch.float64),
    )

    log_prob, entropy, value = policy.evaluate_sequence(obs, pre, starts, init)
    assert log_prob.shape == (T, N) and value.shape == (T, N)

    state = init
    for t in range(T):
        mean, log_std, v, state = policy.forward(obs[t], state, starts[t])
        expected = squashed_log_prob(mean, log_std, pre[t])
        assert torch.equal(log_prob[t], expected)
        assert torch.equal(value[t], v)
    assert torch.equal(entropy, policy.entropy().expand(T, N))


def test_feedforward_ignores_state_arguments():
    policy = make_policy()
    obs = torch.randn(2, OBS_DIM, dtype=torch.float64)
    m1, _, v1, s1 = policy.forward(obs)
    m2, _, v2, s2 = policy.forward(
        obs,
        LstmState(torch.ones(2, 64).double(), torch.ones(2, 64).double()),
        torch.ones(2, dtype=torch.float64),
    )
    assert torch.equal(m1, m2) and torch.equal(v1, v2)
    assert s1 is None or not policy.recurrent

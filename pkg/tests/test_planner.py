import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from latentdrive.errors import UsageError
from latentdrive.nn.checkpoint import checksum
from latentdrive.nn.ops import BucketSpec, twohot, symlog
from latentdrive.planner import (
    Planner,
    actor_loss,
    critic_loss,
    lambda_returns,
    reset_planner,
    update_return_scale,
)
from latentdrive.world_model import WorldModel

from conftest import tiny_planner_config, tiny_world_model_config

CENTERS = BucketSpec().centers()
CHI2_29_999 = 58.301  # 99.9% quantile of chi-square with 29 degrees of freedom


# lambda returns -----------------------------------------------------------------
def test_gamma_zero_returns_rewards():
    r = [1.0, -2.0, 3.0]
    assert lambda_returns(r, [5.0] * 3, [1.0] * 3, 0.0, 0.95, 7.0) == r


def test_two_step_example():
    assert lambda_returns([1.0, 1.0], [0.0, 0.0], [1.0, 1.0], 1.0, 1.0, 0.0) == [2.0, 1.0]


def test_terminated_continues_cut_bootstrap():
    r = [0.5, 1.0, -1.0]
    assert lambda_returns(r, [9.0] * 3, [0.0] * 3, 0.99, 0.9, 100.0) == r


def test_length_mismatch():
    with pytest.raises(UsageError):
        lambda_returns([1.0, 2.0], [1.0], [1.0, 1.0], 0.9, 0.9, 0.0)


def n_step_oracle(r, v, c, gamma, lam, boot):
    """Weighted mixture of n-step returns, evaluated directly."""
    T = len(r)
    value_at = lambda k: v[k] if k < T else boot  # noqa: E731
    out = []
    for t in range(T):
        horizon = T - t
        total = 0.0
        for n in range(1, horizon + 1):
            g, disc = 0.0, 1.0
            for k in range(n):
                g += disc * r[t + k]
                disc *= gamma * c[t + k]
            g += disc * value_at(t + n)
            weight = (1 - lam) * lam ** (n - 1) if n < horizon else lam ** (horizon - 1)
            total += weight * g
        out.append(total)
    return out


def test_lambda_returns_match_exhaustive_oracle():
    gamma, lam = 0.9, 0.7
    count = 0
    for T in range(1, 5):
        for r in itertools.product([-1.0, 0.0, 2.0], repeat=T):
            for v in itertools.product([0.0, 1.5], repeat=T):
                for c in itertools.product([0.0, 1.0], repeat=T):
                    for boot in (0.0, -3.0):
                        got = lambda_returns(list(r), list(v), list(c), gamma, lam, boot)
                        want = n_step_oracle(r, v, c, gamma, lam, boot)
                        assert np.allclose(got, want, atol=1e-12), (r, v, c, boot)
                        count += 1
    assert count > 40_000


def test_tensor_and_list_forms_agree():
    g = torch.Generator().manual_seed(0)
    r, v = torch.randn(6, 3, generator=g), torch.randn(6, 3, generator=g)
    c = (torch.rand(6, 3, generator=g) > 0.2).float()
    boot = torch.randn(3, generator=g)
    out = lambda_returns(r, v, c, 0.985, 0.95, boot)
    for j in range(3):
        ref = lambda_returns(r[:, j].tolist(), v[:, j].tolist(), c[:, j].tolist(), 0.985, 0.95, boot[j].item())
        assert np.allclose(out[:, j].numpy(), ref, atol=1e-5)


# return scale -------------------------------------------------------------------
def test_first_update_from_zero():
    returns = torch.linspace(0.0, 100.0, 10_001)
    assert update_return_scale(0.0, returns, 0.99) == pytest.approx(0.01 * 90.0, rel=1e-9)


def test_uniform_returns_range_is_ninety():
    returns = torch.from_numpy(np.random.default_rng(0).uniform(0, 100, 200_000))
    s = returns.sort().values
    oracle = float(s[int(0.95 * (len(s) - 1))] - s[int(0.05 * (len(s) - 1))])
    got = update_return_scale(0.0, returns, 0.0)
    assert got == pytest.approx(oracle, abs=0.01)
    assert got == pytest.approx(90.0, abs=0.5)


def test_constant_returns_decay_scale():
    s = 50.0
    for _ in range(1000):
        s = update_return_scale(s, torch.full((64,), 3.0), 0.99)
    assert 0.0 <= s < 1e-2
    assert max(1.0, s) == 1.0


def test_empty_returns_rejected():
    with pytest.raises(UsageError):
        update_return_scale(0.0, torch.zeros(0))


# critic ---------------------------------------------------------------------------
class Fixed(torch.nn.Module):
    def __init__(self, logits):
        super().__init__()
        self.logits = torch.nn.Parameter(logits.clone())

    def forward(self, feats):
        return self.logits.expand(feats.shape[0], -1)


def test_critic_loss_floor_is_target_entropy():
    target = torch.tensor([4.2])
    y = twohot(symlog(target), CENTERS)
    loss = critic_loss(Fixed(torch.log(y.clamp_min(1e-30))), torch.zeros(1, 1), target, CENTERS)
    ent = -(y[y > 0] * y[y > 0].log()).sum()
    assert loss.item() == pytest.approx(ent.item(), abs=1e-5)
    assert ent.item() <= math.log(2)


def test_critic_loss_vanishes_on_a_peaked_center():
    logits = torch.full((1, 63), -50.0)
    logits[0, 31] = 50.0
    loss = critic_loss(Fixed(logits), torch.zeros(1, 1), torch.zeros(1), CENTERS)
    assert loss.item() < 1e-6


def test_critic_targets_carry_no_gradient():
    targets = torch.randn(5, requires_grad=True)
    critic = torch.nn.Linear(3, 63)
    loss = critic_loss(critic, torch.randn(5, 3), targets, CENTERS)
    (g,) = torch.autograd.grad(loss, [targets], allow_unused=True)
    assert g is None


def test_critic_gradient_check():
    critic = torch.nn.Linear(2, 63).double()
    feats = torch.randn(4, 2, dtype=torch.float64)
    targets = torch.randn(4, dtype=torch.float64) * 3
    params = list(critic.parameters())

    def fn(w, b):
        return critic_loss(lambda x: x @ w.T + b, feats, targets, CENTERS.double())

    assert torch.autograd.gradcheck(fn, [p.detach().clone().requires_grad_(True) for p in params])


# actor ----------------------------------------------------------------------------
def test_equal_returns_leave_only_the_entropy_push():
    logits = torch.tensor([[2.0, 0.0, -1.0]] * 8, requires_grad=True)
    actions = torch.tensor([0, 1, 2, 0, 1, 2, 0, 0])
    returns = torch.full((8,), 5.0)
    loss, _ = actor_loss(logits, actions, returns, returns, 1e6, 0.0)
    (g,) = torch.autograd.grad(loss, [logits])
    assert g.abs().max() == 0.0
    loss, ent = actor_loss(logits, actions, returns, returns, 1e6, 0.1)
    (g,) = torch.autograd.grad(loss, [logits])
    stepped = logits - 1.0 * g
    new_ent = -(stepped.softmax(-1) * stepped.log_softmax(-1)).sum(-1)
    assert (new_ent > ent).all()


@given(st.floats(1.0, 1e3), st.floats(1.0, 50.0))
@settings(max_examples=30)
def test_scaling_returns_and_scale_together_is_invisible(scale, k):
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(6, 4, generator=g)
    actions = torch.randint(0, 4, (6,), generator=g)
    returns, baseline = torch.randn(6, generator=g), torch.randn(6, generator=g)
    a, _ = actor_loss(logits, actions, returns, baseline, scale, 0.0)
    b, _ = actor_loss(logits, actions, returns * k, baseline * k, scale * k, 0.0)
    assert a.item() == pytest.approx(b.item(), rel=1e-5, abs=1e-7)


def test_returns_are_frozen_in_the_actor_loss():
    returns = torch.randn(4, requires_grad=True)
    baseline = torch.randn(4, requires_grad=True)
    loss, _ = actor_loss(torch.randn(4, 3, requires_grad=True), torch.tensor([0, 1, 2, 0]), returns, baseline, 1.0, 0.1)
    assert torch.autograd.grad(loss, [returns, baseline], allow_unused=True) == (None, None)


def test_actor_gradient_check_two_actions():
    actions = torch.tensor([0, 1, 1])
    returns = torch.tensor([1.0, -0.5, 2.0], dtype=torch.float64)
    baseline = torch.zeros(3, dtype=torch.float64)
    logits = torch.randn(3, 2, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: actor_loss(x, actions, returns, baseline, 1.5, 0.01)[0], [logits])


# act ------------------------------------------------------------------------------
def planner_with_logits(logits):
    p = Planner(8, tiny_planner_config())
    with torch.no_grad():
        p.actor.out.weight.zero_()
        p.actor.out.bias.copy_(logits)
    return p


class State:
    def __init__(self, n):
        self.n = n

    def feat(self):
        return torch.zeros(self.n, 8)


def test_dominant_logit_wins_in_both_modes():
    logits = torch.zeros(30)
    logits[17] = 1e6
    p = planner_with_logits(logits)
    assert (p.act(State(5), "greedy") == 17).all()
    assert (p.act(State(5), "sample", torch.Generator().manual_seed(0)) == 17).all()


def test_greedy_tie_break_is_lowest_index():
    p = planner_with_logits(torch.zeros(30))
    assert (p.act(State(3), "greedy") == 0).all()
    logits = torch.zeros(30)
    logits[[4, 9]] = 2.0
    assert (planner_with_logits(logits).act(State(2), "greedy") == 4).all()


def test_unknown_mode():
    with pytest.raises(UsageError):
        planner_with_logits(torch.zeros(30)).act(State(1), "random")


def test_sampling_frequencies_match_softmax():
    logits = torch.linspace(-1.0, 1.0, 30)
    p = planner_with_logits(logits)
    n = 100_000
    draws = p.act(State(n), "sample", torch.Generator().manual_seed(0))
    counts = torch.bincount(draws, minlength=30).double()
    expected = torch.softmax(logits.double(), 0) * n
    chi2 = ((counts - expected) ** 2 / expected).sum().item()
    assert chi2 < CHI2_29_999
    sigma = (expected * (1 - expected / n)).sqrt()
    assert ((counts - expected).abs() <= 3 * sigma + 1).float().mean() >= 0.95


def test_sampling_is_reproducible():
    p = planner_with_logits(torch.randn(30))
    a = p.act(State(50), "sample", torch.Generator().manual_seed(3))
    b = p.act(State(50), "sample", torch.Generator().manual_seed(3))
    assert torch.equal(a, b)


@given(st.floats(-100, 100))
@settings(max_examples=25, deadline=None)
def test_greedy_is_shift_invariant(c):
    logits = torch.randn(30, generator=torch.Generator().manual_seed(1)) * 3
    base = planner_with_logits(logits).act(State(1), "greedy")
    assert torch.equal(planner_with_logits(logits + c).act(State(1), "greedy"), base)


@given(st.integers(0, 10_000), st.floats(0.01, 100))
@settings(max_examples=40)
def test_policy_entropy_bounds(seed, temp):
    logits = torch.randn(16, 30, generator=torch.Generator().manual_seed(seed)) * temp
    _, ent = actor_loss(logits, torch.zeros(16, dtype=torch.long), torch.zeros(16), torch.zeros(16), 1.0, 0.0)
    assert (ent >= -1e-6).all() and (ent <= math.log(30) + 1e-5).all()


def test_heads_have_the_expected_widths():
    p = Planner(8, tiny_planner_config())
    assert p.actor(torch.zeros(1, 8)).shape == (1, 30)
    assert p.critic(torch.zeros(1, 8)).shape == (1, 63)


# reset and imagination losses ---------------------------------------------------------
@pytest.fixture
def pair():
    torch.manual_seed(0)
    wm = WorldModel(tiny_world_model_config())
    return wm, Planner(wm.cfg.feat_size, tiny_planner_config())


def test_reset_redraws_only_the_planner(pair):
    wm, planner = pair
    wm_before, actor_before = checksum(wm), checksum(planner.actor)
    planner.return_scale = 12.0
    rng_state = torch.random.get_rng_state()
    reset_planner(planner, 123)
    assert torch.equal(torch.random.get_rng_state(), rng_state)
    assert checksum(wm) == wm_before
    assert checksum(planner.actor) != actor_before
    assert planner.return_scale == 0.0
    other = Planner(wm.cfg.feat_size, tiny_planner_config())
    reset_planner(other, 123)
    assert checksum(other) == checksum(planner)
    assert checksum(other.slow_critic) == checksum(other.critic)


def test_planner_losses_do_not_touch_the_world_model(pair):
    wm, planner = pair
    start = wm.initial(6)
    a_loss, c_loss, stats = planner.losses(wm, start, torch.Generator().manual_seed(0))
    assert math.isfinite(a_loss.item()) and math.isfinite(c_loss.item())
    grads = torch.autograd.grad(a_loss + c_loss, list(wm.parameters()), allow_unused=True)
    assert all(g is None for g in grads)
    assert stats["return_scale"] >= 0.0
    assert 0.0 <= stats["entropy"] <= math.log(30) + 1e-5


def test_slow_critic_tracks_the_critic(pair):
    _, planner = pair
    with torch.no_grad():
        for p in planner.critic.parameters():
            p.fill_(1.0)
        for p in planner.slow_critic.parameters():
            p.fill_(0.0)
    planner.update_slow_critic()
    for p in planner.slow_critic.parameters():
        assert torch.allclose(p, torch.full_like(p, 0.02))

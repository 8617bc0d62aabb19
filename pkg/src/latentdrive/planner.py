"""Actor-critic trained on imagined latent rollouts."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .actions import NUM_ACTIONS
from .errors import UsageError
from .nn.layers import MLP
from .nn.ops import BucketSpec, bucket_mean, check_finite, twohot_loss
from .world_model import LatentState


@dataclass
class PlannerConfig:
    horizon: int = 15
    gamma: float = 0.985
    lam: float = 0.95
    entropy: float = 3e-4
    return_decay: float = 0.99
    slow_critic_decay: float = 0.98
    hidden: int = 192
    layers: int = 3
    buckets: BucketSpec = BucketSpec()


def lambda_returns(rewards, values, continues, gamma: float, lam: float, bootstrap):
    """Backward recursion ``R_t = r_t + gamma c_t ((1 - lam) v_{t+1} + lam R_{t+1})``.

    Past the last step both ``v`` and ``R`` are replaced by ``bootstrap``.
    Works on Python lists or on tensors whose first axis is time.
    """
    n = len(rewards)
    if len(values) != n or len(continues) != n:
        raise UsageError(f"lambda_returns length mismatch: {n}, {len(values)}, {len(continues)}")
    out = [None] * n
    nxt_ret = bootstrap
    for t in reversed(range(n)):
        nxt_val = values[t + 1] if t + 1 < n else bootstrap
        nxt_ret = rewards[t] + gamma * continues[t] * ((1 - lam) * nxt_val + lam * nxt_ret)
        out[t] = nxt_ret
    if isinstance(rewards, torch.Tensor):
        return torch.stack(out)
    return out


def update_return_scale(scale: float, returns: torch.Tensor, decay: float = 0.99) -> float:
    """Decayed mean of the 5th-95th percentile range of ``returns``."""
    if returns.numel() == 0:
        raise UsageError("update_return_scale needs a nonempty batch")
    flat = returns.detach().flatten().to(torch.float64)
    lo, hi = torch.quantile(flat, torch.tensor([0.05, 0.95], dtype=torch.float64))
    return float(decay * scale + (1.0 - decay) * float(hi - lo))


def critic_loss(critic: nn.Module, feats: torch.Tensor, targets: torch.Tensor, centers, weights=None):
    """Two-hot cross-entropy of the critic against frozen return targets."""
    loss = twohot_loss(critic(feats), targets.detach(), centers)
    if weights is not None:
        loss = loss * weights.detach()
    return loss.mean()


def actor_loss(logits, actions, returns, baseline, scale: float, entropy_coef: float, weights=None):
    """REINFORCE on normalised frozen advantages, plus an entropy bonus.

    Minimising this maximises ``logp * (R - v) / max(1, S) + beta * H``.
    """
    logp_all = F.log_softmax(logits, dim=-1)
    logp = logp_all.gather(-1, actions.unsqueeze(-1)).squeeze(-1)
    entropy = -(logp_all.exp() * logp_all).sum(-1)
    adv = ((returns - baseline) / max(1.0, scale)).detach()
    obj = logp * adv + entropy_coef * entropy
    if weights is not None:
        obj = obj * weights.detach()
    return -obj.mean(), entropy


class Planner(nn.Module):
    def __init__(self, feat_size: int, cfg: PlannerConfig | None = None, num_actions: int = NUM_ACTIONS):
        super().__init__()
        cfg = cfg or PlannerConfig()
        self.cfg = cfg
        self.feat_size = feat_size
        self.num_actions = num_actions
        self.actor = MLP(feat_size, num_actions, cfg.hidden, cfg.layers)
        self.critic = MLP(feat_size, cfg.buckets.count, cfg.hidden, cfg.layers)
        nn.init.zeros_(self.critic.out.weight)
        nn.init.zeros_(self.critic.out.bias)
        self.slow_critic = copy.deepcopy(self.critic).requires_grad_(False)
        self.register_buffer("centers", cfg.buckets.centers(), persistent=False)
        self.return_scale = 0.0

    def parameters_trainable(self):
        return list(self.actor.parameters()) + list(self.critic.parameters())

    def act(self, state: LatentState, mode: str = "sample", generator=None) -> torch.Tensor:
        """Greedy takes the arg-max (lowest index on ties); sample draws from the softmax."""
        logits = self.actor(state.feat())
        if mode == "greedy":
            return logits.argmax(-1)
        if mode != "sample":
            raise UsageError(f"unknown act mode {mode!r}")
        probs = F.softmax(logits, dim=-1)
        flat = probs.reshape(-1, probs.shape[-1])
        return torch.multinomial(flat, 1, generator=generator).reshape(probs.shape[:-1])

    def policy(self, generator=None):
        """Sampling policy in the form :meth:`WorldModel.imagine` expects."""

        def run(state):
            logits = self.actor(state.feat())
            logp_all = F.log_softmax(logits, dim=-1)
            flat = logp_all.exp().reshape(-1, logits.shape[-1])
            a = torch.multinomial(flat, 1, generator=generator).reshape(logits.shape[:-1])
            logp = logp_all.gather(-1, a.unsqueeze(-1)).squeeze(-1)
            ent = -(logp_all.exp() * logp_all).sum(-1)
            return a, logp, ent, F.one_hot(a, self.num_actions).to(logits.dtype)

        return run

    def value(self, feat, slow: bool = False):
        net = self.slow_critic if slow else self.critic
        return bucket_mean(net(feat), self.centers)

    @torch.no_grad()
    def update_slow_critic(self):
        d = self.cfg.slow_critic_decay
        for slow, fast in zip(self.slow_critic.parameters(), self.critic.parameters()):
            slow.mul_(d).add_((1.0 - d) * fast)

    def losses(self, world_model, start: LatentState, generator=None):
        """Imagine from ``start`` and return ``(actor_loss, critic_loss, stats)``."""
        cfg = self.cfg
        with torch.no_grad():
            traj = world_model.imagine(start.detach(), self.policy(generator), cfg.horizon, generator)
            feats = traj.states.feat()  # (T + 1, N, F)
            values = self.value(feats, slow=True)
            returns = lambda_returns(
                traj.rewards, values[:-1], traj.continues, cfg.gamma, cfg.lam, values[-1]
            )
            # weight of step t: probability the episode is still running there
            weights = torch.cumprod(torch.cat([torch.ones_like(traj.continues[:1]), traj.continues[:-1]]), 0)
            self.return_scale = update_return_scale(self.return_scale, returns, cfg.return_decay)
        inp = feats[:-1]
        logits = self.actor(inp)
        baseline = self.value(inp).detach()
        a_loss, entropy = actor_loss(
            logits, traj.actions, returns, baseline, self.return_scale, cfg.entropy, weights
        )
        c_loss = critic_loss(self.critic, inp, returns, self.centers, weights)
        check_finite("actor loss", a_loss)
        check_finite("critic loss", c_loss)
        stats = {
            "actor_loss": float(a_loss.detach()),
            "critic_loss": float(c_loss.detach()),
            "return_mean": float(returns.mean()),
            "return_scale": self.return_scale,
            "entropy": float(entropy.detach().mean()),
            "imag_reward": float(traj.rewards.mean()),
        }
        return a_loss, c_loss, stats


def reset_planner(planner: Planner, seed: int) -> Planner:
    """Redraw actor and critic parameters from the initialiser; zero the return scale."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        fresh = Planner(planner.feat_size, planner.cfg, planner.num_actions)
    planner.load_state_dict(fresh.state_dict())
    planner.slow_critic.load_state_dict(fresh.slow_critic.state_dict())
    planner.return_scale = 0.0
    return planner

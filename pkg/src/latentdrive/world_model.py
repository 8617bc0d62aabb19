"""Recurrent state-space world model over BEV observations.

State ``s_t = (h_t, z_t)``: ``h`` is the GRU state and ``z`` is a set of
``groups`` one-hot categorical variables with ``classes`` entries each.
Training sequences hold records ``(x_t, a_{t-1}, r_t, c_t)``: the
observation, the action that led to it, the reward of that transition and
whether it ended the episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .actions import NUM_ACTIONS
from .bev import DESK_BEV, BevConfig
from .nn.layers import MLP, ConvDecoder, ConvEncoder, GRUCell
from .nn.ops import (
    BucketSpec,
    bucket_mean,
    categorical_kl,
    check_finite,
    sample_straight_through,
    symlog,
    twohot_loss,
    unimix_probs,
)


@dataclass
class WorldModelConfig:
    bev: BevConfig = DESK_BEV
    num_actions: int = NUM_ACTIONS
    groups: int = 16
    classes: int = 16
    deter: int = 192
    hidden: int = 192
    mlp_layers: int = 3
    cnn_depth: int = 24
    unimix: float = 0.01
    buckets: BucketSpec = field(default_factory=BucketSpec)
    free_bits: float = 1.0
    beta_pred: float = 1.0
    beta_dyn: float = 1.0
    beta_rep: float = 0.1
    max_done_weight: float = 20.0
    decode_fraction: float = 1.0  # share of valid frames whose BEV reconstruction enters each loss

    @property
    def stoch(self) -> int:
        return self.groups * self.classes

    @property
    def feat_size(self) -> int:
        return self.deter + self.stoch


@dataclass
class LatentState:
    h: torch.Tensor  # (..., deter)
    z: torch.Tensor  # (..., groups, classes)

    def feat(self) -> torch.Tensor:
        return torch.cat([self.h, self.z.flatten(-2)], dim=-1)

    def detach(self) -> "LatentState":
        return LatentState(self.h.detach(), self.z.detach())

    def reshape(self, *shape) -> "LatentState":
        return LatentState(self.h.reshape(*shape, self.h.shape[-1]), self.z.reshape(*shape, *self.z.shape[-2:]))


@dataclass
class LossReport:
    l_pred: torch.Tensor
    l_dyn: torch.Tensor
    l_rep: torch.Tensor
    total: torch.Tensor
    parts: dict
    posterior: LatentState  # per-step posterior states, (B, L)
    prior_probs: torch.Tensor
    post_probs: torch.Tensor


@dataclass
class ImaginedTrajectory:
    """``rewards[t]`` and ``continues[t]`` belong to taking ``actions[t]`` in ``states[t]``."""

    states: LatentState  # (T + 1, N)
    actions: torch.Tensor  # (T, N) action ids
    log_probs: torch.Tensor  # (T, N) log pi(a_t | s_t)
    entropies: torch.Tensor  # (T, N)
    rewards: torch.Tensor  # (T, N)
    continues: torch.Tensor  # (T, N)


class WorldModel(nn.Module):
    def __init__(self, cfg: WorldModelConfig | None = None):
        super().__init__()
        cfg = cfg or WorldModelConfig()
        self.cfg = cfg
        bev = cfg.bev
        meas = bev.measurement_size
        self.encoder = ConvEncoder(bev.channels, bev.size, cfg.cnn_depth)
        self.meas_encoder = MLP(meas, cfg.hidden, cfg.hidden, 1)
        embed = self.encoder.out_size + cfg.hidden
        self.posterior = MLP(cfg.deter + embed, cfg.stoch, cfg.hidden, 1)
        self.prior = MLP(cfg.deter, cfg.stoch, cfg.hidden, 1)
        self.seq_in = nn.Sequential(
            nn.Linear(cfg.stoch + cfg.num_actions, cfg.hidden), nn.LayerNorm(cfg.hidden), nn.SiLU()
        )
        self.gru = GRUCell(cfg.hidden, cfg.deter)
        self.reward_head = MLP(cfg.feat_size, cfg.buckets.count, cfg.hidden, cfg.mlp_layers)
        self.term_head = MLP(cfg.feat_size, 1, cfg.hidden, cfg.mlp_layers)
        self.decoder = ConvDecoder(cfg.feat_size, bev.channels, bev.size, cfg.cnn_depth)
        self.meas_decoder = MLP(cfg.feat_size, meas, cfg.hidden, cfg.mlp_layers)
        nn.init.zeros_(self.reward_head.out.weight)
        nn.init.zeros_(self.reward_head.out.bias)
        self.register_buffer("centers", cfg.buckets.centers(), persistent=False)

    # distributions -------------------------------------------------------
    def _probs(self, logits):
        logits = logits.reshape(*logits.shape[:-1], self.cfg.groups, self.cfg.classes)
        return unimix_probs(logits, self.cfg.unimix)

    def _draw(self, probs, generator, soft):
        if soft:
            return probs
        return sample_straight_through(probs, generator)

    def initial(self, batch: int) -> LatentState:
        """Zero recurrent state with the prior's mode as the latent."""
        h = torch.zeros(batch, self.cfg.deter, dtype=self.centers.dtype)
        probs = self._probs(self.prior(h))
        z = F.one_hot(probs.argmax(-1), self.cfg.classes).to(h.dtype)
        return LatentState(h, z)

    def embed(self, obs, meas):
        return torch.cat([self.encoder(obs), self.meas_encoder(symlog(meas))], dim=-1)

    # the four model components -------------------------------------------
    def encode(self, obs, meas, h, generator=None, soft=False):
        """Posterior logits ``(..., G, N)`` and a straight-through latent sample."""
        return self._posterior(self.embed(obs, meas), h, generator, soft)

    def _posterior(self, embed, h, generator=None, soft=False):
        logits = self.posterior(torch.cat([h, embed], dim=-1))
        logits = logits.reshape(*logits.shape[:-1], self.cfg.groups, self.cfg.classes)
        probs = unimix_probs(logits, self.cfg.unimix)
        return logits, self._draw(probs, generator, soft)

    def sequence_step(self, h, z, action_onehot):
        x = self.seq_in(torch.cat([z.flatten(-2), action_onehot], dim=-1))
        return self.gru(x, h)

    def prior_probs(self, h):
        return self._probs(self.prior(h))

    def predict_heads(self, state: LatentState):
        """Reward-bucket logits, termination probability and BEV probabilities."""
        feat = state.feat()
        reward_logits = self.reward_head(feat)
        term = torch.sigmoid(self.term_head(feat).squeeze(-1))
        recon = torch.sigmoid(self.decoder(feat))
        return reward_logits, term, recon

    def decode_reward(self, reward_logits):
        return bucket_mean(reward_logits, self.centers)

    # sequences -------------------------------------------------------------
    def observe(self, obs, meas, prev_action, first, generator=None, soft=False, state=None):
        """Filter a batch of sequences; every array is ``(B, L, ...)``."""
        B, L = prev_action.shape
        state = state or self.initial(B)
        init = self.initial(B)
        act = F.one_hot(prev_action, self.cfg.num_actions).to(init.h.dtype)
        embeds = self.embed(obs.flatten(0, 1), meas.flatten(0, 1)).reshape(B, L, -1)
        hs, zs, posts, priors = [], [], [], []
        h, z = state.h, state.z
        for t in range(L):
            reset = first[:, t].to(h.dtype).unsqueeze(-1)
            h = reset * init.h + (1.0 - reset) * h
            z = reset.unsqueeze(-1) * init.z + (1.0 - reset.unsqueeze(-1)) * z
            a = (1.0 - reset) * act[:, t]
            h = self.sequence_step(h, z, a)
            prior = self.prior_probs(h)
            logits, z = self._posterior(embeds[:, t], h, generator, soft)
            posts.append(unimix_probs(logits, self.cfg.unimix))
            priors.append(prior)
            hs.append(h)
            zs.append(z)
        post_state = LatentState(torch.stack(hs, 1), torch.stack(zs, 1))
        return post_state, torch.stack(posts, 1), torch.stack(priors, 1)

    def loss(self, batch, generator=None, soft=False, free_bits=None) -> LossReport:
        """Prediction, dynamics and representation losses on a sequence batch."""
        cfg = self.cfg
        dtype = self.centers.dtype
        for name in ("obs", "meas", "reward", "done"):
            check_finite(f"batch.{name}", getattr(batch, name))
        obs = batch.obs.to(dtype)
        meas = batch.meas.to(dtype)
        mask = batch.mask.to(dtype)
        n_valid = mask.sum().clamp_min(1.0)
        post, q, p = self.observe(obs, meas, batch.prev_action, batch.first, generator, soft)

        feat = post.feat()
        bev, bev_mean = self._reconstruction(feat, obs, batch.mask, generator)
        meas_loss = 0.5 * (self.meas_decoder(feat) - symlog(meas)).pow(2).sum(-1)
        reward = twohot_loss(self.reward_head(feat), batch.reward.to(dtype), self.centers)
        done = batch.done.to(dtype)
        with torch.no_grad():
            n_done = (done * mask).sum()
            n_live = n_valid - n_done
            w_done = (n_valid / (2.0 * n_done)).clamp(max=cfg.max_done_weight) if n_done > 0 else dtype_one(dtype)
            w_live = (n_valid / (2.0 * n_live)).clamp(max=cfg.max_done_weight) if n_live > 0 else dtype_one(dtype)
            weight = done * w_done + (1.0 - done) * w_live
        term_logit = self.term_head(feat).squeeze(-1)
        term = weight * F.binary_cross_entropy_with_logits(term_logit, done, reduction="none")

        fb = cfg.free_bits if free_bits is None else free_bits
        kl_dyn = categorical_kl(q.detach(), p)
        kl_rep = categorical_kl(q, p.detach())
        l_dyn = (torch.clamp(kl_dyn, min=fb) * mask).sum() / n_valid
        l_rep = (torch.clamp(kl_rep, min=fb) * mask).sum() / n_valid
        per_step = meas_loss + reward + term
        l_pred = (per_step * mask).sum() / n_valid + bev_mean
        total = cfg.beta_pred * l_pred + cfg.beta_dyn * l_dyn + cfg.beta_rep * l_rep
        check_finite("world-model loss", total)
        parts = {
            "bev": float(bev_mean.detach()),
            "meas": float((meas_loss.detach() * mask).sum() / n_valid),
            "reward": float((reward.detach() * mask).sum() / n_valid),
            "term": float((term.detach() * mask).sum() / n_valid),
            "kl": float((kl_dyn.detach() * mask).sum() / n_valid),
        }
        return LossReport(l_pred, l_dyn, l_rep, total, parts, post, p, q)

    def _reconstruction(self, feat, obs, mask, generator):
        """Per-frame summed BCE of the decoded BEV and its mean over valid frames.

        With ``decode_fraction < 1`` only a random subset of the valid frames
        is decoded, which keeps the mean unbiased at a fraction of the cost.
        """
        valid = mask.reshape(-1).nonzero().squeeze(-1)
        frac = self.cfg.decode_fraction
        if frac < 1.0 and len(valid) > 1:
            k = max(1, int(round(frac * len(valid))))
            valid = valid[torch.randperm(len(valid), generator=generator)[:k]]
        f = feat.reshape(-1, feat.shape[-1])[valid]
        x = obs.reshape(-1, *obs.shape[-3:])[valid]
        bev = F.binary_cross_entropy_with_logits(self.decoder(f), x, reduction="none").sum((-3, -2, -1))
        mean = bev.mean() if len(valid) else feat.sum() * 0.0
        return bev, mean

    def imagine(self, start: LatentState, policy, horizon: int, generator=None, soft=False) -> ImaginedTrajectory:
        """Roll the prior forward under ``policy`` for ``horizon`` steps.

        ``policy(state) -> (actions, log_probs, entropies, onehot)``. Nothing
        here touches observations.
        """
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        state = start
        hs, zs = [state.h], [state.z]
        acts, logps, ents, rewards, conts = [], [], [], [], []
        for _ in range(horizon):
            a, logp, ent, onehot = policy(state)
            h = self.sequence_step(state.h, state.z, onehot)
            z = self._draw(self.prior_probs(h), generator, soft)
            state = LatentState(h, z)
            reward_logits, term, _ = self._heads_no_decoder(state)
            hs.append(h)
            zs.append(z)
            acts.append(a)
            logps.append(logp)
            ents.append(ent)
            rewards.append(self.decode_reward(reward_logits))
            conts.append(1.0 - term)
        return ImaginedTrajectory(
            LatentState(torch.stack(hs), torch.stack(zs)),
            torch.stack(acts),
            torch.stack(logps),
            torch.stack(ents),
            torch.stack(rewards),
            torch.stack(conts),
        )

    def _heads_no_decoder(self, state):
        feat = state.feat()
        return self.reward_head(feat), torch.sigmoid(self.term_head(feat).squeeze(-1)), None

    @torch.no_grad()
    def predict_next(self, state: LatentState, action: torch.Tensor, mode: bool = True, generator=None):
        """One prior step under ``action``: the next state and its decoded heads."""
        onehot = F.one_hot(action, self.cfg.num_actions).to(state.h.dtype)
        h = self.sequence_step(state.h, state.z, onehot)
        probs = self.prior_probs(h)
        if mode:
            z = F.one_hot(probs.argmax(-1), self.cfg.classes).to(h.dtype)
        else:
            z = sample_straight_through(probs, generator)
        nxt = LatentState(h, z)
        reward_logits, term, recon = self.predict_heads(nxt)
        return nxt, self.decode_reward(reward_logits), term, recon


def dtype_one(dtype):
    return torch.ones((), dtype=dtype)

"""Differentiable primitives shared by the world model and the planner.

Autograd comes from torch; this module adds the distribution-level
operations (symlog squashing, two-hot buckets, categorical latents) and a
finiteness guard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import NonFiniteError, UsageError, ValidationError

KL_FLOOR = 1e-8


def symlog(x: torch.Tensor) -> torch.Tensor:
    return torch.sign(x) * torch.log1p(torch.abs(x))


def symexp(x: torch.Tensor) -> torch.Tensor:
    return torch.sign(x) * torch.expm1(torch.abs(x))


@dataclass(frozen=True)
class BucketSpec:
    """Equal-width bucket centres in symlog space."""

    count: int = 63
    low: float = -20.0
    high: float = 20.0

    def __post_init__(self):
        if self.count < 2 or not self.high > self.low:
            raise ValidationError("buckets need count >= 2 and high > low")

    def centers(self, dtype=torch.float32) -> torch.Tensor:
        # low + span * i / (n - 1) puts the middle centre of a symmetric range exactly on 0
        i = torch.arange(self.count, dtype=torch.float64)
        return (self.low + (self.high - self.low) * i / (self.count - 1)).to(dtype)


def twohot(value: torch.Tensor, centers: torch.Tensor) -> torch.Tensor:
    """Weights over ``centers`` (last axis) whose expectation is ``clamp(value)``."""
    value = value.to(centers.dtype)
    v = value.clamp(centers[0], centers[-1])
    k = len(centers)
    idx = (torch.searchsorted(centers, v.contiguous(), right=True) - 1).clamp(0, k - 2)
    lo = centers[idx]
    hi = centers[idx + 1]
    w_hi = ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    out = torch.zeros(*v.shape, k, dtype=centers.dtype)
    out.scatter_(-1, idx.unsqueeze(-1), (1.0 - w_hi).unsqueeze(-1))
    out.scatter_add_(-1, (idx + 1).unsqueeze(-1), w_hi.unsqueeze(-1))
    return out


def twohot_loss(logits: torch.Tensor, target: torch.Tensor, centers: torch.Tensor) -> torch.Tensor:
    """Cross-entropy against the frozen two-hot encoding of ``symlog(target)``."""
    with torch.no_grad():
        y = twohot(symlog(target), centers).to(logits.dtype)
    return -(y * F.log_softmax(logits, dim=-1)).sum(-1)


def bucket_mean(logits: torch.Tensor, centers: torch.Tensor) -> torch.Tensor:
    """Decoded scalar: ``symexp`` of the softmax-weighted bucket centre."""
    return symexp((F.softmax(logits, dim=-1) * centers.to(logits.dtype)).sum(-1))


def unimix_probs(logits: torch.Tensor, unimix: float = 0.01) -> torch.Tensor:
    probs = F.softmax(logits, dim=-1)
    if unimix > 0:
        probs = (1.0 - unimix) * probs + unimix / logits.shape[-1]
    return probs


def categorical_kl(q: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """KL[q || p] for probabilities of shape ``(..., G, N)``, summed over groups."""
    if q.shape != p.shape:
        raise UsageError(f"categorical_kl shape mismatch {tuple(q.shape)} vs {tuple(p.shape)}")
    qf = q.clamp_min(KL_FLOOR)
    pf = p.clamp_min(KL_FLOOR)
    return (qf * (qf.log() - pf.log())).sum(dim=(-2, -1))


def categorical_entropy(probs: torch.Tensor) -> torch.Tensor:
    pf = probs.clamp_min(KL_FLOOR)
    return -(pf * pf.log()).sum(-1)


def sample_straight_through(probs: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """One-hot draws whose gradient is that of ``probs``.

    ``probs`` has shape ``(..., N)``; the forward value is exactly one-hot.
    """
    flat = probs.detach().reshape(-1, probs.shape[-1])
    idx = torch.multinomial(flat, 1, generator=generator).reshape(probs.shape[:-1])
    hard = F.one_hot(idx, probs.shape[-1]).to(probs.dtype)
    return hard + probs - probs.detach()


def check_finite(name: str, value):
    """Raise :class:`NonFiniteError` naming ``name`` when ``value`` has NaN/Inf."""
    if isinstance(value, torch.Tensor):
        ok = bool(torch.isfinite(value).all())
    else:
        ok = bool(np.all(np.isfinite(np.asarray(value))))
    if not ok:
        raise NonFiniteError(name)
    return value


def grad(loss: torch.Tensor, params) -> list[torch.Tensor]:
    """Reverse-mode gradients of a scalar loss; unused parameters get zeros."""
    if loss.numel() != 1:
        raise UsageError(f"grad() needs a scalar loss, got shape {tuple(loss.shape)}")
    params = list(params)
    grads = torch.autograd.grad(loss.reshape(()), params, allow_unused=True, retain_graph=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

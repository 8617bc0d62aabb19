"""Network building blocks: gated recurrent cell, MLPs and the BEV conv stacks."""

from __future__ import annotations

import math

import torch
from torch import nn


class GRUCell(nn.Module):
    """Gated recurrent update ``h' = (1 - u) * h + u * n``.

    ``u`` is the update gate, so ``u = 0`` keeps the previous state and the
    candidate ``n`` is a tanh, which keeps ``|h'| <= 1`` whenever ``|h| <= 1``.
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.hidden_size = hidden_size
        self.inp = nn.Linear(input_size, 3 * hidden_size)
        self.rec = nn.Linear(hidden_size, 3 * hidden_size)

    def gates(self, x, h):
        xr, xu, xn = self.inp(x).chunk(3, dim=-1)
        hr, hu, hn = self.rec(h).chunk(3, dim=-1)
        reset = torch.sigmoid(xr + hr)
        update = torch.sigmoid(xu + hu)
        cand = torch.tanh(xn + reset * hn)
        return reset, update, cand

    def forward(self, x, h):
        _, update, cand = self.gates(x, h)
        return (1.0 - update) * h + update * cand


class MLP(nn.Module):
    """Dense layers with layer norm and SiLU, then a linear output."""

    def __init__(self, in_size: int, out_size: int, hidden: int, layers: int):
        super().__init__()
        mods = []
        size = in_size
        for _ in range(layers):
            mods += [nn.Linear(size, hidden), nn.LayerNorm(hidden), nn.SiLU()]
            size = hidden
        self.body = nn.Sequential(*mods)
        self.out = nn.Linear(size, out_size)

    def forward(self, x):
        return self.out(self.body(x))


def conv_stages(size: int) -> int:
    """Stride-2 stages taking a ``size`` raster down to 4x4."""
    stages = int(round(math.log2(size / 4)))
    if stages < 1 or 4 * 2**stages != size:
        raise ValueError(f"BEV size {size} must be 4 * 2**k with k >= 1")
    return stages


class ConvEncoder(nn.Module):
    """4x4 stride-2 convolutions from ``size`` down to a 4x4 feature map."""

    def __init__(self, channels: int, size: int, depth: int):
        super().__init__()
        mods = []
        c = channels
        for i in range(conv_stages(size)):
            out = depth * 2**i
            mods += [nn.Conv2d(c, out, 4, stride=2, padding=1), nn.GroupNorm(1, out), nn.SiLU()]
            c = out
        self.net = nn.Sequential(*mods)
        self.out_size = c * 16

    def forward(self, x):
        lead = x.shape[:-3]
        y = self.net(x.reshape(-1, *x.shape[-3:]))
        return y.reshape(*lead, -1)


class ConvDecoder(nn.Module):
    """Mirror of :class:`ConvEncoder`; emits per-pixel logits."""

    def __init__(self, in_size: int, channels: int, size: int, depth: int):
        super().__init__()
        stages = conv_stages(size)
        self.top = depth * 2 ** (stages - 1)
        self.proj = nn.Linear(in_size, self.top * 16)
        mods = []
        c = self.top
        for i in reversed(range(stages)):
            last = i == 0
            out = channels if last else depth * 2 ** (i - 1)
            mods.append(nn.ConvTranspose2d(c, out, 4, stride=2, padding=1))
            if not last:
                mods += [nn.GroupNorm(1, out), nn.SiLU()]
            c = out
        self.net = nn.Sequential(*mods)

    def forward(self, feat):
        lead = feat.shape[:-1]
        x = self.proj(feat).reshape(-1, self.top, 4, 4)
        y = self.net(x)
        return y.reshape(*lead, *y.shape[1:])

"""Central finite-difference checks of every primitive and composite loss.

Each case builds a scalar function of a few float64 tensors. The analytic
gradient from autograd is compared with ``(f(x + eps) - f(x - eps)) / 2 eps``
coordinate by coordinate; the reported error is
``|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, 1e-8)`` with
vector norms. Large tensors are probed on a seeded random subset of coordinates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import layers, ops

EPS = 1e-3
TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    rel_error: float
    probes: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error < TOLERANCE)


def numeric_vs_analytic(fn, tensors, rng, max_probes: int = 40, eps: float = EPS, reference=None):
    """Relative error between autograd and central differences over probed coordinates.

    ``reference``, when given, is differenced instead of ``fn``. Losses with
    stop-gradients need it: their reference holds the frozen operand at its
    unperturbed value, which is what the stop-gradient promises.
    """
    for t in tensors:
        t.requires_grad_(True)
    loss = fn()
    fn = reference or fn
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    analytic, numeric = [], []
    with torch.no_grad():
        for t, g in zip(tensors, grads):
            g = torch.zeros_like(t) if g is None else g
            flat = t.view(-1)
            n = flat.numel()
            idx = np.arange(n) if n <= max_probes else np.sort(rng.choice(n, max_probes, replace=False))
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + eps
                up = fn().item()
                flat[i] = orig - eps
                down = fn().item()
                flat[i] = orig
                numeric.append((up - down) / (2 * eps))
                analytic.append(g.view(-1)[i].item())
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom), len(a)


def _t(rng, *shape, scale=1.0):
    return torch.from_numpy(rng.standard_normal(shape) * scale)


def _module_params(module):
    return [p for p in module.parameters()]


def primitive_cases(rng):
    """``(name, fn, tensors)`` cases for the building blocks."""
    torch.manual_seed(int(rng.integers(2**31)))
    cases = []
    dt = torch.float64

    x = _t(rng, 3, 5)
    lin = torch.nn.Linear(5, 4).to(dt)
    w = _t(rng, 3, 4)
    cases.append(("dense", lambda: (lin(x) * w).sum(), [x] + _module_params(lin)))

    img = _t(rng, 2, 3, 8, 8)
    conv = torch.nn.Conv2d(3, 4, 4, stride=2, padding=1).to(dt)
    wc = _t(rng, 2, 4, 4, 4)
    cases.append(("conv2d-stride2", lambda: (conv(img) * wc).sum(), [img] + _module_params(conv)))

    fm = _t(rng, 2, 4, 4, 4)
    deconv = torch.nn.ConvTranspose2d(4, 3, 4, stride=2, padding=1).to(dt)
    wd = _t(rng, 2, 3, 8, 8)
    cases.append(("conv-transpose-stride2", lambda: (deconv(fm) * wd).sum(), [fm] + _module_params(deconv)))

    xn = _t(rng, 3, 6)
    ln = torch.nn.LayerNorm(6).to(dt)
    with torch.no_grad():
        ln.weight.add_(_t(rng, 6, scale=0.3))
        ln.bias.add_(_t(rng, 6, scale=0.3))
    wn = _t(rng, 3, 6)
    cases.append(("layer-norm", lambda: (ln(xn) * wn).sum(), [xn] + _module_params(ln)))

    xg = _t(rng, 2, 4, 3, 3)
    gn = torch.nn.GroupNorm(1, 4).to(dt)
    wg = _t(rng, 2, 4, 3, 3)
    cases.append(("group-norm", lambda: (gn(xg) * wg).sum(), [xg] + _module_params(gn)))

    xs = _t(rng, 10)
    ws = _t(rng, 10)
    cases.append(("silu", lambda: (F.silu(xs) * ws).sum(), [xs]))
    xsg = _t(rng, 10)
    cases.append(("sigmoid", lambda: (torch.sigmoid(xsg) * ws).sum(), [xsg]))
    xt = _t(rng, 10)
    cases.append(("tanh", lambda: (torch.tanh(xt) * ws).sum(), [xt]))

    gru = layers.GRUCell(5, 6).to(dt)
    gx = _t(rng, 3, 5)
    gh = torch.tanh(_t(rng, 3, 6))
    wgru = _t(rng, 3, 6)
    cases.append(("gru-cell", lambda: (gru(gx, gh) * wgru).sum(), [gx, gh] + _module_params(gru)))

    # keep symlog inputs away from its kink at 0
    xl = torch.from_numpy(np.sign(rng.standard_normal(12)) * rng.uniform(0.1, 20.0, 12))
    wl = _t(rng, 12)
    cases.append(("symlog", lambda: (ops.symlog(xl) * wl).sum(), [xl]))
    xe = torch.from_numpy(np.sign(rng.standard_normal(12)) * rng.uniform(0.1, 3.0, 12))
    cases.append(("symexp", lambda: (ops.symexp(xe) * wl).sum(), [xe]))

    centers = ops.BucketSpec(count=15, low=-5.0, high=5.0).centers(dt)
    logits = _t(rng, 4, 15)
    targets = torch.from_numpy(rng.uniform(-30.0, 30.0, 4))
    cases.append(("twohot-cross-entropy", lambda: ops.twohot_loss(logits, targets, centers).sum(), [logits]))
    lb = _t(rng, 4, 15)
    wb = _t(rng, 4)
    cases.append(("bucket-mean", lambda: (ops.bucket_mean(lb, centers) * wb).sum(), [lb]))

    lu = _t(rng, 2, 3, 5)
    wu = _t(rng, 2, 3, 5)
    cases.append(("unimix-softmax", lambda: (ops.unimix_probs(lu, 0.01) * wu).sum(), [lu]))

    lq = _t(rng, 2, 3, 5)
    lp = _t(rng, 2, 3, 5)
    cases.append(
        (
            "categorical-kl",
            lambda: ops.categorical_kl(ops.unimix_probs(lq), ops.unimix_probs(lp)).sum(),
            [lq, lp],
        )
    )
    le = _t(rng, 3, 5)
    cases.append(("categorical-entropy", lambda: ops.categorical_entropy(F.softmax(le, -1)).sum(), [le]))

    # straight-through: the backward pass must equal the softmax path's gradient
    ls = _t(rng, 3, 4, 6)
    wst = _t(rng, 3, 4, 6)
    gen_seed = int(rng.integers(2**31))

    def st_surrogate():
        probs = F.softmax(ls, -1)
        g = torch.Generator().manual_seed(gen_seed)
        hard = ops.sample_straight_through(probs, g)
        # value of the soft path, gradient of the straight-through sample
        return ((hard - hard.detach() + probs.detach()) * wst).sum()

    cases.append(("straight-through-sample", st_surrogate, [ls]))

    lbce = _t(rng, 20)
    ybce = torch.from_numpy((rng.random(20) < 0.3).astype(np.float64))
    cases.append(
        ("binary-cross-entropy", lambda: F.binary_cross_entropy_with_logits(lbce, ybce, reduction="sum"), [lbce])
    )
    return cases


def composite_cases(rng):
    """World-model, critic and actor objectives on tiny float64 models."""
    from ..bev import BevConfig
    from ..planner import Planner, PlannerConfig, actor_loss, critic_loss, lambda_returns
    from ..replay import SequenceBatch
    from ..world_model import WorldModel, WorldModelConfig

    torch.manual_seed(int(rng.integers(2**31)))
    dt = torch.float64
    cases = []
    bev = BevConfig(size=8, meters_per_pixel=4.0, offsets=(-2, -1))
    buckets = ops.BucketSpec(count=15, low=-5.0, high=5.0)
    cfg = WorldModelConfig(
        bev=bev, groups=3, classes=4, deter=8, hidden=8, mlp_layers=1, cnn_depth=2, buckets=buckets
    )
    wm = WorldModel(cfg).to(dt)
    with torch.no_grad():  # the reward head starts at zero; perturb it so its gradient path is exercised
        wm.reward_head.out.weight.normal_(0.0, 0.1)
    B, L = 2, 3
    obs = torch.from_numpy((rng.random((B, L, bev.channels, 8, 8)) < 0.3).astype(np.float64))
    batch = SequenceBatch(
        obs=obs,
        meas=_t(rng, B, L, bev.measurement_size),
        prev_action=torch.from_numpy(rng.integers(0, cfg.num_actions, (B, L))),
        reward=torch.from_numpy(rng.uniform(-2.0, 2.0, (B, L))),
        done=torch.tensor([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]], dtype=dt),
        first=torch.tensor([[True, False, False], [False, True, False]]),
        mask=torch.tensor([[True, True, True], [False, True, True]]),
        anchored=np.zeros(B, bool),
        index=[],
    )
    params = list(wm.parameters())
    with torch.no_grad():
        _, q0, p0 = wm.observe(obs, batch.meas, batch.prev_action, batch.first, soft=True)
    mask = batch.mask.to(dt)

    def wm_part(which):
        def run():
            rep = wm.loss(batch, soft=True, free_bits=0.0)
            return {"pred": rep.l_pred, "dyn": rep.l_dyn, "rep": rep.l_rep, "total": rep.total}[which]

        return run

    def wm_reference(which):
        # the frozen side of each KL term stays at its value for the unperturbed parameters
        def run():
            rep = wm.loss(batch, soft=True, free_bits=0.0)
            _, q, p = wm.observe(obs, batch.meas, batch.prev_action, batch.first, soft=True)
            dyn = (ops.categorical_kl(q0, p) * mask).sum() / mask.sum()
            repr_ = (ops.categorical_kl(q, p0) * mask).sum() / mask.sum()
            if which == "dyn":
                return dyn
            if which == "rep":
                return repr_
            return cfg.beta_pred * rep.l_pred + cfg.beta_dyn * dyn + cfg.beta_rep * repr_

        return run

    cases.append(("world-model-pred", wm_part("pred"), params))
    for which in ("dyn", "rep", "total"):
        cases.append((f"world-model-{which}", wm_part(which), params, wm_reference(which)))

    pcfg = PlannerConfig(hidden=8, layers=1, buckets=buckets)
    planner = Planner(5, pcfg).to(dt)
    with torch.no_grad():
        planner.critic.out.weight.normal_(0.0, 0.1)
    feats = _t(rng, 4, 3, 5)
    rewards = torch.from_numpy(rng.uniform(-1, 1, (4, 3)))
    conts = torch.from_numpy(rng.uniform(0.5, 1, (4, 3)))
    values = _t(rng, 5, 3)
    returns = lambda_returns(rewards, values[:-1], conts, 0.985, 0.95, values[-1])
    weights = torch.cumprod(torch.cat([torch.ones_like(conts[:1]), conts[:-1]]), 0)
    centers = planner.centers.to(dt)
    cases.append(
        (
            "critic-loss",
            lambda: critic_loss(planner.critic, feats, returns, centers, weights),
            list(planner.critic.parameters()),
        )
    )
    actions = torch.from_numpy(rng.integers(0, planner.num_actions, (4, 3)))
    baseline = _t(rng, 4, 3)

    def actor():
        loss, _ = actor_loss(planner.actor(feats), actions, returns, baseline, 2.5, 3e-4, weights)
        return loss

    cases.append(("actor-loss", actor, list(planner.actor.parameters())))

    rw = _t(rng, 4, 3)
    vw = _t(rng, 4, 3)
    cw = torch.from_numpy(rng.uniform(0, 1, (4, 3)))
    boot = _t(rng, 3)
    wl = _t(rng, 4, 3)
    cases.append(
        ("lambda-returns", lambda: (lambda_returns(rw, vw, cw, 0.9, 0.8, boot) * wl).sum(), [rw, vw, cw, boot])
    )
    return cases


def run_suite(seed: int = 0, max_probes: int = 40) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    with torch.random.fork_rng(devices=[]):
        cases = primitive_cases(rng) + composite_cases(rng)
        for name, fn, tensors, *ref in cases:
            t0 = time.perf_counter()
            err, probes = numeric_vs_analytic(fn, tensors, rng, max_probes, reference=ref[0] if ref else None)
            results.append(CheckResult(name, err, probes, time.perf_counter() - t0))
    return results


def format_report(results) -> str:
    lines = [f"{'op':<26} {'rel-err':>12} {'probes':>7}  status"]
    for r in results:
        lines.append(f"{r.name:<26} {r.rel_error:12.3e} {r.probes:7d}  {'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines)

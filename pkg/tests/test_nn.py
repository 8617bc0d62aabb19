import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from latentdrive.errors import NonFiniteError, UsageError, ValidationError
from latentdrive.nn import gradcheck
from latentdrive.nn.checkpoint import checksum, load_checkpoint, save_checkpoint
from latentdrive.nn.layers import GRUCell
from latentdrive.nn.ops import (
    BucketSpec,
    bucket_mean,
    categorical_entropy,
    categorical_kl,
    check_finite,
    grad,
    sample_straight_through,
    symexp,
    symlog,
    twohot,
    twohot_loss,
    unimix_probs,
)

CENTERS = BucketSpec().centers(torch.float64)
CHI2_15_999 = 37.697  # 99.9% quantile of chi-square with 15 degrees of freedom


# grad ---------------------------------------------------------------------------
def test_square_gradient():
    w = torch.tensor(3.0, requires_grad=True)
    (g,) = grad(w * w, [w])
    assert g.item() == 6.0


def test_detached_branch_contributes_nothing():
    w = torch.tensor(2.0, requires_grad=True)
    (g,) = grad(w * 3.0 + w.detach() ** 2, [w])
    assert g.item() == 3.0


def test_non_scalar_loss_is_a_usage_error():
    w = torch.ones(3, requires_grad=True)
    with pytest.raises(UsageError):
        grad(w * 2, [w])


def test_unused_parameter_gets_zero_gradient():
    a = torch.tensor(1.0, requires_grad=True)
    b = torch.tensor(1.0, requires_grad=True)
    ga, gb = grad(a * 5, [a, b])
    assert ga.item() == 5.0 and gb.item() == 0.0


# symlog -------------------------------------------------------------------------
def test_symlog_closed_forms():
    assert symlog(torch.tensor(0.0)).item() == 0.0
    assert symlog(torch.tensor(math.e - 1, dtype=torch.float64)).item() == pytest.approx(1.0, abs=1e-15)
    assert symlog(torch.tensor(-(math.e - 1), dtype=torch.float64)).item() == pytest.approx(-1.0, abs=1e-15)


@given(st.floats(-1e4, 1e4))
def test_symexp_inverts_symlog(x):
    y = symexp(symlog(torch.tensor(x, dtype=torch.float64))).item()
    assert y == pytest.approx(x, rel=1e-6, abs=1e-12)


# twohot -------------------------------------------------------------------------
def test_twohot_on_a_center_is_one_hot():
    w = twohot(CENTERS[10], CENTERS)
    assert w[10] == 1.0 and w.sum() == 1.0 and (w > 0).sum() == 1


def test_twohot_midpoint_splits_evenly():
    w = twohot((CENTERS[20] + CENTERS[21]) / 2, CENTERS)
    assert w[20].item() == pytest.approx(0.5) and w[21].item() == pytest.approx(0.5)


@pytest.mark.parametrize("v,idx", [(1e3, -1), (-1e3, 0)])
def test_twohot_clamps_out_of_range(v, idx):
    w = twohot(torch.tensor(v, dtype=torch.float64), CENTERS)
    assert w[idx] == 1.0 and w.sum() == 1.0


@given(st.floats(-40, 40))
def test_twohot_properties(v):
    w = twohot(torch.tensor(v, dtype=torch.float64), CENTERS)
    assert (w >= 0).all()
    assert (w > 0).sum() <= 2
    assert w.sum().item() == pytest.approx(1.0, abs=1e-12)
    assert (w * CENTERS).sum().item() == pytest.approx(min(max(v, -20.0), 20.0), abs=1e-9)


def test_bucket_spec_validation():
    with pytest.raises(ValidationError):
        BucketSpec(count=1)
    with pytest.raises(ValidationError):
        BucketSpec(low=1.0, high=1.0)
    c = BucketSpec().centers()
    assert len(c) == 63 and bool((c[1:] > c[:-1]).all())


def test_bucket_mean_of_peaked_logits():
    logits = torch.full((63,), -1e4, dtype=torch.float64)
    logits[31] = 0.0  # centre 0
    assert bucket_mean(logits, CENTERS).item() == 0.0


def test_twohot_loss_floor_is_target_entropy():
    target = torch.tensor(2.3, dtype=torch.float64)
    y = twohot(symlog(target), CENTERS)
    logits = torch.log(y.clamp_min(1e-300))
    loss = twohot_loss(logits, target, CENTERS).item()
    ent = -(y[y > 0] * y[y > 0].log()).sum().item()
    assert loss == pytest.approx(ent, abs=1e-9)
    assert ent <= math.log(2) + 1e-12


# categorical latents -----------------------------------------------------------------
def test_unimix_rows_sum_to_one():
    probs = unimix_probs(torch.randn(5, 16, 16) * 10)
    assert torch.allclose(probs.sum(-1), torch.ones(5, 16), atol=1e-5)
    assert probs.min() >= 0.01 / 16 - 1e-9


def test_kl_closed_forms():
    q = torch.softmax(torch.randn(3, 4, 8, dtype=torch.float64), -1)
    assert torch.allclose(categorical_kl(q, q), torch.zeros(3, dtype=torch.float64))
    onehot = torch.zeros(1, 1, 8, dtype=torch.float64)
    onehot[..., 3] = 1.0
    uniform = torch.full_like(onehot, 1 / 8)
    # the seven empty classes are floored at 1e-8 rather than contributing exactly 0
    floored = 7 * 1e-8 * (math.log(1e-8) - math.log(1 / 8))
    assert categorical_kl(onehot, uniform).item() == pytest.approx(math.log(8) + floored, abs=1e-12)
    assert categorical_kl(onehot, uniform).item() == pytest.approx(math.log(8), abs=2e-6)


def test_kl_matches_high_precision_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(size=(2, 4, 6)) * 3
        q = np.exp(a) / np.exp(a).sum(-1, keepdims=True)
        p = np.exp(b) / np.exp(b).sum(-1, keepdims=True)
        oracle = math.fsum(
            float(qi) * (math.log(max(qi, 1e-8)) - math.log(max(pi, 1e-8)))
            for qi, pi in zip(np.maximum(q, 1e-8).ravel(), np.maximum(p, 1e-8).ravel())
        )
        got = categorical_kl(torch.from_numpy(q), torch.from_numpy(p)).item()
        assert got == pytest.approx(oracle, rel=1e-10, abs=1e-12)


def test_kl_shape_mismatch():
    with pytest.raises(UsageError):
        categorical_kl(torch.ones(2, 3), torch.ones(3, 2))


def test_entropy_bounds():
    probs = torch.softmax(torch.randn(100, 30), -1)
    h = categorical_entropy(probs)
    assert (h >= 0).all() and (h <= math.log(30) + 1e-5).all()


def test_straight_through_with_dominant_logit():
    logits = torch.zeros(4, 16)
    logits[:, 7] = 1e6
    z = sample_straight_through(torch.softmax(logits, -1))
    assert (z.argmax(-1) == 7).all() and torch.equal(z.sum(-1), torch.ones(4))


def test_straight_through_uniform_frequencies_chi_square():
    n, k = 100_000, 16
    g = torch.Generator().manual_seed(0)
    z = sample_straight_through(torch.full((n, k), 1.0 / k), g)
    assert torch.equal(z.sum(-1), torch.ones(n))
    counts = z.sum(0).double()
    expected = n / k
    chi2 = ((counts - expected) ** 2 / expected).sum().item()
    assert chi2 < CHI2_15_999
    sigma = math.sqrt(n * (1 / k) * (1 - 1 / k))
    assert (counts - expected).abs().max().item() < 4 * sigma


def test_straight_through_gradient_is_the_soft_gradient():
    logits = torch.randn(3, 5, dtype=torch.float64, requires_grad=True)
    weights = torch.randn(3, 5, dtype=torch.float64)
    probs = torch.softmax(logits, -1)
    (g_st,) = torch.autograd.grad((sample_straight_through(probs) * weights).sum(), [logits])
    (g_soft,) = torch.autograd.grad((torch.softmax(logits, -1) * weights).sum(), [logits])
    assert torch.allclose(g_st, g_soft)


def test_check_finite_names_the_field():
    with pytest.raises(NonFiniteError, match="reward"):
        check_finite("reward", torch.tensor([1.0, float("nan")]))
    assert check_finite("ok", np.ones(3)) is not None


# gru ----------------------------------------------------------------------------------
def test_gru_zero_weights_gives_bias_determined_state():
    cell = GRUCell(3, 4).double()
    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
        cell.inp.bias[8:].fill_(0.5)  # candidate bias
    h = torch.zeros(2, 4, dtype=torch.float64)
    out = cell(torch.randn(2, 3, dtype=torch.float64), h)
    # update gate sigmoid(0) = 0.5 mixes h = 0 with tanh(0.5)
    assert torch.allclose(out, torch.full_like(out, 0.5 * math.tanh(0.5)))


def test_gru_closed_update_gate_keeps_state():
    cell = GRUCell(3, 4).double()
    with torch.no_grad():
        cell.inp.bias[4:8].fill_(-1e4)
    h = torch.rand(2, 4, dtype=torch.float64) * 2 - 1
    assert torch.allclose(cell(torch.randn(2, 3, dtype=torch.float64), h), h)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gru_output_is_bounded(seed):
    torch.manual_seed(seed)
    cell = GRUCell(5, 6)
    with torch.no_grad():
        for p in cell.parameters():
            p.mul_(20.0)
    h = torch.rand(4, 6) * 2 - 1
    assert cell(torch.randn(4, 5) * 50, h).abs().max() <= 1.0


# gradient suite -----------------------------------------------------------------------
def test_primitive_gradients_pass():
    rng = np.random.default_rng(0)
    for name, fn, tensors, *ref in gradcheck.primitive_cases(rng):
        err, probes = gradcheck.numeric_vs_analytic(fn, tensors, rng, max_probes=10, reference=ref[0] if ref else None)
        assert probes > 0
        assert err < gradcheck.TOLERANCE, name


def test_gradcheck_detects_a_wrong_gradient():
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x * x

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return g * 2.1 * x

    x = torch.randn(6, dtype=torch.float64, requires_grad=True)
    err, _ = gradcheck.numeric_vs_analytic(lambda: Bad.apply(x).sum(), [x], np.random.default_rng(0))
    assert err > gradcheck.TOLERANCE


# checkpoint ----------------------------------------------------------------------------
def test_checkpoint_round_trip(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
    path = tmp_path / "m.t2d"
    save_checkpoint(str(path), tensors, {"step": 3})
    data = path.read_bytes()
    assert data[:4] == b"T2D1"
    back, meta = load_checkpoint(str(path))
    assert meta == {"step": 3}
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])
    # payload is raw little-endian float32 at the manifest offsets
    assert data.endswith(np.asarray([1.5], dtype="<f4").tobytes())


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.t2d"
    path.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(ValidationError, match="magic"):
        load_checkpoint(str(path))


def test_checksum_tracks_parameters():
    cell = GRUCell(2, 2)
    before = checksum(cell)
    assert checksum(cell) == before
    with torch.no_grad():
        cell.inp.bias[0] += 1.0
    assert checksum(cell) != before

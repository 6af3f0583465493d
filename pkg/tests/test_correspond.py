import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from lineinbet.correspond import (TransportPlan, aggregate, correlation, cross_attention, mutual_match,
                                  self_attention, sinkhorn_ot)
from lineinbet.model import ModelConfig, ModelParams


def params(c=8, n=2, seed=0):
    return ModelParams.init(ModelConfig(channels=c, n_layers=n, spectral_dim=4), seed).cast(torch.float64)


def dense_attention(fa, fb, p, prefix):
    fa, fb = fa.numpy(), fb.numpy()
    g = {k: v.numpy() for k, v in p.items()}
    q = fa @ g[prefix + ".q.weight"].T + g[prefix + ".q.bias"]
    k = fb @ g[prefix + ".k.weight"].T + g[prefix + ".k.bias"]
    v = fb @ g[prefix + ".v.weight"].T + g[prefix + ".v.bias"]
    out = np.empty_like(fa)
    for i in range(len(fa)):
        s = np.array([q[i] @ k[j] for j in range(len(fb))]) / math.sqrt(fa.shape[1])
        w = np.exp(s - s.max())
        w /= w.sum()
        out[i] = fa[i] + sum(w[j] * v[j] for j in range(len(fb)))
    return out


def test_self_attention_single_vertex():
    p = params()
    f = torch.randn(1, 8, dtype=torch.float64)
    v = f @ p["attn.0.self.v.weight"].T + p["attn.0.self.v.bias"]
    assert torch.allclose(self_attention(f, p, 0), f + v)


def test_self_attention_uniform_when_qk_zero():
    p = dict(params())
    for m in "qk":
        p[f"attn.0.self.{m}.weight"] = torch.zeros(8, 8, dtype=torch.float64)
        p[f"attn.0.self.{m}.bias"] = torch.zeros(8, dtype=torch.float64)
    f = torch.randn(5, 8, dtype=torch.float64)
    v = f @ p["attn.0.self.v.weight"].T + p["attn.0.self.v.bias"]
    assert torch.allclose(self_attention(f, p, 0), f + v.mean(0))


@pytest.mark.parametrize("seed", range(5))
def test_attention_dense_oracle(seed):
    torch.manual_seed(seed)
    p = params(seed=seed)
    fa, fb = torch.randn(5, 8, dtype=torch.float64), torch.randn(3, 8, dtype=torch.float64)
    assert np.allclose(self_attention(fa, p, 1).numpy(), dense_attention(fa, fa, p, "attn.1.self"), atol=1e-6)
    assert np.allclose(cross_attention(fa, fb, p, 0).numpy(), dense_attention(fa, fb, p, "attn.0.cross"), atol=1e-6)


def test_cross_attention_single_target_and_self_coincidence():
    p = dict(params())
    fa, fb = torch.randn(4, 8, dtype=torch.float64), torch.randn(1, 8, dtype=torch.float64)
    v = fb @ p["attn.0.cross.v.weight"].T + p["attn.0.cross.v.bias"]
    assert torch.allclose(cross_attention(fa, fb, p, 0), fa + v)
    for m in "qkv":
        for s in ("weight", "bias"):
            p[f"attn.0.cross.{m}.{s}"] = p[f"attn.0.self.{m}.{s}"]
    assert torch.allclose(cross_attention(fa, fa, p, 0), self_attention(fa, p, 0))


def test_aggregate_identity_swap_and_oracle():
    p = params(n=2)
    f0, f1 = torch.randn(4, 8, dtype=torch.float64), torch.randn(6, 8, dtype=torch.float64)
    a0, a1 = aggregate(f0, f1, p, 0)
    assert a0 is f0 and a1 is f1
    o0, o1 = aggregate(f0, f1, p, 2)
    s1, s0 = aggregate(f1, f0, p, 2)
    assert torch.allclose(o0, s0) and torch.allclose(o1, s1)
    x0, x1 = f0, f1
    for layer in range(2):
        y0 = dense_attention(x0, x0, p, f"attn.{layer}.self")
        y1 = dense_attention(x1, x1, p, f"attn.{layer}.self")
        y0, y1 = torch.as_tensor(y0), torch.as_tensor(y1)
        x0 = torch.as_tensor(dense_attention(y0, y1, p, f"attn.{layer}.cross"))
        x1 = torch.as_tensor(dense_attention(y1, y0, p, f"attn.{layer}.cross"))
    assert np.allclose(o0, x0, atol=1e-6) and np.allclose(o1, x1, atol=1e-6)


def test_correlation_examples():
    assert correlation(torch.tensor([[2.0]]), torch.tensor([[3.0]])).item() == 6.0
    e = torch.eye(4, dtype=torch.float64)
    assert torch.equal(correlation(e[:2], e[2:]), torch.zeros(2, 2, dtype=torch.float64))
    a, b = torch.randn(4, 16, dtype=torch.float64), torch.randn(6, 16, dtype=torch.float64)
    oracle = np.array([[a[i] @ b[j] for j in range(6)] for i in range(4)]) / 4
    assert np.allclose(correlation(a, b).numpy(), oracle, atol=1e-6)


def test_sinkhorn_closed_forms():
    plan = sinkhorn_ot(torch.zeros(1, 1, dtype=torch.float64), 0.0, 100).plan
    assert torch.allclose(plan, torch.full((2, 2), 0.5, dtype=torch.float64))
    # with the dustbin switched off the corner must absorb all dustbin mass, which
    # Sinkhorn reaches only at rate O(1/iters); the core stays exactly uniform throughout
    for iters, tol in ((100, 3e-3), (1000, 3e-4)):
        core = sinkhorn_ot(torch.zeros(2, 2, dtype=torch.float64), -1e4, iters).core
        assert torch.allclose(core, core[0, 0].expand(2, 2), rtol=0, atol=1e-15)
        assert abs(core[0, 0].item() - 0.5) < tol
    with pytest.raises(ValueError):
        sinkhorn_ot(torch.zeros(2, 2), 1.0, 0)


def check_marginals(plan: TransportPlan, tol=1e-6):
    m = plan.plan
    k0, k1 = plan.scores.shape
    assert (m[:-1, :].sum(1) - 1).abs().max() <= tol
    assert (m[:, :-1].sum(0) - 1).abs().max() <= tol
    assert m[-1, :-1].sum() + m[-1, -1] == pytest.approx(k1, abs=1e-6 * max(1, k1))
    # every entry except the dustbin corner, whose mass can reach min(K0, K1), is a probability
    inner = torch.cat([m[:-1].reshape(-1), m[-1, :-1]])
    assert inner.min() >= 0 and inner.max() <= 1 + tol


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 60), st.floats(0.1, 2), st.floats(-3, 3), st.integers(0, 2**31))
def test_sinkhorn_marginals(k0, k1, scale, alpha, seed):
    s = torch.as_tensor(np.random.default_rng(seed).normal(size=(k0, k1)) * scale)
    check_marginals(sinkhorn_ot(s, alpha, 100))


@pytest.mark.parametrize("seed", range(5))
def test_sinkhorn_sharp_scores_need_more_iterations(seed):
    # very peaked scores against a lopsided dustbin converge slowly in the rows;
    # the column step is last, so columns are exact at any iteration count
    s = torch.as_tensor(np.random.default_rng(seed).normal(size=(1, 23)) * 6)
    short = sinkhorn_ot(s, 0.0, 100).plan
    assert (short[:, :-1].sum(0) - 1).abs().max() < 1e-12
    check_marginals(sinkhorn_ot(s, 0.0, 5000))


def mutual_oracle(core, theta):
    """Row argmax and column argmax by explicit loops, lowest index on ties."""
    k0, k1 = core.shape
    row_best = []
    for i in range(k0):
        b = 0
        for j in range(1, k1):
            if core[i, j] > core[i, b]:
                b = j
        row_best.append(b)
    col_best = []
    for j in range(k1):
        b = 0
        for i in range(1, k0):
            if core[i, j] > core[b, j]:
                b = i
        col_best.append(b)
    return [(i, row_best[i]) for i in range(k0) if col_best[row_best[i]] == i and core[i, row_best[i]] > theta]


def test_mutual_match_examples():
    m = mutual_match(np.array([[0.9, 0.05], [0.05, 0.8]]), 0.2)
    assert m.pairs == ((0, 0), (1, 1))
    m = mutual_match(np.array([[0.15, 0.1], [0.1, 0.12]]), 0.2)
    assert m.pairs == () and m.occluded_0.all() and m.occluded_1.all()


@pytest.mark.parametrize("seed", range(20))
def test_mutual_match_oracle_with_ties(seed):
    rng = np.random.default_rng(seed)
    for _ in range(10):
        core = rng.integers(0, 5, size=(rng.integers(1, 8), rng.integers(1, 8))) / 5.0
        theta = rng.choice([0.0, 0.2, 0.5])
        assert list(mutual_match(core, theta).pairs) == mutual_oracle(core, theta)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31), st.floats(0, 0.9), st.floats(0, 0.9))
def test_mutual_match_injective_and_monotone(k0, k1, seed, t1, t2):
    core = np.random.default_rng(seed).random((k0, k1))
    lo, hi = sorted((t1, t2))
    a, b = mutual_match(core, lo), mutual_match(core, hi)
    i, j = a.as_arrays()
    assert len(set(i)) == len(i) and len(set(j)) == len(j)
    assert set(b.pairs) <= set(a.pairs)


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    s = torch.as_tensor(rng.normal(size=(6, 9)) * 3)
    perm = rng.permutation(6)
    a, b = sinkhorn_ot(s, 1.0, 100), sinkhorn_ot(s[perm], 1.0, 100)
    assert torch.allclose(a.plan[:-1][perm], b.plan[:-1], atol=1e-12)
    ma, mb = mutual_match(a, 0.2), mutual_match(b, 0.2)
    assert len(ma.pairs) > 0
    assert sorted((int(perm[i]), j) for i, j in mb.pairs) == list(ma.pairs)

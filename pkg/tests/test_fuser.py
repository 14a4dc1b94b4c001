import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from speech2face.errors import DimMismatch
from speech2face.models.encoder import l2_normalize
from speech2face.models.fuser import EmbeddingFuser, fuse, pad_sequences


def random_fuser(d, seed=0):
    torch.manual_seed(seed)
    return EmbeddingFuser(d, init="random").double()


def straight_line(E, W_a, W_f, b_f):
    """Loop evaluation of the attention, projection and pooling equations."""
    T, d = E.shape
    s = np.zeros((T, T))
    for i in range(T):
        for j in range(T):
            s[i, j] = sum(E[i, p] * W_a[p, q] * E[j, q] for p in range(d) for q in range(d))
    beta = np.zeros((T, T))
    for i in range(T):
        ex = [np.exp(s[i, j]) for j in range(T)]
        beta[i] = [x / sum(ex) for x in ex]
    a = np.array([sum(beta[i, j] * E[j] for j in range(T)) for i in range(T)])
    f_i = np.array([W_f @ np.concatenate([a[i], E[i]]) + b_f for i in range(T)])
    f = f_i.sum(0) / T
    return s, beta, a, f / max(np.linalg.norm(f), 1e-12)


def test_single_window():
    fz = random_fuser(8)
    e = torch.randn(1, 8, dtype=torch.float64)
    _, beta, A = fz.attend(e)
    assert beta.shape == (1, 1, 1) and beta.item() == 1.0
    assert torch.equal(A[0], e)
    expected = l2_normalize(fz.W_f @ torch.cat([e[0], e[0]]) + fz.b_f)
    assert torch.equal(fuse(e, fz), expected)


def test_zero_attention_is_uniform():
    fz = random_fuser(6)
    with torch.no_grad():
        fz.W_a.zero_()
    E = torch.randn(5, 6, dtype=torch.float64)
    _, beta, A = fz.attend(E)
    assert torch.allclose(beta, torch.full((1, 5, 5), 0.2, dtype=torch.float64))
    assert torch.allclose(A[0], E.mean(0).expand(5, 6))


def test_rows_are_probabilities_and_in_hull():
    fz = random_fuser(10)
    E = torch.randn(4, 10, dtype=torch.float64)
    _, beta, A = fz.attend(E)
    assert torch.all(beta >= 0)
    assert torch.allclose(beta.sum(-1), torch.ones(1, 4, dtype=torch.float64), atol=1e-9)
    lo, hi = E.min(0).values, E.max(0).values
    assert torch.all(A[0] >= lo - 1e-12) and torch.all(A[0] <= hi + 1e-12)


def test_identical_inputs():
    fz = random_fuser(8)
    e = torch.randn(8, dtype=torch.float64)
    E = e.expand(4, 8).clone()
    expected = l2_normalize(fz.W_f @ torch.cat([e, e]) + fz.b_f)
    assert torch.allclose(fuse(E, fz), expected, atol=1e-12)


def test_permutation_invariance_all_orders():
    fz = random_fuser(12)
    E = torch.randn(4, 12, dtype=torch.float64)
    ref = fuse(E, fz)
    for perm in itertools.permutations(range(4)):
        assert torch.allclose(fuse(E[list(perm)], fz), ref, atol=1e-6)


def test_matches_straight_line_equations():
    fz = random_fuser(5, seed=3)
    E = torch.randn(3, 5, dtype=torch.float64)
    s, beta, a, f = straight_line(E.numpy(), fz.W_a.detach().numpy(), fz.W_f.detach().numpy(),
                                  fz.b_f.detach().numpy())
    s_t, beta_t, a_t = fz.attend(E)
    np.testing.assert_allclose(s_t[0].detach().numpy(), s, atol=1e-12)
    np.testing.assert_allclose(beta_t[0].detach().numpy(), beta, atol=1e-12)
    np.testing.assert_allclose(a_t[0].detach().numpy(), a, atol=1e-12)
    np.testing.assert_allclose(fuse(E, fz).detach().numpy(), f, atol=1e-12)


def test_parameter_shapes():
    fz = EmbeddingFuser(512)
    assert fz.W_a.shape == (512, 512)
    assert fz.W_f.shape == (512, 1024)
    assert fz.b_f.shape == (512,)


def test_mean_init_is_mean_pooling():
    fz = EmbeddingFuser(16).double()
    E = torch.randn(7, 16, dtype=torch.float64)
    assert torch.allclose(fuse(E, fz), l2_normalize(E.mean(0)), atol=1e-12)


def test_padding_mask_matches_unpadded():
    fz = random_fuser(8, seed=5)
    seqs = [torch.randn(t, 8, dtype=torch.float64) for t in (2, 5, 3)]
    E, mask = pad_sequences(seqs)
    batched = fz(E, mask)
    for k, s in enumerate(seqs):
        assert torch.allclose(batched[k], fuse(s, fz), atol=1e-12)


def test_dim_mismatch():
    fz = EmbeddingFuser(8)
    with pytest.raises(DimMismatch):
        fz(torch.randn(3, 7))
    with pytest.raises(DimMismatch):
        fz(torch.randn(1, 0, 8))


@settings(max_examples=100, deadline=None)
@given(T=st.integers(1, 8), d=st.integers(1, 32), seed=st.integers(0, 10_000))
def test_random_cases_agree_with_equations(T, d, seed):
    fz = random_fuser(d, seed)
    E = torch.as_tensor(np.random.default_rng(seed).normal(size=(T, d)))
    s, beta, a, f = straight_line(E.numpy(), fz.W_a.detach().numpy(), fz.W_f.detach().numpy(),
                                  fz.b_f.detach().numpy())
    s_t, beta_t, a_t = fz.attend(E)
    np.testing.assert_allclose(s_t[0].detach().numpy(), s, atol=1e-9)
    np.testing.assert_allclose(beta_t[0].detach().numpy(), beta, atol=1e-9)
    np.testing.assert_allclose(a_t[0].detach().numpy(), a, atol=1e-9)
    np.testing.assert_allclose(fuse(E, fz).detach().numpy(), f, atol=1e-9)
    assert np.allclose(beta.sum(1), 1.0, atol=1e-9)

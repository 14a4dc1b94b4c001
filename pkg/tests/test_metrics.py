import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from speech2face.errors import DegenerateBatch, EmptyIdentity, IndexMismatch, KTooLarge
from speech2face.evaluation.metrics import (EmbeddingMatrix, build_gt_matrix, recall_at_k, retrieval_ranks,
                                            similarity_metrics, usable_ks, vfs, vggface_score)

from oracles import brute_ranks, brute_recall, brute_similarity, random_instance


def identity_embed(stack):
    return np.asarray(stack, dtype=float)


def random_matrix(n, d, seed):
    return EmbeddingMatrix.from_vectors(np.random.default_rng(seed).normal(size=(n, d)))


# groundtruth matrix ----------------------------------------------------------------

def test_single_image_row_is_its_embedding():
    v = np.array([[3.0, 4.0]])
    U = build_gt_matrix([v], identity_embed)
    np.testing.assert_allclose(U.rows[0], [0.6, 0.8])


def test_mean_then_normalise():
    U = build_gt_matrix([np.array([[1.0, 0.0], [0.0, 1.0]])], identity_embed)
    np.testing.assert_allclose(U.rows[0], [0.70711, 0.70711], atol=1e-5)


def test_image_order_does_not_matter():
    stack = np.random.default_rng(0).normal(size=(5, 6))
    a = build_gt_matrix([stack], identity_embed).rows
    b = build_gt_matrix([stack[[3, 1, 4, 0, 2]]], identity_embed).rows
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_empty_identity():
    with pytest.raises(EmptyIdentity):
        build_gt_matrix({"a": np.ones((1, 2)), "b": np.zeros((0, 2))}, identity_embed)


def test_rows_must_be_unit():
    with pytest.raises(ValueError):
        EmbeddingMatrix(np.array([[1.0, 1.0]]))


# similarity ---------------------------------------------------------------------------

def test_similarity_examples():
    U = random_matrix(5, 4, 0)
    assert similarity_metrics(U, U) == pytest.approx((1.0, 0.0))
    neg = EmbeddingMatrix(-U.rows)
    assert similarity_metrics(U, neg)[0] == pytest.approx(-1.0)


def test_similarity_matches_loop_for_five():
    U, V = random_matrix(5, 7, 1), random_matrix(5, 7, 2)
    ours = similarity_metrics(U, V)
    ref = brute_similarity(U.rows.tolist(), V.rows.tolist())
    assert abs(ours[0] - ref[0]) <= 1e-12 and abs(ours[1] - ref[1]) <= 1e-12


def test_index_mismatch():
    with pytest.raises(IndexMismatch):
        similarity_metrics(random_matrix(5, 4, 0), random_matrix(6, 4, 0))
    U = EmbeddingMatrix(random_matrix(3, 4, 0).rows, ["a", "b", "c"])
    V = EmbeddingMatrix(U.rows, ["a", "c", "b"])
    with pytest.raises(IndexMismatch):
        similarity_metrics(U, V)


# retrieval ----------------------------------------------------------------------------

def test_self_retrieval_is_perfect():
    U = random_matrix(12, 8, 3)
    assert recall_at_k(U, U, (1, 2, 5, 10))[1] == 100.0


def test_random_embeddings_recall_at_ten_is_about_ten_percent():
    values = [recall_at_k(random_matrix(100, 64, s), random_matrix(100, 64, 1000 + s), (10,))[10]
              for s in range(20)]
    assert abs(np.mean(values) - 10.0) <= 3.0


def test_hand_built_ties():
    # rows are axis directions so every cosine is exactly 0 or +-1
    U = EmbeddingMatrix(np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]))
    V = EmbeddingMatrix(np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 0, 1.0], [0, 1.0, 0]]))
    ranks = retrieval_ranks(U, V)
    # query 1 ties with identity 0 and loses the tie; queries 2 and 3 tie at zero with lower indices
    assert ranks.tolist() == [1, 2, 4, 4]
    assert ranks.tolist() == brute_ranks(U.rows.tolist(), V.rows.tolist())
    assert recall_at_k(U, V, (1, 2)) == {1: 25.0, 2: 50.0}


def test_k_too_large():
    U = random_matrix(10, 4, 0)
    with pytest.raises(KTooLarge):
        recall_at_k(U, U, (1, 10))


def test_usable_ks_warns_and_filters():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert usable_ks([1, 2, 5, 10], 8) == [1, 2, 5]
    assert caught


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_metrics_match_brute_force(seed):
    U, V = random_instance(np.random.default_rng(seed))
    Um, Vm = EmbeddingMatrix(U), EmbeddingMatrix(V)
    cos, l1 = similarity_metrics(Um, Vm)
    ref_cos, ref_l1 = brute_similarity(U.tolist(), V.tolist())
    assert abs(cos - ref_cos) <= 1e-12 and abs(l1 - ref_l1) <= 1e-12
    ks = [1, 2, 5, 10]
    assert recall_at_k(Um, Vm, ks) == brute_recall(U.tolist(), V.tolist(), ks)
    rec = [recall_at_k(Um, Vm, ks)[k] for k in ks]
    assert all(b >= a for a, b in zip(rec, rec[1:]))


# VGGFace-style score ----------------------------------------------------------------------

def test_uniform_posteriors_score_one():
    assert vfs(np.full((8, 5), 0.2)) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("C", [2, 20, 100])
def test_balanced_one_hot_scores_class_count(C):
    assert vfs(np.eye(C)) == pytest.approx(C, abs=1e-6)
    assert vfs(np.tile(np.eye(C), (3, 1))) == pytest.approx(C, abs=1e-6)


def test_degenerate_batch():
    with pytest.raises(DegenerateBatch):
        vfs(np.full((1, 4), 0.25))


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(2, 30), c=st.integers(2, 50),
       temperature=st.floats(0.01, 10))
def test_score_within_bounds(seed, n, c, temperature):
    logits = np.random.default_rng(seed).normal(size=(n, c)) / temperature
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    assert 1.0 <= vfs(p) <= c


class FixedPosterior:
    def __init__(self, table):
        self.table = table

    def posteriors(self, x):
        return torch.as_tensor(self.table[: len(x)])


def test_run_statistics():
    clf = FixedPosterior(np.eye(4))
    mean, std, per_run = vggface_score([np.zeros((4, 3, 8, 8))] * 3, clf)
    assert per_run == pytest.approx([4.0] * 3) and mean == pytest.approx(4.0) and std == pytest.approx(0.0)
    with pytest.raises(DegenerateBatch):
        vggface_score([np.zeros((1, 3, 8, 8))], clf)


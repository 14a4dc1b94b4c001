import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from speech2face.audio import MelSegment
from speech2face.errors import ShapeMismatch
from speech2face.models.encoder import (CNNEncoder, InceptionBlock1d, VoiceEncoder, encode, l2_normalize,
                                        mel_batch, same_padding)


def test_block_shapes():
    blk = InceptionBlock1d(40, 64).eval()
    assert blk(torch.randn(2, 40, 10)).shape == (2, 256, 5)
    assert blk(torch.randn(2, 40, 1)).shape == (2, 256, 1)


def test_block_rejects_wrong_width():
    with pytest.raises(ShapeMismatch):
        InceptionBlock1d(40, 64)(torch.randn(1, 39, 10))


def test_zero_input_gives_zero_output_in_inference():
    blk = InceptionBlock1d(40, 16).eval()
    assert torch.count_nonzero(blk(torch.zeros(1, 40, 9))) == 0


def test_four_branches_each_a_quarter():
    enc = VoiceEncoder()
    for blk, width in zip(enc.blocks, (256, 384, 576, 864, 512)):
        assert len(blk.branches) == 4
        assert blk.out_channels == 4 * blk.branch_channels == width
        assert [b[0].kernel_size[0] for b in blk.branches] == [2, 3, 5, 7]
        assert all(b[0].stride[0] == 2 for b in blk.branches)


def test_same_padding_halves_with_ceiling():
    for t in range(1, 60):
        for k in (2, 3, 5, 7):
            left, right = same_padding(t, k, 2)
            assert (t + left + right - k) // 2 + 1 == math.ceil(t / 2)


def test_trace_for_a_full_window():
    enc = VoiceEncoder().eval()
    feats = enc.features(torch.randn(1, 40, 123))
    t, sizes = 123, []
    for _ in range(5):
        t = -(-t // 2)
        sizes.append(t)
    assert sizes == [62, 31, 16, 8, 4]
    assert [tuple(f.shape[1:]) for f in feats] == list(zip((256, 384, 576, 864, 512), sizes))
    assert enc(torch.randn(1, 40, 123)).shape == (1, 512)


@settings(max_examples=15, deadline=None)
@given(t=st.integers(1, 300))
def test_output_is_512_and_unit_norm_for_any_length(t):
    enc = _shared_encoder()
    e = enc(torch.randn(2, 40, t))
    assert e.shape == (2, 512)
    norms = e.norm(dim=1)
    assert torch.all((norms == 0) | ((norms - 1).abs() <= 1e-6))


_ENC = {}


def _shared_encoder():
    if "enc" not in _ENC:
        torch.manual_seed(0)
        _ENC["enc"] = VoiceEncoder().eval()
    return _ENC["enc"]


def test_constant_spectrogram_gives_finite_unit_embedding():
    e = encode(MelSegment(np.full((123, 40), -3.0)), _shared_encoder())
    assert np.all(np.isfinite(e))
    assert abs(np.linalg.norm(e) - 1.0) <= 1e-6


def test_identical_segments_identical_embeddings():
    m = np.random.default_rng(0).normal(size=(123, 40))
    a = encode(MelSegment(m), _shared_encoder())
    b = encode(MelSegment(m.copy()), _shared_encoder())
    assert a.tobytes() == b.tobytes()


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8])
    np.testing.assert_array_equal(l2_normalize(np.zeros(3)), np.zeros(3))
    u = l2_normalize(np.random.default_rng(1).normal(size=7))
    np.testing.assert_allclose(l2_normalize(u), u, atol=1e-12)
    t = l2_normalize(torch.tensor([[3.0, 4.0], [0.0, 0.0]]))
    assert torch.allclose(t, torch.tensor([[0.6, 0.8], [0.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(c=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_normalising_is_scale_invariant(c, seed):
    v = np.random.default_rng(seed).normal(size=16)
    np.testing.assert_allclose(l2_normalize(c * v), l2_normalize(v), atol=1e-12)


def test_pool_then_normalise_matches_forward():
    enc = _shared_encoder()
    x = torch.randn(3, 40, 50)
    assert torch.allclose(enc(x), l2_normalize(enc.pooled(x)), atol=1e-7)


def test_initialisation():
    enc = VoiceEncoder()
    for blk in enc.blocks:
        for br in blk.branches:
            conv, bn = br[0], br[1]
            bound = 1.0 / math.sqrt(conv.weight[0].numel())
            assert conv.bias is None
            assert conv.weight.abs().max() <= bound
            assert torch.all(bn.weight == 1) and torch.all(bn.bias == 0)
            assert bn.momentum == 0.1


def test_input_width_checked():
    with pytest.raises(ShapeMismatch):
        VoiceEncoder()(torch.randn(1, 41, 20))


def test_baseline_encoder_keeps_interface():
    enc = CNNEncoder().eval()
    e = enc(torch.randn(2, 40, 123))
    assert e.shape == (2, 512)
    assert torch.allclose(e.norm(dim=1), torch.ones(2), atol=1e-6)
    assert all(m.kernel_size == (3,) for m in enc.modules() if isinstance(m, torch.nn.Conv1d))


def test_mel_batch_layout():
    m = np.arange(6 * 40, dtype=float).reshape(6, 40)
    x = mel_batch(m)
    assert x.shape == (1, 40, 6)
    assert x[0, 3, 2] == m[2, 3]

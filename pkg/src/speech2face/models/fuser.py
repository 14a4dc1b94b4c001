"""Self-attention embedding fuser.

For a sequence of window embeddings ``e_1..e_T``::

    s_ij  = e_i^T W_a e_j
    beta  = row-softmax(s)
    a_i   = sum_j beta_ij e_j
    f_i   = W_f [a_i, e_i] + b_f
    f     = l2_normalize(mean_i f_i)

Scores are deliberately unscaled (no 1/sqrt(d)).
"""
from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import DimMismatch
from .encoder import l2_normalize


class EmbeddingFuser(nn.Module):
    def __init__(self, dim: int = 512, init: str = "mean"):
        super().__init__()
        self.dim = dim
        self.W_a = nn.Parameter(torch.zeros(dim, dim))
        self.proj = nn.Linear(2 * dim, dim)
        self.reset_parameters(init)

    def reset_parameters(self, init: str = "mean"):
        """``mean``: W_a = 0 and W_f = [I/2, I/2], so the untrained fuser is plain
        mean pooling of the window embeddings. ``random``: small Gaussian weights."""
        with torch.no_grad():
            if init == "mean":
                self.W_a.zero_()
                eye = torch.eye(self.dim)
                self.proj.weight.copy_(torch.cat([eye, eye], dim=1) / 2)
                self.proj.bias.zero_()
            elif init == "random":
                nn.init.normal_(self.W_a, std=self.dim ** -0.5)
                nn.init.normal_(self.proj.weight, std=(2 * self.dim) ** -0.5)
                nn.init.normal_(self.proj.bias, std=0.01)
            else:
                raise ValueError(f"unknown fuser init {init!r}")

    @property
    def W_f(self) -> torch.Tensor:
        return self.proj.weight

    @property
    def b_f(self) -> torch.Tensor:
        return self.proj.bias

    def _check(self, E, mask):
        if E.dim() == 2:
            E = E.unsqueeze(0)
            mask = None if mask is None else mask.unsqueeze(0)
        if E.dim() != 3 or E.shape[-1] != self.dim:
            raise DimMismatch(f"expected (B, T, {self.dim}) embeddings, got {tuple(E.shape)}")
        if E.shape[1] < 1:
            raise DimMismatch("need at least one embedding to fuse")
        if mask is None:
            mask = torch.ones(E.shape[:2], dtype=torch.bool, device=E.device)
        return E, mask.bool()

    def attend(self, E, mask=None):
        """Returns ``(scores, beta, A)`` with shapes (B,T,T), (B,T,T), (B,T,d).

        ``mask`` (B, T) marks valid positions; padded keys get zero weight.
        The max-subtracted softmax is output-identical to the plain one.
        """
        E, mask = self._check(E, mask)
        scores = E @ self.W_a @ E.transpose(1, 2)
        masked = scores.masked_fill(~mask[:, None, :], float("-inf"))
        beta = torch.softmax(masked, dim=-1)
        return scores, beta, beta @ E

    def forward(self, E, mask=None):
        E, mask = self._check(E, mask)
        _, _, A = self.attend(E, mask)
        f_i = self.proj(torch.cat([A, E], dim=-1))
        w = mask.to(f_i.dtype)
        f = (f_i * w[..., None]).sum(1) / w.sum(1, keepdim=True)
        return l2_normalize(f)


def fuse(E, fuser: EmbeddingFuser):
    """Fuse one ``(T, d)`` sequence into a ``(d,)`` embedding."""
    return fuser(E)[0]


def pad_sequences(seqs: list[torch.Tensor]):
    """Stack variable-length ``(T_i, d)`` tensors into ``(B, T_max, d)`` plus a validity mask."""
    t_max = max(s.shape[0] for s in seqs)
    d = seqs[0].shape[1]
    out = seqs[0].new_zeros(len(seqs), t_max, d)
    mask = torch.zeros(len(seqs), t_max, dtype=torch.bool, device=seqs[0].device)
    for k, s in enumerate(seqs):
        out[k, :s.shape[0]] = s
        mask[k, :s.shape[0]] = True
    return out, mask

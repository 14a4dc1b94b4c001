"""Loss terms and their weighted combination.

All adversarial and classification terms consume probabilities and clamp them
to ``[eps, 1 - eps]`` before taking logs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .errors import LabelOutOfRange, NonFinite, ShapeMismatch

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0     # L1 reconstruction
    lambda2: float = 1.0      # adversarial
    lambda3: float = 0.05     # auxiliary identity classifier
    lambda4: float = 100.0    # perceptual

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite non-negative number, got {v}")

    def as_tuple(self):
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)


@dataclass
class LossBreakdown:
    l1: torch.Tensor | float
    l_g: torch.Tensor | float
    l_c: torch.Tensor | float
    l_p: torch.Tensor | float
    conjugated: torch.Tensor | float | None = None
    per_resolution: dict = field(default_factory=dict)

    def terms(self):
        return (self.l1, self.l_g, self.l_c, self.l_p)

    def floats(self) -> dict:
        def f(v):
            return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        out = {"l1": f(self.l1), "l_g": f(self.l_g), "l_c": f(self.l_c), "l_p": f(self.l_p)}
        if self.conjugated is not None:
            out["conj"] = f(self.conjugated)
        return out


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def recon_l1(real, fake):
    """Mean absolute pixel difference."""
    _same_shape(real, fake)
    return (real - fake).abs().mean()


def _log(p, eps):
    return torch.log(p.clamp(eps, 1.0 - eps))


def adversarial_terms(p_real_on_real, p_real_on_fake, saturating: bool = False, eps: float = PROB_EPS):
    """``(d_loss, g_loss)`` from the "real" probabilities on real and generated images.

    ``d_loss = -[mean log D(x_r) + mean log(1 - D(x_f))]``. The generator term is
    the non-saturating ``-mean log D(x_f)`` by default; ``saturating=True`` returns
    the full minimax value ``mean log D(x_r) + mean log(1 - D(x_f))`` instead
    (non-positive, minimised by the generator).
    """
    log_real = _log(p_real_on_real, eps).mean()
    log_fake = _log(p_real_on_fake, eps).mean()
    log_not_fake = _log(1.0 - p_real_on_fake, eps).mean()
    d_loss = -(log_real + log_not_fake)
    g_loss = (log_real + log_not_fake) if saturating else -log_fake
    return d_loss, g_loss


def aux_class_loss(p_id, labels, eps: float = PROB_EPS):
    """Mean categorical cross-entropy of probability rows against integer labels."""
    labels = torch.as_tensor(labels, dtype=torch.long, device=p_id.device)
    n_classes = p_id.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    picked = p_id.gather(-1, labels[:, None]).squeeze(-1)
    return -_log(picked, eps).mean()


def perceptual_loss(embed, real, fake):
    """Mean absolute difference between frozen-embedder features of ``real`` and ``fake``.

    Gradients reach ``fake`` only; the embedder must already be frozen.
    """
    _same_shape(real, fake)
    if any(p.requires_grad for p in embed.parameters()):
        raise RuntimeError("perceptual embedder must be frozen (requires_grad=False)")
    with torch.no_grad():
        target = embed(real)
    return (target - embed(fake)).abs().mean()


def conjugate(breakdown: LossBreakdown, w: LossWeights):
    """``lambda1 L1 + lambda2 L_G + lambda3 L_C + lambda4 L_P``."""
    terms = breakdown.terms()
    for name, t in zip(("l1", "l_g", "l_c", "l_p"), terms):
        value = float(t.detach()) if isinstance(t, torch.Tensor) else float(t)
        if not math.isfinite(value):
            raise NonFinite(f"loss term {name} is not finite ({value})")
    total = sum(lam * t for lam, t in zip(w.as_tuple(), terms))
    breakdown.conjugated = total
    return total

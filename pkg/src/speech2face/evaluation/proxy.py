"""A small face-identity network used both as the embedding model and as the
posterior classifier during evaluation, and as the frozen perceptual embedder
during training."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..forge.synth import _seed_words, make_latent, photo_variant, render_face
from ..models.encoder import l2_normalize

INPUT_SIZE = 64
COSINE_SCALE = 16.0


class ProxyFaceModel(nn.Module):
    """Four stride-2 conv stages, a linear embedding head and a cosine classifier.

    ``forward`` returns the L2-normalised embedding; :meth:`posteriors` returns
    class probabilities from scaled cosine logits. Inputs above 64 x 64 are
    average-pooled down first.
    """

    def __init__(self, n_classes: int, width: int = 32, embed_dim: int = 128):
        super().__init__()
        self.n_classes = n_classes
        self.width = width
        self.embed_dim = embed_dim
        layers, prev = [], 3
        for c in (width, 2 * width, 4 * width, 8 * width):
            layers += [nn.Conv2d(prev, c, 3, stride=2, padding=1), nn.BatchNorm2d(c), nn.ReLU()]
            prev = c
        self.body = nn.Sequential(*layers)
        self.embed_head = nn.Linear(prev * 16, embed_dim)
        self.classes = nn.Parameter(torch.randn(n_classes, embed_dim) * embed_dim ** -0.5)

    @staticmethod
    def _resize(x):
        if x.shape[-1] != INPUT_SIZE:
            factor = x.shape[-1] // INPUT_SIZE
            if factor < 1 or factor * INPUT_SIZE != x.shape[-1]:
                return F.interpolate(x, size=(INPUT_SIZE, INPUT_SIZE), mode="bilinear", align_corners=False)
            x = F.avg_pool2d(x, factor)
        return x

    def forward(self, x):
        h = self.body(self._resize(x)).flatten(1)
        return l2_normalize(self.embed_head(h))

    def logits(self, x):
        return COSINE_SCALE * self(x) @ l2_normalize(self.classes).T

    def posteriors(self, x):
        return torch.softmax(self.logits(x), dim=-1)

    def freeze(self) -> "ProxyFaceModel":
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    def config(self) -> dict:
        return {"n_classes": self.n_classes, "width": self.width, "embed_dim": self.embed_dim}


def reference_faces(n_identities: int, n_faces: int, seed: int, size: int = 64):
    """Faces of a synthetic population disjoint from any ``make_latent(seed', 'id....')`` set."""
    images, labels = [], []
    for k in range(n_identities):
        canonical = render_face(make_latent(seed, f"ref{k:04d}"), size)
        for j in range(n_faces):
            images.append(canonical if j == 0 else photo_variant(canonical, seed * 7919 + k * 131 + j))
            labels.append(k)
    return np.stack(images).astype(np.float32), np.asarray(labels)


def _augment(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Random blur, contrast and brightness so the model tolerates generated faces."""
    b = x.shape[0]
    sigma = torch.rand(b, generator=gen) * 1.5
    grid = torch.arange(-3, 4, dtype=x.dtype)
    out = torch.empty_like(x)
    for i in range(b):
        if sigma[i] < 0.2:
            out[i] = x[i]
            continue
        k = torch.exp(-0.5 * (grid / sigma[i]) ** 2)
        k = k / k.sum()
        y = F.conv2d(F.pad(x[i:i + 1], (3, 3, 0, 0), mode="replicate"),
                     k.view(1, 1, 1, 7).expand(3, 1, 1, 7), groups=3)
        y = F.conv2d(F.pad(y, (0, 0, 3, 3), mode="replicate"),
                     k.view(1, 1, 7, 1).expand(3, 1, 7, 1), groups=3)
        out[i] = y[0]
    contrast = 1.0 + (torch.rand(b, 1, 1, 1, generator=gen) - 0.5) * 0.3
    shift = (torch.rand(b, 1, 1, 1, generator=gen) - 0.5) * 0.2
    return out * contrast + shift


def train_proxy(images, labels, iterations: int = 600, batch_size: int = 64, width: int = 32,
                embed_dim: int = 128, lr: float = 1e-3, seed: int = 0) -> ProxyFaceModel:
    """Fit a classifier to ``(images, labels)`` and return it frozen."""
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(_seed_words("proxy", seed))
    model = ProxyFaceModel(n_classes, width, embed_dim)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    x_all = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    y_all = torch.as_tensor(labels, dtype=torch.long)
    model.train()
    for _ in range(iterations):
        idx = torch.as_tensor(rng.integers(0, len(x_all), size=batch_size))
        loss = F.cross_entropy(model.logits(_augment(x_all[idx], gen)), y_all[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    return model.freeze()


def reference_proxy(eval_cfg, size: int = 64) -> ProxyFaceModel:
    """Proxy trained on a dedicated reference population described by ``eval_cfg``."""
    images, labels = reference_faces(eval_cfg.proxy_identities, eval_cfg.proxy_faces, eval_cfg.proxy_seed, size)
    return train_proxy(images, labels, eval_cfg.proxy_iterations, eval_cfg.proxy_batch,
                       eval_cfg.proxy_width, eval_cfg.proxy_embed_dim, eval_cfg.proxy_lr, eval_cfg.proxy_seed)


def manifest_proxy(identities, eval_cfg) -> ProxyFaceModel:
    """Proxy trained on the faces of ``identities`` themselves."""
    images, labels = [], []
    for k, ident in enumerate(identities):
        for rec in ident.faces:
            images.append(rec.load_image())
            labels.append(k)
    return train_proxy(np.stack(images), labels, eval_cfg.proxy_iterations, eval_cfg.proxy_batch,
                       eval_cfg.proxy_width, eval_cfg.proxy_embed_dim, eval_cfg.proxy_lr, eval_cfg.proxy_seed)


def load_proxy(state: dict, config: dict) -> ProxyFaceModel:
    model = ProxyFaceModel(**config)
    model.load_state_dict(state)
    return model.freeze()

"""Finite-difference gradient cases shared by the unit and acceptance suites.

Each case builds a miniature double-precision module, a scalar loss, and a set
of named tensors to probe. ``run_case`` returns the relative error per tensor.
"""
import numpy as np
import torch

from speech2face.evaluation.proxy import ProxyFaceModel
from speech2face.models.adversaries import Discriminator
from speech2face.models.decoder import FaceDecoder
from speech2face.models.encoder import VoiceEncoder
from speech2face.models.fuser import EmbeddingFuser, pad_sequences
from speech2face.objectives import adversarial_terms, aux_class_loss, perceptual_loss, recon_l1

from oracles import central_difference, relative_error

TOLERANCE = 1e-4
PROBES = 25


def _gen(seed):
    return torch.Generator().manual_seed(seed)


def _freeze(m):
    for p in m.parameters():
        p.requires_grad_(False)
    return m


def encoder_case():
    torch.manual_seed(0)
    enc = VoiceEncoder(n_mels=8, channels=(8, 8, 8, 8, 8)).double()
    mel = torch.randn(3, 8, 21, dtype=torch.float64, generator=_gen(1), requires_grad=True)
    w = torch.randn(3, 8, dtype=torch.float64, generator=_gen(2))
    targets = {"block1.conv": enc.blocks[0].branches[1][0].weight,
               "block5.conv": enc.blocks[4].branches[3][0].weight,
               "mel": mel}
    return (lambda: (w * enc(mel)).sum()), targets


def fuser_case():
    torch.manual_seed(0)
    fz = EmbeddingFuser(6, init="random").double()
    seqs = [torch.randn(t, 6, dtype=torch.float64, generator=_gen(t)) for t in (3, 5)]
    E, mask = pad_sequences(seqs)
    E = E.clone().requires_grad_(True)
    w = torch.randn(2, 6, dtype=torch.float64, generator=_gen(9))
    return (lambda: (w * fz(E, mask)).sum()), {"W_a": fz.W_a, "W_f": fz.W_f, "b_f": fz.b_f, "E": E}


def decoder_case():
    torch.manual_seed(0)
    # four samples keep the batch-norm statistics of the 2x2 first block well conditioned
    dec = FaceDecoder(embed_dim=8, channels=(8, 8, 6, 6, 4, 4)).double()
    f = torch.randn(4, 8, dtype=torch.float64, generator=_gen(3), requires_grad=True)
    w = torch.randn(4, 3, 64, 64, dtype=torch.float64, generator=_gen(4))
    return (lambda: (w * dec(f)).sum()), {"block1.conv": dec.blocks[0].conv.weight,
                                         "block6.conv": dec.blocks[5].conv.weight,
                                         "head": dec.head.weight, "f": f}


def _images(seed, grad=False):
    x = torch.rand(2, 3, 64, 64, dtype=torch.float64, generator=_gen(seed)) * 2 - 1
    return x.requires_grad_(grad)


def _small_disc(n_out, seed):
    torch.manual_seed(seed)
    return Discriminator(n_out, channels=(4, 4, 4), hidden=8).double()


def l1_case():
    real, fake = _images(5), _images(6, grad=True)
    return (lambda: recon_l1(real, fake)), {"fake": fake}


def generator_adversarial_case():
    d = _small_disc(2, 7)
    real, fake = _images(5), _images(6, grad=True)

    def loss():
        _, g = adversarial_terms(d.probs(real)[:, 0], d.probs(fake)[:, 0])
        return g
    return loss, {"fake": fake, "D.conv1": d.body[0].weight}


def discriminator_adversarial_case():
    d = _small_disc(2, 8)
    real, fake = _images(5), _images(6)

    def loss():
        dl, _ = adversarial_terms(d.probs(real)[:, 0], d.probs(fake)[:, 0])
        return dl
    return loss, {"D.conv1": d.body[0].weight, "D.fc": d.fc[2].weight}


def aux_case():
    d = _small_disc(5, 9)
    fake = _images(6, grad=True)
    labels = torch.tensor([1, 3])
    return (lambda: aux_class_loss(d.probs(fake), labels)), {"fake": fake, "D_id.fc": d.fc[2].weight}


def perceptual_case():
    torch.manual_seed(10)
    emb = ProxyFaceModel(4, width=4, embed_dim=8).double()
    emb.eval()
    _freeze(emb)
    real, fake = _images(5), _images(6, grad=True)
    return (lambda: perceptual_loss(emb, real, fake)), {"fake": fake}


CASES = {
    "encoder": encoder_case,
    "fuser": fuser_case,
    "decoder": decoder_case,
    "l1": l1_case,
    "adversarial_g": generator_adversarial_case,
    "adversarial_d": discriminator_adversarial_case,
    "aux_class": aux_case,
    "perceptual": perceptual_case,
}


def run_case(build, probes=PROBES, seed=0):
    loss, targets = build()
    tensors = list(targets.values())
    for t in tensors:
        t.grad = None
    loss().backward()
    analytic = {k: t.grad.detach().clone().view(-1).numpy() for k, t in targets.items()}
    errors = {}
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for k, t in targets.items():
            idx, numeric = central_difference(loss, t, max_entries=probes, rng=rng)
            errors[k] = relative_error(analytic[k][idx], numeric)
    return errors

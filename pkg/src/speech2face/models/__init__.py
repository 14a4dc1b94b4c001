from .adversaries import Discriminator, build_discriminators, classify_identity, judge_real
from .decoder import FaceDecoder, decode, decode_multi, export_image
from .encoder import CNNEncoder, VoiceEncoder, encode, l2_normalize, mel_batch
from .fuser import EmbeddingFuser, fuse, pad_sequences

__all__ = [
    "Discriminator", "build_discriminators", "classify_identity", "judge_real",
    "FaceDecoder", "decode", "decode_multi", "export_image",
    "CNNEncoder", "VoiceEncoder", "encode", "l2_normalize", "mel_batch",
    "EmbeddingFuser", "fuse", "pad_sequences",
]

from .metrics import (EmbeddingMatrix, build_gt_matrix, recall_at_k, retrieval_ranks, similarity_metrics, vfs,
                      vggface_score)
from .protocol import MetricsReport, evaluate
from .proxy import ProxyFaceModel, reference_proxy, train_proxy

__all__ = ["EmbeddingMatrix", "build_gt_matrix", "recall_at_k", "retrieval_ranks", "similarity_metrics", "vfs",
           "vggface_score", "MetricsReport", "evaluate", "ProxyFaceModel", "reference_proxy", "train_proxy"]

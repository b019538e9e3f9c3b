from .embedders import Embedder, toy_embedder
from .metrics import MetricError, cosine, dino_m, embedding_similarity, fid, kid, ssim
from .report import EvalReport, emit_report
from .study import StudyResponse, human_scores

__all__ = [
    "Embedder", "EvalReport", "MetricError", "StudyResponse", "cosine", "dino_m", "embedding_similarity",
    "emit_report", "fid", "human_scores", "kid", "ssim", "toy_embedder",
]

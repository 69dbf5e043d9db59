"""AggrE: context-aggregated entity and relation embeddings for relation prediction."""

from .config import TrainConfig
from .evaluation import RankingReport, compute_metrics, evaluate, evaluate_state, rank_relations
from .kg_store import ContextIndex, KnowledgeGraph, Vocab, build_context_index, load_dataset
from .model import (EmbeddingState, Gradients, LayerTrace, aggregate, init_embeddings,
                    loss_and_grad, relation_logits)
from .trainer import AdamState, adam_step, load_checkpoint, save_checkpoint, train

__all__ = [
    "AdamState", "ContextIndex", "EmbeddingState", "Gradients", "KnowledgeGraph", "LayerTrace",
    "RankingReport", "TrainConfig", "Vocab", "adam_step", "aggregate", "build_context_index",
    "compute_metrics", "evaluate", "evaluate_state", "init_embeddings", "load_checkpoint",
    "load_dataset", "loss_and_grad", "rank_relations", "relation_logits", "save_checkpoint",
    "train",
]

__version__ = "0.1.0"

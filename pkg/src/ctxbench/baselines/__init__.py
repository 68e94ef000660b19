"""Graph baselines: label propagation, node2vec + logistic head, embedding storage."""

from .embeddings import EmbeddingTable, load_embeddings, store_embeddings
from .head import HeadConfig, LinearHead, predict_scores, train_linear_head
from .labelprop import UNREACHED_SCORE, LabelState, label_propagation
from .node2vec import CSRGraph, Node2VecConfig, WalkCorpus, node2vec_embed, node2vec_walks, train_skipgram

__all__ = [
    "CSRGraph", "EmbeddingTable", "HeadConfig", "LabelState", "LinearHead", "Node2VecConfig",
    "UNREACHED_SCORE", "WalkCorpus", "label_propagation", "load_embeddings", "node2vec_embed",
    "node2vec_walks", "predict_scores", "store_embeddings", "train_linear_head", "train_skipgram",
]

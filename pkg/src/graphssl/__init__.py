"""KNN-graph self-distillation and GNN refinement of sample embeddings."""

__version__ = "0.1.0"

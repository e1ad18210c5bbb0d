"""Knowledge-graph-enhanced contrastive recommendation on numpy and scipy.sparse."""

__version__ = "0.1.0"

from .evaluator import MetricsReport, evaluate, evaluate_embeddings, ndcg_at_k, rank_for_user, recall_at_k
from .graph import DatasetBundle, DataFormatError, InteractionGraph, KnowledgeGraph, load_bundle, save_bundle
from .objectives import LossConfig, bpr_loss, compute_gradients, infonce_loss
from .params import AdamState, ModelParams, adam_step, init_params, load_checkpoint, save_checkpoint
from .propagation import ForwardOutput, ModelConfig, backward, forward
from .sampling import augment_edges, sample_bpr_batch, split_interactions
from .synthetic import SyntheticSpec, generate_synthetic_dataset
from .trainer import ABLATIONS, TrainConfig, TrainHistory, run_ablation_suite, train

__all__ = [
    "ABLATIONS", "AdamState", "DataFormatError", "DatasetBundle", "ForwardOutput", "InteractionGraph",
    "KnowledgeGraph", "LossConfig", "MetricsReport", "ModelConfig", "ModelParams", "SyntheticSpec",
    "TrainConfig", "TrainHistory", "adam_step", "augment_edges", "backward", "bpr_loss", "compute_gradients",
    "evaluate", "evaluate_embeddings", "forward", "generate_synthetic_dataset", "infonce_loss",
    "init_params", "load_bundle", "load_checkpoint", "ndcg_at_k", "rank_for_user", "recall_at_k",
    "run_ablation_suite", "sample_bpr_batch", "save_bundle", "save_checkpoint", "split_interactions",
    "train",
]

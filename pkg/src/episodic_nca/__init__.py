"""Few-shot embedding training with NCA and episodic losses, in numpy."""
from .losses import (
    EpisodeEmbeddings,
    NoPairsError,
    compute_prototypes,
    nca_loss,
    proto_loss,
    subsampled_nca_loss,
    sup_contrastive_loss,
)
from .numerics import RngStream, pairwise_sq_dists
from .pairs import extra_pairs, nca_pair_counts, pn_pair_counts
from .sampler import EpisodeConfig, LabeledDataset, sample_episode

__version__ = "0.1.0"

__all__ = [
    "EpisodeConfig",
    "EpisodeEmbeddings",
    "LabeledDataset",
    "NoPairsError",
    "RngStream",
    "compute_prototypes",
    "extra_pairs",
    "nca_loss",
    "nca_pair_counts",
    "pairwise_sq_dists",
    "pn_pair_counts",
    "proto_loss",
    "sample_episode",
    "subsampled_nca_loss",
    "sup_contrastive_loss",
]

"""Online supervised hashing with balanced similarity and discrete optimization.

Learns linear hash functions ``sign(W^T x)`` from a stream of labeled
batches and evaluates them with Hamming-ranking retrieval metrics.
"""
from .codec import HashModel, encode, init_weights, load_model, save_model, sign
from .data import (
    DatasetMeta,
    Normalizer,
    load_features,
    load_labels,
    make_protocol_split,
    normalize,
    synth_clusters,
)
from .evaluation import (
    MetricsReport,
    RetrievalSetup,
    code_diagnostics,
    evaluate,
    hamming_distance,
    mean_average_precision,
    precision_at_H2,
    precision_at_R,
    rank_database,
)
from .optimizer import Hyperparams, solve_stage
from .similarity import BalanceFactors, SimilarityBlock, build_block
from .trainer import TrainerConfig, batches, load_codes, run_online, save_codes

__version__ = "0.1.0"

"""Graph-temporal sleep label prediction lab.

Builds weighted social graphs from communication events, repackages them into
fixed-size inputs, trains graph-attention / graph-convolution / convolution /
sequence-only label predictors end to end in pure numpy, and runs the full
evaluation, saliency, and perturbation-robustness analyses on synthetic
cohorts with planted contagion.
"""

from .graphs import (
    CommEvent,
    WeightedGraph,
    build_call_graph,
    build_sms_graph,
    categorize_centrality,
    connected_components,
    degree_centrality,
    eigenvalue_centrality,
    symmetrize,
)
from .models import MODEL_KINDS, ModelGraphBundle, SleepLabelModel, predict_labels
from .partition import GeddOutput, gedd_partition, split_component
from .pipeline import (
    CohortDataset,
    Standardizer,
    drop_sparse_features,
    knn_impute,
    make_bundles,
    make_label,
    preprocess,
    remove_outliers,
)
from .synth import SynthConfig, generate_synthetic

__all__ = [
    "CommEvent",
    "CohortDataset",
    "GeddOutput",
    "MODEL_KINDS",
    "ModelGraphBundle",
    "SleepLabelModel",
    "Standardizer",
    "SynthConfig",
    "WeightedGraph",
    "build_call_graph",
    "build_sms_graph",
    "categorize_centrality",
    "connected_components",
    "degree_centrality",
    "drop_sparse_features",
    "eigenvalue_centrality",
    "gedd_partition",
    "generate_synthetic",
    "knn_impute",
    "make_bundles",
    "make_label",
    "predict_labels",
    "preprocess",
    "remove_outliers",
    "split_component",
    "symmetrize",
]

__version__ = "0.1.0"

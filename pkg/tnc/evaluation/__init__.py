from .classification import ClassifierEval, auprc, linear_probe
from .clustering import ClusterEval, KMeansResult, cluster_report, davies_bouldin, kmeans, silhouette, transition_hit_rate
from .dtw import KnnEval, dtw_distance, dtw_matrix, knn_baseline, knn_classify
from .encode import (
    EncodedSet,
    WindowSet,
    encode_dataset,
    export_encodings_csv,
    export_trajectory_csv,
    majority_labels,
    window_set,
)
from .report import EvalReport, read_metrics
from .supervised import supervised_baseline

__all__ = [
    "ClassifierEval",
    "ClusterEval",
    "EncodedSet",
    "EvalReport",
    "KMeansResult",
    "KnnEval",
    "WindowSet",
    "auprc",
    "cluster_report",
    "davies_bouldin",
    "dtw_distance",
    "dtw_matrix",
    "encode_dataset",
    "export_encodings_csv",
    "export_trajectory_csv",
    "kmeans",
    "knn_baseline",
    "knn_classify",
    "linear_probe",
    "majority_labels",
    "read_metrics",
    "silhouette",
    "supervised_baseline",
    "transition_hit_rate",
    "window_set",
]

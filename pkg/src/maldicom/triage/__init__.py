"""Memory-dump triage: dataset loading, SMOTE, classifiers, metrics, Shapley values."""

from .data import Dataset, load_malmem_csv, parse_category, stratified_split, write_malmem_csv
from .metrics import Metrics, benchmark_inference, evaluate
from .naive_bayes import GaussianNB
from .neighbors import KNeighborsClassifier
from .persist import load_model, save_model
from .pipeline import (
    SplitSpec,
    build_model,
    predict,
    prepare,
    train_and_evaluate,
    train_decision_tree,
    train_gaussian_nb,
    train_knn,
    train_random_forest,
)
from .shapley import (
    ShapleyExplanation,
    feature_ranking,
    marginal_prediction,
    select_background,
    shapley_values,
)
from .smote import SMOTE, smote_oversample
from .tree import DecisionTreeClassifier, RandomForestClassifier

__all__ = [
    "Dataset", "load_malmem_csv", "parse_category", "stratified_split", "write_malmem_csv",
    "Metrics", "benchmark_inference", "evaluate",
    "GaussianNB", "KNeighborsClassifier", "DecisionTreeClassifier", "RandomForestClassifier",
    "load_model", "save_model",
    "SplitSpec", "build_model", "predict", "prepare", "train_and_evaluate",
    "train_decision_tree", "train_gaussian_nb", "train_knn", "train_random_forest",
    "ShapleyExplanation", "feature_ranking", "marginal_prediction", "select_background", "shapley_values",
    "SMOTE", "smote_oversample",
]

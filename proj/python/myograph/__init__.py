"""Pose keypoints to muscle activation: synthetic corpus, models and metrics."""

from ._myograph import (
    EXERCISES,
    MUSCLES,
    Model,
    generate_corpus,
    gradient_checks,
    load_dataset,
    oracle_contracts,
    rmse,
)

__all__ = [
    "EXERCISES",
    "MUSCLES",
    "Model",
    "generate_corpus",
    "gradient_checks",
    "load_dataset",
    "oracle_contracts",
    "rmse",
]

"""Influence-based selection of additional training points for logistic regression."""

from .dataset import (
    DataError,
    DataPoint,
    Dataset,
    SparseVector,
    VectorizerConfig,
    Vocabulary,
    fit_vectorizer,
    load_svmlight,
    load_tsv,
    save_svmlight,
    synth_generate,
    transform,
)
from .influence import (
    InfluenceMatrix,
    SolverConfig,
    delta_f_for_subset,
    delta_w_for_candidate,
    influence_matrix,
    retrain_oracle,
    solve_hinv,
)
from .model import TrainConfig, TrainedModel, accuracy, grad_point, hvp, predict_proba, train
from .selection import SelectionConfig, random_baseline, run_method, select

__version__ = "0.1.0"

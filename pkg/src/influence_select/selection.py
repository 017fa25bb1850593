"""Scoring rules that turn an influence matrix into candidate subsets.

Every scorer returns one number per candidate; candidates with a strictly
positive score are selected unless the rule says otherwise.  Row sums run
left to right over validation points so scores are bit-reproducible.

Terminology: validation point ``j`` has a desired direction (+1 to push its
probability up, -1 down).  Influence ``delta_f[i, j]`` is *aligned* when its
sign equals that direction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .dataset import Dataset
from .influence import InfluenceMatrix
from .model import TrainedModel, predict_proba_batch

__all__ = [
    "METHODS",
    "SelectionConfig",
    "ScoreVector",
    "SelectionResult",
    "desired_direction",
    "score_method1",
    "score_method2",
    "score_method3",
    "score_method4",
    "score_method5",
    "score_method6",
    "select",
    "random_baseline",
    "run_method",
    "write_scores_csv",
]

METHODS = ("m1", "m2", "m3", "m4", "m5", "m6")


@dataclass(frozen=True)
class SelectionConfig:
    tau: float = 0.5
    direction_mode: str = "label"
    scoring_mode: str = "rectified"
    method2_weight: str = "signed"
    method3_quantile: float = 0.10
    method5_aligned_weight: float = 1.0
    method5_misaligned_weight: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.direction_mode not in ("label", "threshold"):
            raise ValueError(f"unknown direction_mode {self.direction_mode!r}")
        if self.scoring_mode not in ("rectified", "literal"):
            raise ValueError(f"unknown scoring_mode {self.scoring_mode!r}")
        if self.method2_weight not in ("signed", "magnitude"):
            raise ValueError(f"unknown method2_weight {self.method2_weight!r}")
        if not 0.0 < self.method3_quantile <= 1.0:
            raise ValueError("method3_quantile must lie in (0, 1]")
        if self.method5_aligned_weight <= 0 or self.method5_misaligned_weight <= 0:
            raise ValueError("method 5 weights must be positive")


@dataclass(frozen=True, eq=False)
class ScoreVector:
    candidate_ids: tuple
    scores: np.ndarray
    method: str

    def __post_init__(self):
        if len(self.candidate_ids) != self.scores.shape[0]:
            raise ValueError("scores and candidate ids differ in length")


@dataclass(frozen=True)
class SelectionResult:
    selected_ids: tuple
    method: str
    n_candidates: int

    @property
    def added_fraction(self) -> float:
        return len(self.selected_ids) / self.n_candidates if self.n_candidates else 0.0

    def __len__(self) -> int:
        return len(self.selected_ids)


def desired_direction(base_prob: float, label: int, tau: float, mode: str) -> int:
    if mode == "threshold":
        return 1 if tau - base_prob >= 0 else -1
    if mode == "label":
        return 1 if label == 1 else -1
    raise ValueError(f"unknown direction mode {mode!r}")


def _directions(infl: InfluenceMatrix, labels: np.ndarray, cfg: SelectionConfig) -> np.ndarray:
    if cfg.direction_mode == "threshold":
        return np.where(cfg.tau - infl.base_probs >= 0, 1.0, -1.0)
    return np.where(labels == 1, 1.0, -1.0)


def _labels(infl: InfluenceMatrix, val_labels) -> np.ndarray:
    labels = infl.val_labels if val_labels is None else np.asarray(val_labels, dtype=np.int64)
    if labels.shape != (infl.shape[1],):
        raise ValueError("validation labels do not match the influence matrix")
    return labels


def _rowsum(terms: np.ndarray) -> np.ndarray:
    if terms.shape[1] == 0:
        return np.zeros(terms.shape[0])
    return np.cumsum(terms, axis=1)[:, -1]


def _net_crossings(infl: InfluenceMatrix, labels: np.ndarray, tau: float):
    """+1 where a point turns from wrong to right, -1 for right to wrong."""
    before = (infl.base_probs >= tau) == (labels == 1)
    after = ((infl.base_probs + infl.values) >= tau) == (labels == 1)
    return after.astype(np.int64) - before.astype(np.int64)


def score_method1(infl: InfluenceMatrix, val_labels=None,
                  cfg: SelectionConfig = SelectionConfig()) -> ScoreVector:
    """Algorithm-1 contribution score.

    ``literal`` adds ``delta_f`` when aligned and subtracts it otherwise;
    ``rectified`` adds ``direction * delta_f``, i.e. ``+|delta_f|`` when
    aligned and ``-|delta_f|`` when not.
    """
    labels = _labels(infl, val_labels)
    dirs = _directions(infl, labels, cfg)
    D = infl.values
    if cfg.scoring_mode == "literal":
        terms = np.where(np.sign(D) == dirs, D, -D)
    else:
        terms = dirs * D
    return ScoreVector(infl.candidate_ids, _rowsum(terms), "m1")


def score_method2(infl: InfluenceMatrix, pool: Dataset | None = None,
                  model: TrainedModel | None = None,
                  cfg: SelectionConfig = SelectionConfig()) -> ScoreVector:
    """Method-1 score scaled by the candidate's own residual ``y - p``.

    Without ``pool``/``model`` the residual comes from the labels and base
    probabilities stored on the influence matrix.
    """
    if pool is not None and model is not None:
        disc = pool.y - predict_proba_batch(model, pool)
    else:
        disc = infl.candidate_labels - infl.candidate_probs
    if cfg.method2_weight == "magnitude":
        disc = np.abs(disc)
    base = score_method1(infl, None, cfg).scores
    return ScoreVector(infl.candidate_ids, disc * base, "m2")


def score_method3(infl: InfluenceMatrix, val_labels=None,
                  cfg: SelectionConfig = SelectionConfig()) -> tuple[ScoreVector, SelectionResult]:
    """Sum of aligned influence only, then the top quantile of positives."""
    labels = _labels(infl, val_labels)
    dirs = _directions(infl, labels, cfg)
    toward = dirs * infl.values
    sv = ScoreVector(infl.candidate_ids, _rowsum(np.where(toward > 0, toward, 0.0)), "m3")
    return sv, select(sv, "top_quantile", cfg.method3_quantile)


def score_method4(infl: InfluenceMatrix, val_labels=None,
                  cfg: SelectionConfig = SelectionConfig()) -> ScoreVector:
    """Net number of validation points flipped to the correct side of tau."""
    labels = _labels(infl, val_labels)
    net = _net_crossings(infl, labels, cfg.tau).astype(np.float64)
    return ScoreVector(infl.candidate_ids, _rowsum(net), "m4")


def score_method5(infl: InfluenceMatrix, val_labels=None,
                  cfg: SelectionConfig = SelectionConfig()) -> ScoreVector:
    labels = _labels(infl, val_labels)
    dirs = _directions(infl, labels, cfg)
    D = infl.values
    mag = np.abs(D)
    terms = np.where(np.sign(D) == dirs, cfg.method5_aligned_weight * mag,
                     -cfg.method5_misaligned_weight * mag)
    return ScoreVector(infl.candidate_ids, _rowsum(terms), "m5")


def score_method6(infl: InfluenceMatrix, val_labels=None,
                  cfg: SelectionConfig = SelectionConfig()) -> ScoreVector:
    """Crossing-gated credit: a flip counts only its distance to tau."""
    labels = _labels(infl, val_labels)
    net = _net_crossings(infl, labels, cfg.tau)
    gap = np.abs(cfg.tau - infl.base_probs)
    return ScoreVector(infl.candidate_ids, _rowsum(net * gap), "m6")


def _ranked(scores: ScoreVector, positions: Sequence[int]) -> list[int]:
    ids, s = scores.candidate_ids, scores.scores
    return sorted(positions, key=lambda i: (-s[i], ids[i]))


def select(scores: ScoreVector, rule: str = "positive_score", q: float | None = None) -> SelectionResult:
    """``positive_score`` keeps score > 0; ``top_quantile`` keeps the best
    ``ceil(q * M)`` of those, breaking ties by ascending id.
    """
    M = len(scores.candidate_ids)
    positive = [i for i in range(M) if scores.scores[i] > 0]
    if rule == "positive_score":
        chosen = positive
    elif rule == "top_quantile":
        if q is None or not 0.0 < q <= 1.0:
            raise ValueError("top_quantile needs q in (0, 1]")
        chosen = sorted(_ranked(scores, positive)[: math.ceil(q * M)])
    else:
        raise ValueError(f"unknown selection rule {rule!r}")
    return SelectionResult(tuple(scores.candidate_ids[i] for i in chosen), scores.method, M)


def random_baseline(pool: Dataset | Sequence[Hashable], k: int, seed: int) -> SelectionResult:
    ids = tuple(pool.ids) if isinstance(pool, Dataset) else tuple(pool)
    M = len(ids)
    if not 0 <= k <= M:
        raise ValueError(f"cannot draw {k} of {M} candidates")
    picks = np.sort(np.random.default_rng(seed).choice(M, size=k, replace=False))
    return SelectionResult(tuple(ids[i] for i in picks), "random", M)


def run_method(method: str, infl: InfluenceMatrix, cfg: SelectionConfig = SelectionConfig(),
               pool: Dataset | None = None,
               model: TrainedModel | None = None) -> tuple[ScoreVector, SelectionResult]:
    if method == "m3":
        return score_method3(infl, None, cfg)
    if method == "m2":
        sv = score_method2(infl, pool, model, cfg)
    else:
        scorer = {"m1": score_method1, "m4": score_method4,
                  "m5": score_method5, "m6": score_method6}.get(method)
        if scorer is None:
            raise ValueError(f"unknown method {method!r}")
        sv = scorer(infl, None, cfg)
    return sv, select(sv)


def write_scores_csv(scores: ScoreVector, selection: SelectionResult, path: str | Path) -> None:
    chosen = set(selection.selected_ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate_id", "method", "score", "selected"])
        for cid, s in zip(scores.candidate_ids, scores.scores.tolist()):
            w.writerow([cid, scores.method, repr(s), int(cid in chosen)])

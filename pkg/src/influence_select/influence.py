"""First-order estimates of how adding training points moves predictions.

For a candidate ``z`` the parameter change is

    delta_w(z) = -(1/N) * H^{-1} grad_loss(z, w_hat)

with ``H`` the training-risk Hessian on the original training set only, and
the change of validation prediction ``j`` is ``grad_f(x_j) @ delta_w(z)``
where ``grad_f(x) = f(x) (1 - f(x)) x`` for the logistic link.  Estimates are
additive over candidates, so subset effects are row sums.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .dataset import DataError, DataPoint, Dataset
from .linalg import CGNotConverged, conjugate_gradient
from .model import (
    DENSE_HESSIAN_CAP,
    TrainConfig,
    TrainedModel,
    grad_point,
    hessian_dense,
    predict_proba_batch,
    train,
)

__all__ = [
    "SolverConfig",
    "InfluenceMatrix",
    "RetrainDelta",
    "InfluenceError",
    "solve_hinv",
    "delta_w_for_candidate",
    "influence_matrix",
    "delta_f_for_subset",
    "retrain_oracle",
    "save_influence",
    "load_influence",
]

CHUNK = 64


class InfluenceError(RuntimeError):
    """Solver failure tagged with the candidate or validation id it concerns."""


@dataclass(frozen=True)
class SolverConfig:
    method: str = "conjugate_gradient"
    cg_tol: float = 1e-8
    cg_max_iter: int | None = None
    damping: float = 0.0
    dense_cap: int = DENSE_HESSIAN_CAP

    def __post_init__(self):
        if self.method not in ("conjugate_gradient", "dense"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.cg_tol <= 0:
            raise ValueError("cg_tol must be positive")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")
        if self.cg_max_iter is not None and self.cg_max_iter < 1:
            raise ValueError("cg_max_iter must be positive")

    def max_iter_for(self, dim: int) -> int:
        if self.cg_max_iter is not None:
            return self.cg_max_iter
        return max(1, math.ceil(10 * math.sqrt(dim)))


@dataclass(frozen=True, eq=False)
class InfluenceMatrix:
    """``values[i, j]``: estimated change of validation prediction ``j``
    when candidate ``i`` is added.

    Validation labels and the candidates' own labels and base probabilities
    ride along so that every scoring method can be rerun from a saved file.
    """

    values: np.ndarray
    candidate_ids: tuple
    validation_ids: tuple
    base_probs: np.ndarray
    val_labels: np.ndarray
    candidate_labels: np.ndarray
    candidate_probs: np.ndarray

    def __post_init__(self):
        M, V = self.values.shape
        if len(self.candidate_ids) != M or len(self.validation_ids) != V:
            raise DataError("id sequences do not match matrix shape")
        if self.base_probs.shape != (V,) or self.val_labels.shape != (V,):
            raise DataError("validation arrays do not match matrix shape")
        if self.candidate_labels.shape != (M,) or self.candidate_probs.shape != (M,):
            raise DataError("candidate arrays do not match matrix shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def row(self, candidate_id: Hashable) -> np.ndarray:
        return self.values[self.candidate_ids.index(candidate_id)]


@dataclass(frozen=True, eq=False)
class RetrainDelta:
    actual_delta_f: np.ndarray
    retrained_weights: np.ndarray
    base_weights: np.ndarray = field(repr=False)
    converged: bool = True


def _operator(model: TrainedModel, train_data: Dataset, damping: float):
    p = predict_proba_batch(model, train_data)
    d = p * (1.0 - p) / len(train_data)
    X = train_data.X
    shift = model.lam + damping

    def matvec(V):
        XV = X @ V
        return X.T @ (d[:, None] * XV if XV.ndim == 2 else d * XV) + shift * V

    return matvec


def _dense_factor(model, train_data, cfg):
    H = hessian_dense(model, train_data, cap=cfg.dense_cap)
    H[np.diag_indices_from(H)] += cfg.damping
    return scipy.linalg.cho_factor(H)


def solve_hinv(model: TrainedModel, train_data: Dataset, g: np.ndarray,
               cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Solve ``(H + damping I) v = g``; ``g`` may be a ``(dim, k)`` block."""
    if model.lam + cfg.damping <= 0:
        raise ValueError("lam + damping must be positive for a strictly PD Hessian")
    g = np.asarray(g, dtype=np.float64)
    if g.shape[0] != model.dim:
        raise DataError(f"dimension mismatch: model dim {model.dim}, rhs {g.shape[0]}")
    if cfg.method == "dense":
        return scipy.linalg.cho_solve(_dense_factor(model, train_data, cfg), g)
    return conjugate_gradient(_operator(model, train_data, cfg.damping), g,
                              tol=cfg.cg_tol, max_iter=cfg.max_iter_for(model.dim))


def delta_w_for_candidate(model: TrainedModel, train_data: Dataset, z: DataPoint,
                          cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    return -solve_hinv(model, train_data, grad_point(model, z), cfg) / len(train_data)


def _row_scaled(X: sp.csr_matrix, scale: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(sp.diags(scale) @ X)


def influence_matrix(model: TrainedModel, train_data: Dataset, pool: Dataset, val: Dataset,
                     cfg: SolverConfig = SolverConfig(), threads: int = 1) -> InfluenceMatrix:
    """Candidate-by-validation matrix of estimated prediction changes.

    One linear solve is needed per candidate or, equivalently by symmetry of
    the Hessian, per validation point; the smaller count is used.  Solves run
    in fixed column chunks, so results do not depend on ``threads``.
    """
    for d in (pool, val):
        if d.dim != model.dim:
            raise DataError(f"dimension mismatch: model dim {model.dim}, data dim {d.dim}")
    if model.lam + cfg.damping <= 0:
        raise ValueError("lam + damping must be positive for a strictly PD Hessian")
    N = len(train_data)
    p_val = predict_proba_batch(model, val)
    p_pool = predict_proba_batch(model, pool)
    grad_f = _row_scaled(val.X, p_val * (1.0 - p_val))        # V x dim
    grad_l = _row_scaled(pool.X, p_pool - pool.y)             # M x dim
    M, V = len(pool), len(val)

    per_candidate = M <= V
    rhs_rows, other, ids = (grad_l, grad_f, pool.ids) if per_candidate else (grad_f, grad_l, val.ids)
    n_rhs = rhs_rows.shape[0]
    solved = np.zeros((model.dim, n_rhs))

    if cfg.method == "dense":
        factor = _dense_factor(model, train_data, cfg)
        def solve(block):
            return scipy.linalg.cho_solve(factor, block)
    else:
        op = _operator(model, train_data, cfg.damping)
        max_iter = cfg.max_iter_for(model.dim)
        def solve(block):
            return conjugate_gradient(op, block, tol=cfg.cg_tol, max_iter=max_iter)

    def run(start: int) -> None:
        stop = min(start + CHUNK, n_rhs)
        block = rhs_rows[start:stop].T.toarray()
        try:
            solved[:, start:stop] = solve(block)
        except CGNotConverged as exc:
            role = "candidate" if per_candidate else "validation point"
            bad = ids[start + (exc.label or 0)]
            raise InfluenceError(f"solve failed for {role} {bad!r}: {exc}") from exc

    starts = range(0, n_rhs, CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, starts))
    else:
        for s in starts:
            run(s)

    # solved columns are H^{-1} applied to the smaller side; project the other side onto them
    projected = np.asarray(other @ solved) * (-1.0 / N)       # (other rows) x n_rhs
    values = projected.T if per_candidate else projected
    values = np.ascontiguousarray(values)
    return InfluenceMatrix(values, tuple(pool.ids), tuple(val.ids), p_val, val.y.copy(),
                           pool.y.copy(), p_pool)


def delta_f_for_subset(infl: InfluenceMatrix, subset_ids: Iterable[Hashable]) -> np.ndarray:
    """Estimated prediction change from adding a whole subset (sum of rows)."""
    lookup = {cid: i for i, cid in enumerate(infl.candidate_ids)}
    try:
        rows = sorted({lookup[i] for i in subset_ids})
    except KeyError as exc:
        raise KeyError(f"unknown candidate id {exc.args[0]!r}") from None
    acc = np.zeros(infl.values.shape[1])
    for r in rows:
        acc = acc + infl.values[r]
    return acc


def retrain_oracle(train_data: Dataset, subset: Sequence[DataPoint] | Dataset, val: Dataset,
                   cfg: TrainConfig = TrainConfig()) -> RetrainDelta:
    """Ground truth for the estimates: retrain from scratch with ``subset``
    added at weight ``1/N`` and report the actual validation prediction change.
    """
    base = train(train_data, cfg)
    if not isinstance(subset, Dataset):
        subset = Dataset.from_points(list(subset), dim=train_data.dim) if len(subset) else None
    if subset is None or len(subset) == 0:
        new = base
    else:
        combined = Dataset.concat(train_data, subset)
        new = train(combined, TrainConfig(base.lam, cfg.tol, cfg.max_iter), n_normalizer=len(train_data))
    delta = predict_proba_batch(new, val) - predict_proba_batch(base, val)
    return RetrainDelta(delta, new.weights, base.weights, base.converged and new.converged)


# -- persistence --------------------------------------------------------------

_MAGIC = b"ISINFL\0\0"
_VERSION = 1


def _jsonable(ids):
    return [list(i) if isinstance(i, tuple) else i for i in ids]


def _from_json(ids):
    return tuple(tuple(i) if isinstance(i, list) else i for i in ids)


def save_influence(infl: InfluenceMatrix, path: str | Path) -> None:
    """Columnar binary layout: magic, version, header length, JSON header
    (M, V, ids), then little-endian float64 columns base_probs, val_labels,
    candidate_labels, candidate_probs and the row-major value matrix.
    """
    M, V = infl.shape
    header = json.dumps({"M": M, "V": V, "candidate_ids": _jsonable(infl.candidate_ids),
                         "validation_ids": _jsonable(infl.validation_ids)},
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<IQ", _VERSION, len(header)) + header)
        for arr in (infl.base_probs, infl.val_labels, infl.candidate_labels,
                    infl.candidate_probs, infl.values):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_influence(path: str | Path) -> InfluenceMatrix:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise DataError(f"{path}: not an influence matrix file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != _VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    off = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[off:off + hlen])
    off += hlen
    M, V = header["M"], header["V"]
    expected = 8 * (2 * V + 2 * M + M * V)
    if len(raw) - off != expected:
        raise DataError(f"{path}: truncated influence matrix")

    def take(n):
        nonlocal off
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).astype(np.float64)
        off += 8 * n
        return arr

    base_probs, val_labels = take(V), take(V).astype(np.int64)
    cand_labels, cand_probs = take(M).astype(np.int64), take(M)
    values = take(M * V).reshape(M, V)
    return InfluenceMatrix(values, _from_json(header["candidate_ids"]),
                           _from_json(header["validation_ids"]), base_probs, val_labels,
                           cand_labels, cand_probs)

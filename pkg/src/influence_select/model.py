"""L2-regularised binary logistic regression without an implicit intercept.

The training objective is

    R(w) = (1/N) * sum_i loss(z_i, w) + (lam / 2) * ||w||^2

with binary cross-entropy on ``sigmoid(w @ x)``.  Retraining with extra
points (weighted ``1/N`` alongside the original mean loss) is the same
objective with a larger data matrix and ``n_normalizer`` kept at ``N``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .dataset import DataError, DataPoint, Dataset, SparseVector
from .linalg import conjugate_gradient

__all__ = [
    "TrainConfig",
    "TrainedModel",
    "objective",
    "gradient",
    "train",
    "predict_proba",
    "predict_proba_batch",
    "grad_point",
    "hvp",
    "hessian_dense",
    "accuracy",
    "save_model",
    "load_model",
]

log = logging.getLogger(__name__)

DENSE_HESSIAN_CAP = 2000
_MAGIC = b"ISMODEL\0"
_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """``lam=None`` resolves to ``1 / N`` at training time."""

    lam: float | None = None
    tol: float = 1e-8
    max_iter: int = 200
    fit_intercept: bool = False

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")

    def resolve_lam(self, n_train: int) -> float:
        return 1.0 / n_train if self.lam is None else float(self.lam)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    weights: np.ndarray
    lam: float
    n_train: int
    converged: bool = True
    final_grad_norm: float = 0.0
    n_iter: int = 0
    vocab_digest: str = ""

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


def _check_dim(model: TrainedModel, dim: int) -> None:
    if dim != model.dim:
        raise DataError(f"dimension mismatch: model dim {model.dim}, data dim {dim}")


def objective(w: np.ndarray, data: Dataset, lam: float, n_normalizer: int | None = None) -> float:
    n = n_normalizer or len(data)
    z = data.X @ w
    loss = np.logaddexp(0.0, z) - data.y * z
    return float(loss.sum() / n + 0.5 * lam * (w @ w))


def gradient(w: np.ndarray, data: Dataset, lam: float, n_normalizer: int | None = None) -> np.ndarray:
    n = n_normalizer or len(data)
    r = expit(data.X @ w) - data.y
    return data.X.T @ r / n + lam * w


def train(data: Dataset, cfg: TrainConfig, *, n_normalizer: int | None = None,
          w0: np.ndarray | None = None) -> TrainedModel:
    """Minimise the regularised risk by line-searched Newton-CG.

    Starts from zero unless ``w0`` is given (warm starts only change speed:
    the objective is strictly convex when ``lam > 0``).  Non-convergence is
    reported through ``converged=False`` rather than raised.
    """
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    n = n_normalizer or len(data)
    lam = cfg.resolve_lam(n)
    X, y = data.X, data.y
    w = np.zeros(data.dim) if w0 is None else np.array(w0, dtype=np.float64)
    _check_dim(TrainedModel(w, lam, n), data.dim)

    z = X @ w
    f = float((np.logaddexp(0.0, z) - y * z).sum() / n + 0.5 * lam * (w @ w))
    it = 0
    while True:
        p = expit(z)
        g = X.T @ (p - y) / n + lam * w
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.tol or it >= cfg.max_iter:
            break
        d = p * (1.0 - p) / n

        def matvec(V, d=d):
            XV = X @ V
            return X.T @ (d[:, None] * XV if XV.ndim == 2 else d * XV) + lam * V

        eta = min(0.5, np.sqrt(gnorm))
        step = conjugate_gradient(matvec, -g, tol=eta, max_iter=max(50, 2 * data.dim),
                                  raise_on_fail=False)
        slope = float(g @ step)
        t = 1.0
        accepted = False
        for _ in range(40):
            w_new = w + t * step
            z_new = X @ w_new
            f_new = float((np.logaddexp(0.0, z_new) - y * z_new).sum() / n
                          + 0.5 * lam * (w_new @ w_new))
            if f_new <= f + 1e-4 * t * slope:
                accepted = True
                break
            if t == 1.0:
                # objective differences drown in rounding near the optimum
                g_new = X.T @ (expit(z_new) - y) / n + lam * w_new
                if np.linalg.norm(g_new) < gnorm:
                    accepted = True
                    break
            t *= 0.5
        it += 1
        if not accepted:
            log.warning("line search stalled at iteration %d (|g| = %.3e)", it, gnorm)
            break
        w, z, f = w_new, z_new, f_new
    converged = gnorm <= cfg.tol
    if not converged:
        log.warning("training stopped after %d iterations with |g| = %.3e", it, gnorm)
    return TrainedModel(w, lam, n, converged, gnorm, it)


def predict_proba(model: TrainedModel, x: SparseVector) -> float:
    _check_dim(model, x.dim)
    return float(expit(x.dot(model.weights)))


def predict_proba_batch(model: TrainedModel, data: Dataset) -> np.ndarray:
    _check_dim(model, data.dim)
    return expit(data.X @ model.weights)


def grad_point(model: TrainedModel, z: DataPoint) -> np.ndarray:
    """Loss gradient of a single point; the regulariser is not included."""
    resid = predict_proba(model, z.features) - z.label
    out = np.zeros(model.dim)
    out[z.features.indices] = resid * z.features.values
    return out


def hvp(model: TrainedModel, data: Dataset, v: np.ndarray) -> np.ndarray:
    """Product of the training-risk Hessian at ``model.weights`` with ``v``.

    ``v`` may be a ``(dim, k)`` block.  The Hessian is never formed.
    """
    _check_dim(model, data.dim)
    if v.shape[0] != model.dim:
        raise DataError(f"dimension mismatch: model dim {model.dim}, vector {v.shape[0]}")
    p = predict_proba_batch(model, data)
    d = p * (1.0 - p) / len(data)
    Xv = data.X @ v
    Xv = d[:, None] * Xv if Xv.ndim == 2 else d * Xv
    return data.X.T @ Xv + model.lam * v


def hessian_dense(model: TrainedModel, data: Dataset, cap: int = DENSE_HESSIAN_CAP) -> np.ndarray:
    _check_dim(model, data.dim)
    if model.dim > cap:
        raise ValueError(f"dim {model.dim} exceeds dense cap {cap}; use hvp")
    p = predict_proba_batch(model, data)
    d = p * (1.0 - p) / len(data)
    H = (data.X.T @ sp.diags(d) @ data.X).toarray()
    H = 0.5 * (H + H.T)
    H[np.diag_indices_from(H)] += model.lam
    return H


def accuracy(model: TrainedModel, data: Dataset, tau: float = 0.5) -> float:
    """Fraction correct; a probability of exactly ``tau`` predicts class 1."""
    if len(data) == 0:
        raise DataError("accuracy of an empty dataset is undefined")
    pred = (predict_proba_batch(model, data) >= tau).astype(np.int64)
    return float(np.mean(pred == data.y))


# -- checkpoints --------------------------------------------------------------

_HEADER = struct.Struct("<8sIdQQ?dQ64s")


def save_model(model: TrainedModel, path: str | Path) -> None:
    digest = model.vocab_digest.encode("ascii").ljust(64, b"\0")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, model.lam, model.n_train, model.dim,
                              model.converged, model.final_grad_norm, model.n_iter, digest))
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_model(path: str | Path) -> TrainedModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated model file")
    magic, version, lam, n_train, dim, conv, gnorm, n_iter, digest = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise DataError(f"{path}: not a model checkpoint (version {version})")
    body = raw[_HEADER.size:]
    if len(body) != 8 * dim:
        raise DataError(f"{path}: expected {dim} weights")
    w = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return TrainedModel(w, lam, n_train, conv, gnorm, n_iter, digest.rstrip(b"\0").decode("ascii"))

"""Conjugate gradients for symmetric positive definite operators."""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["CGNotConverged", "conjugate_gradient"]


class CGNotConverged(RuntimeError):
    def __init__(self, residual: float, iterations: int, label=None):
        self.residual = residual
        self.iterations = iterations
        self.label = label
        where = f" (column {label})" if label is not None else ""
        super().__init__(f"CG did not converge{where} after {iterations} iterations "
                         f"(relative residual {residual:.3e})")


def conjugate_gradient(matvec: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       tol: float = 1e-8, max_iter: int | None = None,
                       raise_on_fail: bool = True) -> np.ndarray:
    """Solve ``A x = b`` from a zero initial guess.

    ``b`` may be a vector or a ``(dim, k)`` block of independent right-hand
    sides; ``matvec`` must then accept a block as well.  Columns are frozen
    once ``||r|| <= tol * ||b||``, so each column's iterates do not depend on
    the other columns in the block.
    """
    vector = b.ndim == 1
    B = b[:, None] if vector else b
    dim, k = B.shape
    if max_iter is None:
        max_iter = 10 * dim
    X = np.zeros_like(B, dtype=np.float64)
    R = np.array(B, dtype=np.float64)
    bnorm = np.linalg.norm(B, axis=0)
    rr = np.einsum("ij,ij->j", R, R)
    active = np.sqrt(rr) > tol * bnorm
    P = R.copy()
    it = 0
    while active.any() and it < max_iter:
        cols = np.flatnonzero(active)
        Pa = P[:, cols]
        AP = matvec(Pa)
        pap = np.einsum("ij,ij->j", Pa, AP)
        alpha = rr[cols] / pap
        X[:, cols] += alpha * Pa
        R[:, cols] -= alpha * AP
        rr_new = np.einsum("ij,ij->j", R[:, cols], R[:, cols])
        P[:, cols] = R[:, cols] + (rr_new / rr[cols]) * Pa
        rr[cols] = rr_new
        active[cols] = np.sqrt(rr_new) > tol * bnorm[cols]
        it += 1
    if active.any() and raise_on_fail:
        rel = np.sqrt(rr[active]) / bnorm[active]
        worst = int(np.flatnonzero(active)[np.argmax(rel)])
        raise CGNotConverged(float(rel.max()), it, label=None if vector else worst)
    return X[:, 0] if vector else X

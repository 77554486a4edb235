"""Dense symmetric eigensolver: cyclic Jacobi with round-robin pair ordering.

Each sweep visits every (p, q) pair once.  Pairs are scheduled in N-1
rounds of N/2 disjoint rotations (the round-robin tournament order), so a
whole round is applied with vectorized row/column updates.  Disjoint
rotations commute and do not touch each other's pivots, so this is an
ordinary cyclic Jacobi with a fixed, deterministic visiting order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

TOL = 1e-12
MAX_SWEEPS = 100
SYM_TOL = 1e-10


class NotSymmetricError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    pass


@dataclass
class AwcDecomposition:
    eigenvalues: np.ndarray   # descending
    eigenvectors: np.ndarray  # column i pairs with eigenvalues[i]
    sweeps: int = 0

    @property
    def mean_eigenvalue(self) -> float:
        return float(np.mean(self.eigenvalues))

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def round_robin(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Rounds of disjoint (p, q) pairs, p < q, covering all pairs of range(n) once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        if ps:
            rounds.append((np.array(ps), np.array(qs)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def offdiag_norm(a: np.ndarray) -> float:
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.linalg.norm(off))


def eig_sym(matrix, tol: float = TOL, max_sweeps: int = MAX_SWEEPS) -> AwcDecomposition:
    """Full eigendecomposition of a real symmetric matrix, eigenvalues descending."""
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    n = a.shape[0]
    scale = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYM_TOL * scale:
        raise NotSymmetricError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    vt = np.eye(n)
    norm = np.linalg.norm(a)
    sweeps = 0
    if norm > 0 and n > 1:
        rounds = round_robin(n)
        while offdiag_norm(a) > tol * norm:
            if sweeps == max_sweeps:
                raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
            for p, q in rounds:
                a = _rotate(a, vt, p, q)
            sweeps += 1
    evals = np.diag(a).copy()
    order = np.argsort(-evals, kind="stable")
    return AwcDecomposition(evals[order], np.ascontiguousarray(vt[order].T), sweeps)


def _rotate(a: np.ndarray, vt: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Apply one round of rotations; returns the updated (C-contiguous) matrix.

    ``vt`` holds the eigenvector estimates as rows and is updated in place.
    """
    apq = a[p, q]
    active = apq != 0.0
    if not active.any():
        return a
    p, q, apq = p[active], q[active], apq[active]
    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
    t = np.sign(theta) / (np.abs(theta) + np.sqrt(1.0 + theta * theta))
    t[theta == 0.0] = 1.0
    c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
    s = t[:, None] * c
    # J^T A J as two row passes: B = J^T A, then J^T B^T (= B J by symmetry).
    _rows(a, p, q, c, s)
    a = np.ascontiguousarray(a.T)
    _rows(a, p, q, c, s)
    a[p, q] = 0.0
    a[q, p] = 0.0
    _rows(vt, p, q, c, s)
    return a


def _rows(m, p, q, c, s):
    rp, rq = m[p], m[q]
    m[p] = c * rp - s * rq
    m[q] = s * rp + c * rq

"""Dense linear algebra helpers: thin SVD and smallest symmetric eigenvalue."""

from __future__ import annotations

import numpy as np

__all__ = ["ConvergenceError", "SymmetryError", "svd_thin", "eig_sym_min"]


class ConvergenceError(RuntimeError):
    """Raised when an iterative factorization hits its sweep cap."""


class SymmetryError(ValueError):
    """Raised when a matrix expected to be symmetric is not."""


def _round_robin(n: int):
    """Yield n-1 rounds of disjoint index pairs covering every pair once."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    for _ in range(m - 1):
        pairs = [(players[k], players[m - 1 - k]) for k in range(m // 2)]
        pairs = [(i, j) if i < j else (j, i) for i, j in pairs if i >= 0 and j >= 0]
        if pairs:
            yield np.array(pairs, dtype=np.intp).T
        players = [players[0], players[-1]] + players[1:-1]


def _complete_basis(U: np.ndarray, good: np.ndarray) -> np.ndarray:
    # replace columns flagged not-good with orthonormal completions
    m, k = U.shape
    basis = [U[:, i] for i in range(k) if good[i]]
    filled = U.copy()
    e = 0
    for i in range(k):
        if good[i]:
            continue
        while e < m:
            cand = np.zeros(m)
            cand[e] = 1.0
            e += 1
            for _ in range(2):
                for b in basis:
                    cand -= (b @ cand) * b
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                cand /= norm
                basis.append(cand)
                filled[:, i] = cand
                break
    return filled


def svd_thin(X, tol: float = 1e-12, max_sweeps: int = 80):
    """Thin singular value decomposition by one-sided Jacobi rotations.

    Parameters
    ----------
    X : array_like, shape (m, n)
    tol : float
        Rotations stop once every column pair has relative inner product
        ``|a_i . a_j| / (|a_i| |a_j|)`` at most ``tol``.
    max_sweeps : int
        Sweep cap; exceeding it raises :class:`ConvergenceError`.

    Returns
    -------
    U : ndarray, shape (m, k)
    s : ndarray, shape (k,)
        Non-increasing, non-negative.
    Vt : ndarray, shape (k, n)
        With ``k = min(m, n)`` and ``X ~= U @ diag(s) @ Vt``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix has non-finite entries")
    m, n = X.shape
    if m < n:
        V, s, Ut = svd_thin(X.T, tol=tol, max_sweeps=max_sweeps)
        return Ut.T, s, V.T

    A = X.copy()
    V = np.eye(n)
    rounds = list(_round_robin(n))
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for I, J in rounds:
            ai, aj = A[:, I], A[:, J]
            alpha = np.einsum("ij,ij->j", ai, ai)
            beta = np.einsum("ij,ij->j", aj, aj)
            gamma = np.einsum("ij,ij->j", ai, aj)
            scale = np.sqrt(alpha * beta)
            active = (scale > 0) & (np.abs(gamma) > tol * scale)
            if not active.any():
                continue
            rotated = True
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            A[:, I], A[:, J] = c * ai - s * aj, s * ai + c * aj
            vi, vj = V[:, I], V[:, J]
            V[:, I], V[:, J] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            break
    else:
        raise ConvergenceError(f"one-sided Jacobi did not converge after {max_sweeps} sweeps")

    sv = np.linalg.norm(A, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv, A, V = sv[order], A[:, order], V[:, order]
    cutoff = (sv[0] if sv.size else 0.0) * max(m, n) * np.finfo(float).eps
    good = sv > cutoff
    U = np.zeros_like(A)
    U[:, good] = A[:, good] / sv[good]
    if not good.all():
        sv = np.where(good, sv, 0.0)
        U = _complete_basis(U, good)
    return U, sv, V.T


def eig_sym_min(A, sym_tol: float = 1e-12) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    if asym > sym_tol * max(1.0, np.max(np.abs(A))):
        raise SymmetryError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])

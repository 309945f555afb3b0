"""Sparse symmetric storage, zero-fill incomplete Cholesky, Woodbury solves
and extreme eigenvalues of symmetric operators.

Everything above this module (covariances, preconditioners, spectral checks)
talks to matrices through :class:`SparseSym` and the factor types defined here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Union

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

log = logging.getLogger(__name__)

DENSE_THRESHOLD = 2000


class FactorizationError(RuntimeError):
    pass


class SingularCapacitanceError(np.linalg.LinAlgError):
    def __init__(self, cond):
        super().__init__(f"Woodbury capacitance matrix is singular (cond ~ {cond:.3e})")
        self.cond = cond


class EigenNoConvergence(RuntimeError):
    def __init__(self, message, best_estimate):
        super().__init__(message)
        self.best_estimate = best_estimate


class SparseSym:
    """Symmetric matrix held in CSR with the full (both-triangle) pattern.

    The constructor mirrors the input (``(A + A^T)/2``), so stored values and
    pattern are exactly symmetric.
    """

    def __init__(self, matrix, *, symmetrize="average"):
        if isinstance(matrix, SparseSym):
            matrix = matrix.csr
        A = sps.csr_matrix(matrix, dtype=float, copy=True)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        if symmetrize == "average":
            A = (A + A.T) * 0.5
        elif symmetrize == "check":
            if A.nnz and abs(A - A.T).max() != 0.0:
                raise ValueError("matrix is not exactly symmetric")
        else:
            raise ValueError(f"unknown symmetrize mode {symmetrize!r}")
        # exact value symmetry makes the stored pattern symmetric as well
        A = sps.csr_matrix(A)
        A.sum_duplicates()
        A.eliminate_zeros()
        A.sort_indices()
        self.csr = A
        self.n = A.shape[0]

    # construction helpers -------------------------------------------------
    @classmethod
    def from_dense(cls, dense, drop_tol=0.0):
        dense = np.asarray(dense, dtype=float)
        dense = np.where(np.abs(dense) > drop_tol, dense, 0.0)
        return cls(sps.csr_matrix(dense))

    @classmethod
    def identity(cls, n):
        return cls(sps.identity(n, format="csr"))

    # basic linear algebra -----------------------------------------------
    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def nnz(self):
        return self.csr.nnz

    def __matmul__(self, x):
        return self.csr @ x

    def matvec(self, x):
        return self.csr @ x

    def diagonal(self):
        return self.csr.diagonal()

    def toarray(self):
        return self.csr.toarray()

    def tril(self):
        """Lower triangle (diagonal included) in sorted CSR."""
        L = sps.tril(self.csr, format="csr")
        L.sort_indices()
        return L

    def shifted(self, alpha):
        """Return ``A + alpha * I`` with the same pattern."""
        return SparseSym(self.csr + alpha * sps.identity(self.n, format="csr"))

    def submatrix(self, rows):
        rows = np.asarray(rows)
        return SparseSym(self.csr[rows][:, rows])

    def __repr__(self):
        return f"SparseSym(n={self.n}, nnz={self.nnz})"


# ---------------------------------------------------------------------------
# Zero-fill incomplete Cholesky
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _ic0_kernel(indptr, indices, data, shift):
    """IC(0) on a sorted lower-triangular CSR pattern (diagonal last in row).

    Returns (values, ok). Row-oriented: entry (i, k) of the factor is
    (a_ik - sum_m g_im g_km) / g_kk, restricted to the pattern of tril(A).
    """
    n = indptr.size - 1
    g = np.zeros_like(data)
    work = np.zeros(n)
    for i in range(n):
        start, stop = indptr[i], indptr[i + 1]
        if stop == start or indices[stop - 1] != i:
            return g, False
        for p in range(start, stop - 1):
            k = indices[p]
            acc = data[p]
            # row k of the factor: entries m < k are in [indptr[k], indptr[k+1]-1)
            for q in range(indptr[k], indptr[k + 1] - 1):
                acc -= g[q] * work[indices[q]]
            gk = g[indptr[k + 1] - 1]
            val = acc / gk
            g[p] = val
            work[k] = val
        d = data[stop - 1] + shift
        for p in range(start, stop - 1):
            d -= g[p] * g[p]
        for p in range(start, stop - 1):
            work[indices[p]] = 0.0
        if not d > 0.0:
            return g, False
        g[stop - 1] = np.sqrt(d)
    return g, True


@numba.njit(cache=True)
def _lower_solve(indptr, indices, data, b):
    n = indptr.size - 1
    x = b.copy()
    for i in range(n):
        start, stop = indptr[i], indptr[i + 1]
        for p in range(start, stop - 1):
            x[i] -= data[p] * x[indices[p]]
        x[i] /= data[stop - 1]
    return x


@numba.njit(cache=True)
def _upper_solve(indptr, indices, data, b):
    # upper-triangular CSR, diagonal first in each row
    n = indptr.size - 1
    x = b.copy()
    for i in range(n - 1, -1, -1):
        start, stop = indptr[i], indptr[i + 1]
        for p in range(start + 1, stop):
            x[i] -= data[p] * x[indices[p]]
        x[i] /= data[start]
    return x


@numba.njit(cache=True)
def _lower_solve_multi(indptr, indices, data, B):
    n = indptr.size - 1
    X = B.copy()
    m = X.shape[1]
    for i in range(n):
        start, stop = indptr[i], indptr[i + 1]
        for p in range(start, stop - 1):
            v = data[p]
            j = indices[p]
            for c in range(m):
                X[i, c] -= v * X[j, c]
        dinv = 1.0 / data[stop - 1]
        for c in range(m):
            X[i, c] *= dinv
    return X


@numba.njit(cache=True)
def _upper_solve_multi(indptr, indices, data, B):
    n = indptr.size - 1
    X = B.copy()
    m = X.shape[1]
    for i in range(n - 1, -1, -1):
        start, stop = indptr[i], indptr[i + 1]
        for p in range(start + 1, stop):
            v = data[p]
            j = indices[p]
            for c in range(m):
                X[i, c] -= v * X[j, c]
        dinv = 1.0 / data[start]
        for c in range(m):
            X[i, c] *= dinv
    return X


@dataclass(frozen=True)
class IncChol:
    """Lower-triangular factor ``G`` with ``G G^T ~ A`` on the pattern of tril(A)."""

    G: sps.csr_matrix
    shift: float = 0.0
    _Gt: sps.csr_matrix = field(repr=False, default=None)

    def __post_init__(self):
        if self._Gt is None:
            Gt = sps.csr_matrix(self.G.T)
            Gt.sort_indices()
            object.__setattr__(self, "_Gt", Gt)

    @property
    def n(self):
        return self.G.shape[0]

    def solve(self, b):
        return solve_with_factor(self, b)

    def operator(self):
        """Dense ``G G^T`` (desk-scale use only)."""
        Gd = self.G.toarray()
        return Gd @ Gd.T


def ichol_zero_fill(A: SparseSym, *, max_attempts=40) -> IncChol:
    """Incomplete Cholesky with no fill-in.

    On breakdown the factorization is retried on ``A + alpha * max|diag(A)| I``
    with alpha starting at 1e-3 and doubling; the shift used is recorded on the
    returned factor.
    """
    if not isinstance(A, SparseSym):
        A = SparseSym(A)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise ValueError("ichol_zero_fill needs a strictly positive diagonal")
    L = A.tril()
    indptr = L.indptr.astype(np.int64)
    indices = L.indices.astype(np.int64)
    data = L.data.astype(float)
    shift = 0.0
    alpha = 1e-3
    scale = float(np.max(np.abs(diag)))
    for _ in range(max_attempts):
        g, ok = _ic0_kernel(indptr, indices, data, shift)
        if ok:
            if shift:
                log.info("ichol_zero_fill: breakdown avoided with diagonal shift %.3e", shift)
            G = sps.csr_matrix((g, indices, indptr), shape=L.shape)
            return IncChol(G=G, shift=shift)
        shift = alpha * scale
        alpha *= 2.0
    raise FactorizationError(f"ichol_zero_fill failed after shift {shift:.3e}")


def solve_with_factor(f: IncChol, b):
    """Return ``(G G^T)^{-1} b``; ``b`` may be a vector or an (n, m) block."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise ValueError(f"dimension mismatch: factor is {f.n}, rhs has {b.shape[0]} rows")
    G, Gt = f.G, f._Gt
    if b.ndim == 1:
        y = _lower_solve(G.indptr, G.indices, G.data, b)
        return _upper_solve(Gt.indptr, Gt.indices, Gt.data, y)
    y = _lower_solve_multi(G.indptr, G.indices, G.data, np.ascontiguousarray(b))
    return _upper_solve_multi(Gt.indptr, Gt.indices, Gt.data, y)


# ---------------------------------------------------------------------------
# Low-rank update through the Woodbury identity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LowRankUpdateInverse:
    """Applies ``(G G^T + V diag(c) V^T)^{-1}`` using the base factor."""

    base: IncChol
    V: np.ndarray
    coeffs: np.ndarray
    _W: np.ndarray = field(repr=False, default=None)
    _cap: tuple = field(repr=False, default=None)

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if V.shape[0] != self.base.n:
            V = V.reshape(self.base.n, -1)
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "coeffs", c)
        m = V.shape[1]
        if c.shape != (m,):
            raise ValueError("need one update coefficient per column of V")
        if m == 0:
            return
        if np.any(c == 0):
            raise SingularCapacitanceError(np.inf)
        W = self.base.solve(V) if m > 1 else self.base.solve(V[:, 0])[:, None]
        K = np.diag(1.0 / c) + V.T @ W
        cond = np.linalg.cond(K)
        if not np.isfinite(cond) or cond > 1e14:
            raise SingularCapacitanceError(cond)
        object.__setattr__(self, "_W", W)
        object.__setattr__(self, "_cap", sla.lu_factor(K))

    @property
    def rank(self):
        return self.V.shape[1]

    def solve(self, b):
        return woodbury_solve(self, b)


def woodbury_solve(w: LowRankUpdateInverse, b):
    y = w.base.solve(b)
    if w.rank == 0:
        return y
    t = sla.lu_solve(w._cap, w.V.T @ y)
    return y - w._W @ t


# ---------------------------------------------------------------------------
# Extreme eigenvalues
# ---------------------------------------------------------------------------

Operator = Union[np.ndarray, sps.spmatrix, SparseSym, Callable[[np.ndarray], np.ndarray]]


def _as_callable(op):
    if callable(op) and not isinstance(op, (np.ndarray, sps.spmatrix, SparseSym)):
        return op
    return lambda x: op @ x


def materialize(op: Operator, n: int) -> np.ndarray:
    """Dense matrix of a linear operator, column by column."""
    if isinstance(op, np.ndarray):
        return np.array(op, dtype=float)
    if isinstance(op, SparseSym):
        return op.toarray()
    if sps.issparse(op):
        return op.toarray()
    out = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        out[:, j] = op(e)
        e[j] = 0.0
    return out


def _select(vals, which, k):
    vals = np.sort(vals)
    if which == "largest":
        return vals[-k:][::-1]
    return vals[:k]


def lanczos_extremes(apply, n, which="smallest", k=1, *, tol=1e-8, maxiter=None, seed=0,
                     return_vectors=False):
    """Lanczos with full reorthogonalization.

    Returns ``(values, converged)``, or ``(values, vectors, converged)`` with
    ``return_vectors``; raises :class:`EigenNoConvergence` when the iteration
    cap is hit.
    """
    maxiter = min(n, maxiter or 600)
    rng = np.random.default_rng(seed)
    Q = np.zeros((n, maxiter + 1))
    q = rng.standard_normal(n)
    Q[:, 0] = q / np.linalg.norm(q)
    alpha = np.zeros(maxiter)
    beta = np.zeros(maxiter)
    best = None
    for j in range(maxiter):
        w = apply(Q[:, j])
        alpha[j] = Q[:, j] @ w
        w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        beta[j] = np.linalg.norm(w)
        m = j + 1
        if m >= k and (m % 5 == 0 or beta[j] < 1e-14 or m == maxiter):
            theta, S = sla.eigh_tridiagonal(alpha[:m], beta[: m - 1])
            order = np.argsort(theta)
            idx = order[-k:][::-1] if which == "largest" else order[:k]
            best = theta[idx]
            resid = np.abs(beta[j] * S[-1, idx])
            scale = np.maximum(np.abs(best), 1.0)
            if beta[j] < 1e-14 or np.all(resid <= tol * scale) or m == n:
                if return_vectors:
                    return best, Q[:, :m] @ S[:, idx], True
                return best, True
        if beta[j] < 1e-14:
            break
        Q[:, j + 1] = w / beta[j]
    raise EigenNoConvergence(f"Lanczos did not converge in {maxiter} steps", best)


def sym_eig_extremes(op: Operator, n: int, which="smallest", k=1, *,
                     dense_threshold=DENSE_THRESHOLD, tol=1e-8, maxiter=None):
    """Extreme eigenvalues of a symmetric operator.

    ``which`` is ``"smallest"``, ``"largest"`` or ``"k-smallest"`` (with
    ``k``).  Results are sorted from the extreme inwards.  Dense
    ``eigvalsh`` is used up to ``dense_threshold``; beyond that a fully
    reorthogonalized Lanczos iteration.
    """
    if which == "k-smallest":
        which = "smallest"
    elif which not in ("smallest", "largest"):
        raise ValueError(f"unknown selector {which!r}")
    if n <= dense_threshold:
        dense = materialize(op, n)
        vals = np.linalg.eigvalsh(0.5 * (dense + dense.T))
        return _select(vals, which, k)
    vals, _ = lanczos_extremes(_as_callable(op), n, which, k, tol=tol, maxiter=maxiter)
    return np.asarray(vals)


def sym_eig_pairs(op: Operator, n: int, k=1, *, dense_threshold=DENSE_THRESHOLD, tol=1e-10):
    """The ``k`` smallest eigenpairs ``(values, vectors)``, ascending."""
    if n <= dense_threshold:
        dense = materialize(op, n)
        vals, vecs = np.linalg.eigh(0.5 * (dense + dense.T))
        return vals[:k], vecs[:, :k]
    vals, vecs, _ = lanczos_extremes(_as_callable(op), n, "smallest", k, tol=tol,
                                     return_vectors=True)
    return np.asarray(vals), vecs

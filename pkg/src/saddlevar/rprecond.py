"""Approximations ``R_hat`` of a correlated observation-error covariance.

Five variants share one interface (:class:`RHat`):

``diag``
    the diagonal of ``R_i``;
``block``
    ``R_i`` with the coupling between selected groups of blocks removed;
``rr``
    ridge regression, ``R_i + gamma I``;
``me``
    minimum eigenvalue, every eigenvalue below ``T`` raised to ``T``;
``exact``
    ``R_i`` itself.

Each carries the matrix it represents (``matrix``, used for exact algebra)
and a realized inverse (``solve``), which goes through incomplete Cholesky
for every correlated variant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps

from .sparse_core import (LowRankUpdateInverse, SparseSym, ichol_zero_fill, sym_eig_extremes,
                          sym_eig_pairs)

log = logging.getLogger(__name__)

VARIANTS = ("diag", "block", "rr", "me", "exact")


@dataclass(frozen=True)
class RHat:
    """An approximation of ``R_i`` together with the means to invert it.

    Attributes
    ----------
    variant : str
    matrix : SparseSym or ndarray
        The represented matrix (dense only for the ``me`` variant).
    solve : callable
        Realized inverse-apply; accepts ``(p,)`` or ``(p, m)`` arrays.
    params : dict
        Chosen parameters (``gamma``, ``T``, block layout, ...).
    flags : tuple of str
        Conditions worth reporting, e.g. a degenerate ``T``.
    realized : callable
        Returns the dense matrix whose inverse ``solve`` applies, i.e. the
        represented matrix with factorization error included.
    """

    variant: str
    matrix: object
    solve: Callable = field(repr=False)
    params: dict = field(default_factory=dict)
    flags: tuple = ()
    realized: Callable = field(default=None, repr=False)

    @property
    def p(self):
        return self.matrix.shape[0]

    def dense(self):
        M = self.matrix
        return M.toarray() if isinstance(M, SparseSym) else np.array(M, dtype=float)

    def realized_matrix(self):
        return self.dense() if self.realized is None else self.realized()

    def realized_inverse(self):
        """Dense matrix of the realized inverse-apply (desk-scale use only)."""
        return self.solve(np.eye(self.p))


def _as_sym(R):
    return R if isinstance(R, SparseSym) else SparseSym(R)


# ---------------------------------------------------------------------------
# Diagonal
# ---------------------------------------------------------------------------


def make_diag(R) -> RHat:
    R = _as_sym(R)
    d = R.diagonal().copy()
    if np.any(d <= 0):
        raise ValueError("diagonal of R_i must be positive")
    inv = 1.0 / d

    def solve(b):
        b = np.asarray(b, dtype=float)
        return inv * b if b.ndim == 1 else inv[:, None] * b

    return RHat("diag", SparseSym(sps.diags(d, format="csr")), solve)


# ---------------------------------------------------------------------------
# Block (threshold on scaled super-diagonal block norms)
# ---------------------------------------------------------------------------


def superdiag_norms(R, pvec):
    """``||R(block j, block j+1)||_F / sqrt(pvec_j pvec_{j+1})`` for each adjacent pair."""
    R = _as_sym(R).csr
    st = np.concatenate([[0], np.cumsum(pvec)]).astype(int)
    out = np.empty(len(pvec) - 1)
    for j in range(len(pvec) - 1):
        blk = R[st[j]:st[j + 1], st[j + 1]:st[j + 2]]
        out[j] = np.sqrt(blk.multiply(blk).sum() / (pvec[j] * pvec[j + 1]))
    return out


def _split_point(lo, hi, cuts):
    """Index splitting ``[lo, hi)`` near its middle, preferring an existing pvec cut."""
    mid = lo + -(-(hi - lo) // 2)
    inner = [c for c in cuts if lo < c < hi]
    if inner:
        # closest pvec cut to the midpoint; earliest on ties
        return min(inner, key=lambda c: (abs(c - mid), c))
    return mid


def block_layout(norms, pvec, tol, maxsize=None, numproc=None):
    """Super-block boundaries produced by the thresholding algorithm.

    Returns the sorted boundary offsets ``[0, b_1, ..., p]``.  Steps, in
    order: cut wherever the scaled norm is below ``tol``; if the largest
    super-block exceeds ``maxsize``, split it; then if there are more than
    ``numproc`` super-blocks merge the adjacent pair of smallest combined
    size, else if there are fewer than ``numproc - 2`` split the largest.
    Ties resolve to the earliest candidate.
    """
    st = np.concatenate([[0], np.cumsum(pvec)]).astype(int)
    p = int(st[-1])
    pcuts = [int(c) for c in st[1:-1]]
    bounds = [0] + [int(st[j + 1]) for j in range(len(norms)) if norms[j] < tol] + [p]

    def sizes():
        return np.diff(bounds)

    def split_largest():
        sz = sizes()
        i = int(np.argmax(sz))
        if sz[i] < 2:
            return
        c = _split_point(bounds[i], bounds[i + 1], pcuts)
        bounds.insert(i + 1, c)

    if maxsize is not None and sizes().max() > maxsize:
        split_largest()
    if numproc is not None:
        nb = len(bounds) - 1
        if nb > numproc and nb > 1:
            sz = sizes()
            pair = sz[:-1] + sz[1:]
            i = int(np.argmin(pair))
            del bounds[i + 1]
        elif nb < numproc - 2:
            split_largest()
    return bounds


def make_block(R, pvec, tol=None, maxsize=None, numproc=None) -> RHat:
    """Block-diagonal part of ``R_i`` over the super-blocks from :func:`block_layout`.

    ``tol`` defaults to 0.1 times the largest scaled super-diagonal norm.
    """
    R = _as_sym(R)
    pvec = tuple(int(v) for v in pvec)
    if sum(pvec) != R.n:
        raise ValueError(f"pvec sums to {sum(pvec)}, expected {R.n}")
    norms = superdiag_norms(R, pvec)
    if tol is None:
        tol = 0.1 * float(norms.max()) if norms.size else 0.0
    bounds = block_layout(norms, pvec, tol, maxsize, numproc)
    csr = R.csr
    blocks = [SparseSym(csr[a:b, a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    factors = [ichol_zero_fill(blk) for blk in blocks]
    matrix = SparseSym(sps.block_diag([b.csr for b in blocks], format="csr"))

    def solve(b):
        b = np.asarray(b, dtype=float)
        out = np.empty_like(b)
        # blocks are independent; serial order is the reference
        for (a, e), f in zip(zip(bounds[:-1], bounds[1:]), factors):
            out[a:e] = f.solve(b[a:e])
        return out

    params = dict(tol=tol, maxsize=maxsize, numproc=numproc, bounds=tuple(bounds),
                  norms=tuple(float(v) for v in norms))

    def realized():
        return sps.block_diag([f.operator() for f in factors]).toarray()

    return RHat("block", matrix, solve, params, realized=realized)


# ---------------------------------------------------------------------------
# Ridge regression
# ---------------------------------------------------------------------------


def auto_gamma(R, rule="lambda_min"):
    """``lambda_min(R_i)`` (default) or the constant 1.0 (``rule="one"``)."""
    if rule == "one":
        return 1.0
    if rule != "lambda_min":
        raise ValueError(f"unknown gamma rule {rule!r}")
    R = _as_sym(R)
    return float(sym_eig_extremes(R, R.n, "smallest")[0])


def make_rr(R, gamma=None) -> RHat:
    R = _as_sym(R)
    if gamma is None:
        gamma = auto_gamma(R)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    shifted = R.shifted(gamma)
    f = ichol_zero_fill(shifted)
    return RHat("rr", shifted, f.solve, dict(gamma=float(gamma), ichol_shift=f.shift),
                realized=f.operator)


# ---------------------------------------------------------------------------
# Minimum eigenvalue
# ---------------------------------------------------------------------------


def auto_T(R):
    """Second-smallest eigenvalue of ``R_i``; the only one when ``R_i`` is 1 x 1."""
    R = _as_sym(R)
    k = min(2, R.n)
    return float(sym_eig_extremes(R, R.n, "k-smallest", k=k)[k - 1])


def make_me(R, T=None, max_rank=None) -> RHat:
    """Raise eigenvalues below ``T`` to ``T`` by a low-rank update.

    The represented matrix is ``R_i + sum_{lambda_k < T} (T - lambda_k) v_k v_k^T``;
    its inverse is applied with the Woodbury identity on top of the
    incomplete Cholesky factor of ``R_i``.  Eigenpairs with ``lambda_k = T``
    contribute nothing and are left out.
    """
    R = _as_sym(R)
    p = R.n
    if T is None:
        T = auto_T(R)
    base = ichol_zero_fill(R)
    k = min(2, p)
    limit = p if max_rank is None else min(p, max_rank + 1)
    while True:
        vals, vecs = sym_eig_pairs(R, p, k=k)
        if vals[-1] >= T * (1 - 1e-10) or k >= limit:
            break
        k = min(2 * k, limit)
    # eigenvalues equal to T up to rounding would add a vanishing update
    keep = (T - vals) > 1e-10 * max(abs(T), 1.0)
    V, lam = vecs[:, keep], vals[keep]
    flags = ()
    if V.shape[1] == 0:
        flags = ("T<=lambda_min",)
        log.warning("make_me: T=%.6g does not exceed lambda_min; R_hat = R_i", T)
        return RHat("me", R, base.solve, dict(T=float(T), rank=0), flags, realized=base.operator)
    coeffs = T - lam
    w = LowRankUpdateInverse(base, V, coeffs)
    matrix = R.toarray() + (V * coeffs) @ V.T
    return RHat("me", matrix, w.solve, dict(T=float(T), rank=int(V.shape[1])), flags,
                realized=lambda: base.operator() + (V * coeffs) @ V.T)


# ---------------------------------------------------------------------------
# Exact
# ---------------------------------------------------------------------------


def make_exact(R) -> RHat:
    R = _as_sym(R)
    f = ichol_zero_fill(R)
    return RHat("exact", R, f.solve, dict(ichol_shift=f.shift), realized=f.operator)


def make_rhat(variant, R, pvec=None, **kw) -> RHat:
    """Dispatch on the variant name."""
    if variant == "diag":
        return make_diag(R)
    if variant == "block":
        if pvec is None:
            raise ValueError("block variant needs pvec")
        return make_block(R, pvec, **kw)
    if variant == "rr":
        return make_rr(R, **kw)
    if variant == "me":
        return make_me(R, **kw)
    if variant == "exact":
        return make_exact(R)
    raise ValueError(f"unknown R_hat variant {variant!r}; choose from {VARIANTS}")

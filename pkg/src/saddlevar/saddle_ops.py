"""Matrix-free saddle-point operator and its two preconditioners.

The unknown is split into three stacks, each with ``N + 1`` time slots:
``x1`` (state increments, size ``s``), ``x2`` (observation multipliers,
size ``p``) and ``x3`` (model multipliers, size ``s``).  The operator is::

    [ D   0   L ] [x1]
    [ 0   R   H ] [x2]
    [ L^T H^T 0 ] [x3]

Every product with a constituent matrix is tallied in :class:`Counters`.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field, fields

import numpy as np
import scipy.sparse as sps

from .covariance import CovarianceSet, ObsOperator
from .lprecond import BlockBandedOperator
from .rprecond import RHat
from .sparse_core import ichol_zero_fill

SHAPES = ("PD", "PI")


@dataclass
class Counters:
    """Running tallies of constituent applications.

    ``R``, ``D``, ``Rhat_inv`` and ``Dhat_inv`` count per-block products
    (one per time slot); ``M`` counts model or adjoint-model block
    products; the remaining fields count whole-operator applications.
    """

    R: int = 0
    Rhat_inv: int = 0
    D: int = 0
    Dhat_inv: int = 0
    M: int = 0
    L: int = 0
    Lt: int = 0
    Lhat_inv: int = 0
    Lhat_inv_t: int = 0
    A: int = 0
    P: int = 0
    _paused: int = field(default=0, repr=False, compare=False)

    def add(self, **kw):
        if self._paused:
            return
        for k, v in kw.items():
            setattr(self, k, getattr(self, k) + v)

    def reset(self):
        for f in fields(self):
            if not f.name.startswith("_"):
                setattr(self, f.name, 0)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.name.startswith("_")}

    @contextlib.contextmanager
    def paused(self):
        self._paused += 1
        try:
            yield self
        finally:
            self._paused -= 1


# ---------------------------------------------------------------------------
# Problem and operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SaddleProblem:
    D: CovarianceSet
    R: CovarianceSet
    H: ObsOperator
    L: BlockBandedOperator

    def __post_init__(self):
        s, p, nb = self.D.n, self.R.n, self.L.nblocks
        if self.D.nslots != nb or self.R.nslots != nb:
            raise ValueError("D, R and L disagree on the number of time slots")
        if self.L.s != s or self.H.s != s or self.H.p != p:
            raise ValueError("inconsistent block sizes among D, R, H and L")

    @property
    def s(self):
        return self.D.n

    @property
    def p(self):
        return self.R.n

    @property
    def N(self):
        return self.L.N

    @property
    def nslots(self):
        return self.N + 1

    @property
    def dim(self):
        return (2 * self.s + self.p) * self.nslots

    def split(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {x.shape}")
        n, s, p = self.nslots, self.s, self.p
        a, b = n * s, n * (s + p)
        return x[:a].reshape(n, s), x[a:b].reshape(n, p), x[b:].reshape(n, s)

    @staticmethod
    def join(X1, X2, X3):
        return np.concatenate([X1.ravel(), X2.ravel(), X3.ravel()])

    def dense_blocks(self):
        """Dense ``D``, ``R``, ``H`` (full kron) and ``L`` for oracles."""
        return (self.D.dense(), self.R.dense(), self.H.kron(self.N).toarray(), self.L.dense())

    def dense(self):
        D, R, H, L = self.dense_blocks()
        ns, npp = D.shape[0], R.shape[0]
        Z = np.zeros
        return np.block([[D, Z((ns, npp)), L],
                         [Z((npp, ns)), R, H],
                         [L.T, H.T, Z((ns, ns))]])


class SaddleOperator:
    """Applies the saddle matrix and counts what each application costs."""

    def __init__(self, problem: SaddleProblem, counters: Counters | None = None):
        self.problem = problem
        self.counters = counters if counters is not None else Counters()

    @property
    def dim(self):
        return self.problem.dim

    def apply(self, x):
        pb, c = self.problem, self.counters
        X1, X2, X3 = pb.split(x)
        n = pb.nslots
        Y1 = pb.D.apply_stack(X1) + pb.L.apply(X3)
        Y2 = pb.R.apply_stack(X2) + pb.H.apply(X3)
        Y3 = pb.L.apply_transpose(X1) + pb.H.apply_transpose(X2)
        c.add(A=1, D=n, R=n, L=1, Lt=1, M=2 * pb.L.model_block_count)
        return pb.join(Y1, Y2, Y3)

    __call__ = apply

    def dense(self):
        return self.problem.dense()


def apply_A(op: SaddleOperator, x):
    return op.apply(x)


# ---------------------------------------------------------------------------
# Preconditioners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DHat:
    """Incomplete Cholesky factors of ``B + delta I`` and ``Q + delta I``, shared over slots."""

    factors: tuple
    slots: tuple
    delta: float = 0.01

    def solve_stack(self, X):
        Y = np.empty_like(X)
        sl = np.asarray(self.slots)
        for b, f in enumerate(self.factors):
            idx = np.flatnonzero(sl == b)
            if idx.size == 1:
                Y[idx[0]] = f.solve(X[idx[0]])
            elif idx.size:
                Y[idx] = f.solve(np.ascontiguousarray(X[idx].T)).T
        return Y

    def dense(self):
        """Dense matrix represented by the factors (``G G^T`` per slot)."""
        return sps.block_diag([self.factors[i].operator() for i in self.slots]).toarray()


def make_dhat(D: CovarianceSet, delta=0.01) -> DHat:
    factors = tuple(ichol_zero_fill(blk.shifted(delta)) for blk in D.blocks)
    return DHat(factors=factors, slots=D.slots, delta=delta)


@dataclass
class PreconditionerSpec:
    """Preconditioner shape plus its ingredients.

    ``shape`` is ``"PD"`` (block diagonal, needs ``dhat``) or ``"PI"``
    (inexact constraint, uses the exact ``D`` and never ``D_hat^{-1}``).
    """

    problem: SaddleProblem
    shape: str
    lhat: BlockBandedOperator
    rhat: RHat
    dhat: DHat | None = None
    counters: Counters = field(default_factory=Counters)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown preconditioner shape {self.shape!r}")
        if self.shape == "PD" and self.dhat is None:
            raise ValueError("block-diagonal preconditioner needs D_hat")
        pb = self.problem
        if self.lhat.s != pb.s or self.lhat.nblocks != pb.nslots:
            raise ValueError("L_hat does not match the problem dimensions")
        if self.rhat.p != pb.p:
            raise ValueError("R_hat does not match the observation dimension")

    @property
    def name(self):
        l = f"LM({self.lhat.k})" if self.lhat.flavor == "LM" else self.lhat.flavor
        return f"{self.shape}[{l}, {self.rhat.variant}]"

    def _rhat_stack(self, X2):
        return self.rhat.solve(np.ascontiguousarray(X2.T)).T

    def apply(self, x):
        return apply_PD_inverse(self, x) if self.shape == "PD" else apply_PI_inverse(self, x)

    __call__ = apply

    # -- dense oracles -------------------------------------------------

    def dense_rhat_inverse(self):
        n = self.problem.nslots
        return np.kron(np.eye(n), np.linalg.inv(self.rhat.realized_matrix()))

    def dense_inverse(self):
        """Dense ``P^{-1}`` assembled from dense pieces (desk scale only)."""
        pb = self.problem
        D, _, _, _ = pb.dense_blocks()
        Lh = self.lhat.dense()
        Lhi = np.linalg.inv(Lh)
        Rhi = self.dense_rhat_inverse()
        ns, npp = D.shape[0], Rhi.shape[0]
        Z = np.zeros
        if self.shape == "PD":
            Dhi = np.linalg.inv(self.dhat.dense())
            S = Lhi @ D @ Lhi.T
            return np.block([[Dhi, Z((ns, npp)), Z((ns, ns))],
                             [Z((npp, ns)), Rhi, Z((npp, ns))],
                             [Z((ns, ns)), Z((ns, npp)), S]])
        P = self.dense_matrix()
        return np.linalg.inv(P)

    def dense_matrix(self):
        """Dense ``P`` itself."""
        pb = self.problem
        D, _, _, _ = pb.dense_blocks()
        Lh = self.lhat.dense()
        Rh = np.kron(np.eye(pb.nslots), self.rhat.realized_matrix())
        ns, npp = D.shape[0], Rh.shape[0]
        Z = np.zeros
        if self.shape == "PD":
            S = Lh.T @ np.linalg.inv(D) @ Lh
            return np.block([[self.dhat.dense(), Z((ns, npp)), Z((ns, ns))],
                             [Z((npp, ns)), Rh, Z((npp, ns))],
                             [Z((ns, ns)), Z((ns, npp)), S]])
        return np.block([[D, Z((ns, npp)), Lh],
                         [Z((npp, ns)), Rh, Z((npp, ns))],
                         [Lh.T, Z((ns, npp)), Z((ns, ns))]])


def apply_PD_inverse(spec: PreconditionerSpec, x):
    """``(D_hat^{-1} x1, R_hat^{-1} x2, L_hat^{-1} D L_hat^{-T} x3)``."""
    if spec.shape != "PD":
        raise ValueError("apply_PD_inverse needs a block-diagonal preconditioner")
    pb, c, lh = spec.problem, spec.counters, spec.lhat
    X1, X2, X3 = pb.split(x)
    n = pb.nslots
    Y1 = spec.dhat.solve_stack(X1)
    Y2 = spec._rhat_stack(X2)
    Y3 = lh.apply_inverse(pb.D.apply_stack(lh.apply_inverse_transpose(X3)))
    c.add(P=1, Dhat_inv=n, Rhat_inv=n, D=n, Lhat_inv=1, Lhat_inv_t=1,
          M=2 * lh.model_block_count)
    return pb.join(Y1, Y2, Y3)


def apply_PI_inverse(spec: PreconditionerSpec, x):
    """Three-step solve with ``[[D, 0, L_hat], [0, R_hat, 0], [L_hat^T, 0, 0]]``."""
    if spec.shape != "PI":
        raise ValueError("apply_PI_inverse needs an inexact-constraint preconditioner")
    pb, c, lh = spec.problem, spec.counters, spec.lhat
    X1, X2, X3 = pb.split(x)
    n = pb.nslots
    C1 = lh.apply_inverse_transpose(X3)
    C2 = spec._rhat_stack(X2)
    C3 = lh.apply_inverse(X1 - pb.D.apply_stack(C1))
    c.add(P=1, Rhat_inv=n, D=n, Lhat_inv=1, Lhat_inv_t=1, M=2 * lh.model_block_count)
    return pb.join(C1, C2, C3)

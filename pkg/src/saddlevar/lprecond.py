"""The model-term operator ``L`` and its approximations.

``L`` is unit lower block-bidiagonal with ``N + 1`` identity blocks on the
diagonal and ``-M_j`` on sub-diagonal ``j`` (coupling block ``j - 1`` to
block ``j``, ``j = 1..N``).  The approximations replace sub-diagonal terms:

* ``L0``: all zero (the identity),
* ``LI``: all ``-I``,
* ``LM(k)``: ``-M_j`` kept unless ``j`` is a multiple of ``k``, so the
  operator splits into chains of at most ``k`` consecutive blocks.

Vectors are flat arrays of length ``(N + 1) s`` or ``(N + 1, s)`` stacks.
"""

from __future__ import annotations

import math

import numpy as np

from .models import TangentLinearBlock

ZERO = "zero"
NEG_I = "neg_identity"


class BlockBandedOperator:
    """Unit lower block-bidiagonal operator.

    Parameters
    ----------
    s : int
        Block size.
    subdiag : sequence of length N
        Entry ``j - 1`` describes sub-diagonal ``j``: :data:`ZERO`,
        :data:`NEG_I` or a :class:`TangentLinearBlock` standing for ``-M_j``.
    flavor : str
        ``"exact"``, ``"L0"``, ``"LI"`` or ``"LM"``.
    k : int, optional
        Chain length for the ``LM`` flavor.
    """

    def __init__(self, s, subdiag, flavor="exact", k=None):
        self.s = int(s)
        self.subdiag = tuple(subdiag)
        self.flavor = flavor
        self.k = k
        for e in self.subdiag:
            if isinstance(e, TangentLinearBlock):
                if e.s != self.s:
                    raise ValueError("model block size does not match s")
            elif e not in (ZERO, NEG_I):
                raise ValueError(f"unknown sub-diagonal entry {e!r}")
        self._chains = self._find_chains()

    # -- structure -------------------------------------------------------

    @property
    def N(self):
        return len(self.subdiag)

    @property
    def nblocks(self):
        return self.N + 1

    @property
    def dim(self):
        return self.nblocks * self.s

    @property
    def model_block_count(self):
        """Number of sub-diagonals holding a model block (model matvecs per apply)."""
        return sum(isinstance(e, TangentLinearBlock) for e in self.subdiag)

    def _find_chains(self):
        chains, start = [], 0
        for j, e in enumerate(self.subdiag, start=1):
            if e == ZERO:
                chains.append(range(start, j))
                start = j
        chains.append(range(start, self.nblocks))
        return tuple(chains)

    def chain_partition(self):
        """Block-index ranges that are decoupled from each other."""
        return list(self._chains)

    def __repr__(self):
        tag = f"LM({self.k})" if self.flavor == "LM" else self.flavor
        return f"BlockBandedOperator({tag}, s={self.s}, N={self.N})"

    # -- helpers ---------------------------------------------------------

    def _stack(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape == (self.dim,):
            return x.reshape(self.nblocks, self.s), True
        if x.shape == (self.nblocks, self.s):
            return x, False
        raise ValueError(f"expected length {self.dim} or shape {(self.nblocks, self.s)}, got {x.shape}")

    @staticmethod
    def _out(Y, flat):
        return Y.ravel() if flat else Y

    def _sub(self, j, v):
        """``(sub-diagonal j) @ v`` with the sign stripped, i.e. ``M_j v``, ``v`` or 0."""
        e = self.subdiag[j - 1]
        if e == ZERO:
            return None
        if e == NEG_I:
            return v
        return e.matvec(v)

    def _sub_t(self, j, v):
        e = self.subdiag[j - 1]
        if e == ZERO:
            return None
        if e == NEG_I:
            return v
        return e.rmatvec(v)

    # -- products --------------------------------------------------------

    def apply(self, x):
        """Block ``i`` of the result is ``x_i - M_i x_{i-1}``."""
        X, flat = self._stack(x)
        Y = X.copy()
        for j in range(1, self.nblocks):
            t = self._sub(j, X[j - 1])
            if t is not None:
                Y[j] -= t
        return self._out(Y, flat)

    def apply_transpose(self, x):
        X, flat = self._stack(x)
        Y = X.copy()
        for j in range(1, self.nblocks):
            t = self._sub_t(j, X[j])
            if t is not None:
                Y[j - 1] -= t
        return self._out(Y, flat)

    def apply_inverse(self, x, chain_order=None):
        """Forward substitution ``y_j = x_j + M_j y_{j-1}`` within each chain."""
        X, flat = self._stack(x)
        Y = X.copy()
        chains = self._chains
        order = range(len(chains)) if chain_order is None else chain_order
        for c in order:
            ch = chains[c]
            for j in ch[1:]:
                Y[j] += self._sub(j, Y[j - 1])
        return self._out(Y, flat)

    def apply_inverse_transpose(self, x, chain_order=None):
        """Backward substitution ``y_{j-1} = x_{j-1} + M_j^T y_j`` within each chain."""
        X, flat = self._stack(x)
        Y = X.copy()
        chains = self._chains
        order = range(len(chains)) if chain_order is None else chain_order
        for c in order:
            ch = chains[c]
            for j in reversed(ch[1:]):
                Y[j - 1] += self._sub_t(j, Y[j])
        return self._out(Y, flat)

    def dense(self):
        """Assembled matrix (desk-scale use only)."""
        s, n = self.s, self.nblocks
        A = np.eye(self.dim)
        for j in range(1, n):
            e = self.subdiag[j - 1]
            blk = slice(j * s, (j + 1) * s), slice((j - 1) * s, j * s)
            if e == NEG_I:
                A[blk] = -np.eye(s)
            elif e != ZERO:
                A[blk] = -e.dense()
        return A


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def _check_blocks(blocks):
    blocks = list(blocks)
    if not blocks:
        return 0
    s = blocks[0].s
    if any(b.s != s for b in blocks):
        raise ValueError("model blocks differ in size")
    return s


def exact_L(blocks, s=None) -> BlockBandedOperator:
    """``L`` with every model block retained."""
    s = _check_blocks(blocks) or s
    return BlockBandedOperator(s, list(blocks), flavor="exact", k=len(blocks) + 1)


def L0(s, N) -> BlockBandedOperator:
    return BlockBandedOperator(s, [ZERO] * N, flavor="L0", k=1)


def LI(s, N) -> BlockBandedOperator:
    return BlockBandedOperator(s, [NEG_I] * N, flavor="LI")


def LM(blocks, k, s=None) -> BlockBandedOperator:
    """Keep ``-M_j`` on sub-diagonal ``j`` unless ``j`` is a multiple of ``k``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    s = _check_blocks(blocks) or s
    sub = [ZERO if j % k == 0 else b for j, b in enumerate(blocks, start=1)]
    return BlockBandedOperator(s, sub, flavor="LM", k=int(k))


def expected_chain_count(N, k):
    return math.ceil((N + 1) / k)


def expected_model_blocks(N, k):
    """Retained model sub-diagonals of ``LM(k)``: ``N - floor(N / k)``."""
    return N - N // k

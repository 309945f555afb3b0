"""Background, model-error and observation-error covariances, the
observation operator, and the block-diagonal collections ``D`` and ``R``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .sparse_core import SparseSym, sym_eig_extremes


# ---------------------------------------------------------------------------
# SOAR circulant matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SoarSpec:
    """Parameters of a modified SOAR circulant correlation matrix.

    ``maxval`` fixes the angular resolution ``theta = pi / maxval`` and the
    half-bandwidth: lags with cyclic distance above ``maxval`` are zero.
    """

    lengthscale: float
    maxval: int
    amplitude: float
    s: int

    def __post_init__(self):
        if self.lengthscale <= 0 or self.amplitude <= 0:
            raise ValueError("lengthscale and amplitude must be positive")
        if self.maxval < 1:
            raise ValueError("maxval must be at least 1")
        if self.s < 1:
            raise ValueError("dimension must be positive")

    @property
    def theta(self):
        return np.pi / self.maxval


B_SOAR = dict(lengthscale=0.6, maxval=100, amplitude=0.4)
Q_SOAR = dict(lengthscale=0.5, maxval=120, amplitude=0.2)


def soar_row(spec: SoarSpec, i):
    """Circulant row entry ``c_i``; accepts a scalar or an array of lags."""
    i = np.asarray(i)
    if np.any(i < 0) or np.any(i >= spec.s):
        raise ValueError("lag index outside [0, s)")
    d = np.minimum(i, spec.s - i)
    chord = 2.0 * np.abs(np.sin(d * spec.theta / 2.0)) / spec.lengthscale
    c = spec.amplitude * (1.0 + chord * np.exp(-chord))
    c = np.where(d <= spec.maxval, c, 0.0)
    return float(c) if c.ndim == 0 else c


def circulant_from_row(row) -> sps.csr_matrix:
    """Symmetric circulant matrix whose first row is ``row`` (zeros dropped)."""
    row = np.asarray(row, dtype=float)
    s = row.size
    lags = np.flatnonzero(row)
    rows = np.repeat(np.arange(s), lags.size)
    cols = (rows + np.tile(lags, s)) % s
    vals = np.tile(row[lags], s)
    A = sps.csr_matrix((vals, (rows, cols)), shape=(s, s))
    A.sum_duplicates()
    return A


def build_circulant_spd(spec: SoarSpec, rng=None, seed=0) -> SparseSym:
    """SOAR circulant, inflated on the diagonal by ``|lambda_min| + psi`` if indefinite.

    ``psi ~ U[0, 0.5]`` is drawn from ``rng`` (or a generator seeded with
    ``seed``) only when the shift is needed.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    row = soar_row(spec, np.arange(spec.s))
    A = circulant_from_row(row)
    # circulant spectrum is the DFT of the (symmetric) defining row
    lam_min = float(np.min(np.fft.rfft(row).real))
    if lam_min < 0:
        delta = abs(lam_min) + rng.uniform(0.0, 0.5)
        A = A + delta * sps.identity(spec.s, format="csr")
    return SparseSym(A)


def circulant_eigenvalues(row):
    return np.fft.fft(np.asarray(row, dtype=float)).real


# ---------------------------------------------------------------------------
# Correlated observation-error covariance with block structure
# ---------------------------------------------------------------------------


def default_pvec(p, nblocks=5):
    """Near-equal split of ``p`` into ``min(nblocks, p)`` blocks.

    A fixed block count lets block sizes, and with them ``lambda_max(R_i)``,
    grow with ``p``.
    """
    plen = max(1, min(nblocks, p))
    base, extra = divmod(p, plen)
    return tuple(base + 1 if j < extra else base for j in range(plen))


def default_pcorr(plen, rng, scale=1.0):
    """Coupling multipliers for the off-diagonal blocks, in row-major pair order.

    Adjacent pairs alternate between strong, ``scale * U[0.5, 1]``, and weak,
    ``scale * U[0, 0.05]``, coupling; non-adjacent pairs are uncorrelated.
    The weak links give the block approximation natural places to cut.
    """
    out = []
    for j in range(plen):
        for k in range(j + 1, plen):
            if k != j + 1:
                out.append(0.0)
            elif j % 2 == 0:
                out.append(scale * rng.uniform(0.5, 1.0))
            else:
                out.append(scale * rng.uniform(0.0, 0.05))
    return tuple(float(v) for v in out)


# SOAR parameters inside the diagonal blocks of R_i; the amplitude sets how
# strongly correlated R_i is relative to its 0.41 eigenvalue floor
R_SOAR = dict(lengthscale=0.6, maxval=100, amplitude=8.0)


@dataclass(frozen=True)
class BlockRSpec:
    pvec: tuple
    pcorr: tuple = None
    density: float = 0.1
    floor: float = 0.41
    threshold: float = 1.0
    seed: int = 0
    soar: dict = field(default_factory=lambda: dict(R_SOAR))

    def __post_init__(self):
        pvec = tuple(int(v) for v in self.pvec)
        if any(v < 1 for v in pvec):
            raise ValueError("block sizes must be positive")
        object.__setattr__(self, "pvec", pvec)
        plen = len(pvec)
        if self.pcorr is not None:
            pcorr = tuple(float(v) for v in self.pcorr)
            if len(pcorr) != plen * (plen - 1) // 2:
                raise ValueError(f"pcorr needs {plen * (plen - 1) // 2} entries, got {len(pcorr)}")
            if any(v < 0 for v in pcorr):
                raise ValueError("pcorr entries must be nonnegative")
            object.__setattr__(self, "pcorr", pcorr)
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")

    @property
    def p(self):
        return sum(self.pvec)

    @property
    def starts(self):
        return np.concatenate([[0], np.cumsum(self.pvec)]).astype(int)


def _sparse_uniform(rng, m, n, density, high):
    return sps.random(m, n, density=density, format="csr", random_state=rng,
                      data_rvs=lambda size: rng.uniform(0.0, high, size))


def build_block_R(spec: BlockRSpec) -> SparseSym:
    """Correlated ``R_i`` with block structure.

    Diagonal blocks are the Hadamard product of a sparse random matrix and a
    SOAR circulant of the block size; the off-diagonal block for pair ``k``
    is sparse random with entries in ``(0, pcorr_k)``.  The upper triangle
    of blocks ``U`` is symmetrized as ``U + U^T`` and, if the smallest
    eigenvalue falls below ``spec.threshold``, the diagonal is shifted so
    that it equals ``spec.floor``.
    """
    rng = np.random.default_rng(spec.seed)
    plen = len(spec.pvec)
    if spec.pcorr is not None:
        pcorr = spec.pcorr
    else:
        pcorr = default_pcorr(plen, rng, spec.soar["amplitude"])
    st = spec.starts
    grid = [[None] * plen for _ in range(plen)]
    pair = 0
    for j in range(plen):
        bj = spec.pvec[j]
        soar = SoarSpec(s=bj, **spec.soar)
        S = circulant_from_row(soar_row(soar, np.arange(bj)))
        grid[j][j] = _sparse_uniform(rng, bj, bj, spec.density, 1.0).multiply(S).tocsr()
        for k in range(j + 1, plen):
            c = pcorr[pair]
            pair += 1
            if c > 0:
                grid[j][k] = _sparse_uniform(rng, bj, spec.pvec[k], spec.density, c)
    for j in range(plen):
        for k in range(plen):
            if grid[j][k] is None and j != k:
                grid[j][k] = sps.csr_matrix((spec.pvec[j], spec.pvec[k]))
    U = sps.bmat(grid, format="csr")
    assert U.shape == (st[-1], st[-1])
    R = SparseSym(U + U.T, symmetrize="check")
    lam_min = float(sym_eig_extremes(R, R.n, "smallest")[0])
    if lam_min < spec.threshold:
        R = R.shifted(spec.floor - lam_min)
    return R


# ---------------------------------------------------------------------------
# Observation operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObsOperator:
    """Per-time ``p x s`` observation matrix ``H_i``; the full operator is ``I kron H_i``."""

    Hi: sps.csr_matrix
    columns: np.ndarray
    smoothed: np.ndarray

    @property
    def p(self):
        return self.Hi.shape[0]

    @property
    def s(self):
        return self.Hi.shape[1]

    def apply(self, X):
        """``H_i`` applied to each row of an ``(nslots, s)`` stack."""
        return (self.Hi @ X.T).T

    def apply_transpose(self, Y):
        return (self.Hi.T @ Y.T).T

    def kron(self, N):
        return sps.kron(sps.identity(N + 1), self.Hi, format="csr")


def build_obs_operator(s, p, seed=0, smoothing=True, rng=None) -> ObsOperator:
    """Observe ``p`` sorted random columns; every second row is a five-point average.

    With smoothing, columns are drawn from ``[2, s-3]`` (0-based) so that
    the five-point window fits.  ``p == s`` without smoothing gives the
    identity.
    """
    if p > s:
        raise ValueError(f"cannot observe p={p} of s={s} variables")
    if p < 1:
        raise ValueError("need at least one observation")
    if rng is None:
        rng = np.random.default_rng(seed)
    if smoothing:
        pool = np.arange(2, s - 2)
        if p > pool.size:
            raise ValueError(f"p={p} exceeds the {pool.size} columns admitting a 5-point window")
    else:
        pool = np.arange(s)
    cols = np.sort(rng.choice(pool, size=p, replace=False))
    smoothed = np.zeros(p, dtype=bool)
    if smoothing:
        smoothed[1::2] = True
    rows, cc, vals = [], [], []
    for r, (c, sm) in enumerate(zip(cols, smoothed)):
        if sm:
            rows += [r] * 5
            cc += list(range(c - 2, c + 3))
            vals += [0.2] * 5
        else:
            rows.append(r)
            cc.append(c)
            vals.append(1.0)
    Hi = sps.csr_matrix((vals, (rows, cc)), shape=(p, s))
    return ObsOperator(Hi=Hi, columns=cols, smoothed=smoothed)


# ---------------------------------------------------------------------------
# Block-diagonal collections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceSet:
    """Block-diagonal matrix whose slots share a few distinct blocks.

    ``slots[i]`` indexes into ``blocks``.  Vectors are handled as
    ``(nslots, n)`` stacks or flat arrays of length ``nslots * n``.
    """

    blocks: tuple
    slots: tuple

    @property
    def n(self):
        return self.blocks[0].n

    @property
    def nslots(self):
        return len(self.slots)

    @property
    def dim(self):
        return self.n * self.nslots

    @property
    def distinct_count(self):
        return len(self.blocks)

    def apply_stack(self, X):
        X = np.asarray(X, dtype=float)
        Y = np.empty_like(X)
        sl = np.asarray(self.slots)
        for b, blk in enumerate(self.blocks):
            idx = np.flatnonzero(sl == b)
            if idx.size == 1:
                Y[idx[0]] = blk.csr @ X[idx[0]]
            elif idx.size:
                Y[idx] = (blk.csr @ X[idx].T).T
        return Y

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected length {self.dim}, got {x.shape}")
        return self.apply_stack(x.reshape(self.nslots, self.n)).ravel()

    def __matmul__(self, x):
        return self.matvec(x)

    def dense(self):
        return sps.block_diag([self.blocks[i].csr for i in self.slots]).toarray()


def assemble_D(B: SparseSym, Q: SparseSym, N: int) -> CovarianceSet:
    if B.n != Q.n:
        raise ValueError("B and Q must have the same dimension")
    if N < 0:
        raise ValueError("N must be nonnegative")
    return CovarianceSet(blocks=(B, Q), slots=(0,) + (1,) * N)


def assemble_R(Ri: SparseSym, N: int) -> CovarianceSet:
    if N < 0:
        raise ValueError("N must be nonnegative")
    return CovarianceSet(blocks=(Ri,), slots=(0,) * (N + 1))

"""Eigenvalue bounds for the preconditioned saddle system and the
preconditioned model term, with dense oracles to check them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .lprecond import BlockBandedOperator
from .sparse_core import DENSE_THRESHOLD, lanczos_extremes

# ---------------------------------------------------------------------------
# Bounds for the block-diagonal preconditioned saddle matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralSummary:
    """Extreme eigenvalues of the four preconditioned pairs plus ``kappa(D)``.

    ``lam_D, Lam_D``: ``D_hat^{-1} D``; ``lam_R, Lam_R``: ``R_hat^{-1} R``;
    ``lam_S, Lam_S``: ``S_tilde^{-1} S`` with ``S_tilde = L^T D^{-1} L`` and
    ``S = S_tilde + H^T R^{-1} H``; ``lam_L, Lam_L``:
    ``(L_hat^T L_hat)^{-1} L^T L``.
    """

    lam_D: float
    Lam_D: float
    lam_R: float
    Lam_R: float
    lam_S: float
    Lam_S: float
    lam_L: float
    Lam_L: float
    kappa_D: float

    def __post_init__(self):
        for lo, hi in (("lam_D", "Lam_D"), ("lam_R", "Lam_R"), ("lam_S", "Lam_S"),
                       ("lam_L", "Lam_L")):
            a, b = getattr(self, lo), getattr(self, hi)
            if not 0 < a <= b * (1 + 1e-12):
                raise ValueError(f"need 0 < {lo} <= {hi}, got {a}, {b}")


@dataclass(frozen=True)
class IntervalUnion:
    negative: tuple
    middle: tuple
    positive: tuple

    @property
    def intervals(self):
        return (self.negative, self.middle, self.positive)

    def contains(self, values, slack=1e-8):
        """Boolean mask: which values lie in the union (each end widened by ``slack``)."""
        v = np.asarray(values, dtype=float)
        mask = np.zeros(v.shape, dtype=bool)
        for lo, hi in self.intervals:
            mask |= (v >= lo - slack) & (v <= hi + slack)
        return mask


def theorem31_intervals(s: SpectralSummary) -> IntervalUnion:
    """Eigenvalue inclusion intervals for the block-diagonally preconditioned saddle matrix."""
    lp = min(s.lam_D, s.lam_R)
    Lp = max(s.Lam_D, s.Lam_R)
    k = s.kappa_D
    big = s.Lam_S * s.Lam_L * k
    small = s.lam_S * s.lam_L / k
    neg = ((lp - math.sqrt(lp**2 + 4 * Lp * big)) / 2,
           (Lp - math.sqrt(Lp**2 + 4 * lp * small)) / 2)
    pos = ((lp + math.sqrt(lp**2 + 4 * lp * small)) / 2,
           (Lp + math.sqrt(Lp**2 + 4 * Lp * big)) / 2)
    return IntervalUnion(neg, (lp, Lp), pos)


def _gen_extremes(A, B):
    """Smallest and largest eigenvalue of the pencil ``(A, B)``, ``B`` SPD."""
    w = sla.eigh(A, B, eigvals_only=True)
    return float(w[0]), float(w[-1])


def schur_ratio_extremes(problem, lhat: BlockBandedOperator, dense_threshold=DENSE_THRESHOLD):
    """``(lam_S, Lam_S, lam_L, Lam_L)`` by dense generalized eigensolves."""
    n = problem.nslots * problem.s
    if n > dense_threshold:
        raise ValueError(f"dimension {n} exceeds the dense threshold; use extremes mode")
    D, R, H, L = problem.dense_blocks()
    St = L.T @ np.linalg.solve(D, L)
    S = St + H.T @ np.linalg.solve(R, H)
    lam_S, Lam_S = _gen_extremes(0.5 * (S + S.T), 0.5 * (St + St.T))
    Lh = lhat.dense()
    lam_L, Lam_L = _gen_extremes(L.T @ L, Lh.T @ Lh)
    return lam_S, Lam_S, lam_L, Lam_L


def spectral_summary(spec) -> SpectralSummary:
    """Dense-oracle summary for a block-diagonal preconditioner specification.

    ``D_hat`` and ``R_hat`` enter as the matrices their factors represent.
    """
    pb = spec.problem
    D, _, _, _ = pb.dense_blocks()
    lam_D, Lam_D = _gen_extremes(D, spec.dhat.dense())
    Ri = pb.R.blocks[0].toarray()
    lam_R, Lam_R = _gen_extremes(Ri, spec.rhat.realized_matrix())
    lam_S, Lam_S, lam_L, Lam_L = schur_ratio_extremes(pb, spec.lhat)
    ev = np.linalg.eigvalsh(D)
    return SpectralSummary(lam_D, Lam_D, lam_R, Lam_R, lam_S, Lam_S, lam_L, Lam_L,
                           float(ev[-1] / ev[0]))


def preconditioned_saddle_eigenvalues(spec):
    """All eigenvalues of ``P_D^{-1} A`` (generalized symmetric-definite problem)."""
    if spec.shape != "PD":
        raise ValueError("eigenvalues are real only for the block-diagonal preconditioner")
    A = spec.problem.dense()
    P = spec.dense_matrix()
    return sla.eigh(0.5 * (A + A.T), 0.5 * (P + P.T), eigvals_only=True)


# ---------------------------------------------------------------------------
# Preconditioned model term
# ---------------------------------------------------------------------------


def unit_eigenvalue_count(N, k, s):
    """``(N + 1 - 2 floor(N / k)) s`` unit eigenvalues guaranteed for ``k >= 2``."""
    if k < 2:
        raise ValueError("the unit-eigenvalue count needs k >= 2")
    if k > N + 1:
        raise ValueError("k may not exceed N + 1")
    return (N + 1 - 2 * (N // k)) * s


def prop45_upper_bound(k):
    if k < 1:
        raise ValueError("k must be positive")
    return k + 1 + 2 * math.sqrt(k)


def remark_bound(k):
    if k < 1:
        raise ValueError("k must be positive")
    return 1 + k + math.sqrt(k)


def propS5_bound():
    return 5 + math.sqrt(8)


def applicable_upper_bound(N, k):
    """Tightest available upper bound on the spectrum for ``N + 1`` blocks and chain length ``k``.

    Assumes constant symmetric model blocks with spectral radius at most one
    (needed by the closed form for ``k = 3``).
    """
    n = N + 1
    best = prop45_upper_bound(k)
    if k < n <= 2 * k:
        best = min(best, remark_bound(k))
    if k == 4 and 9 <= n <= 12:
        best = min(best, propS5_bound())
    if k == 3 and N in (3, 4, 5):
        best = min(best, propS4_closed_form(1.0, N, k)[1])
    return best


def preconditioned_model_spectrum(L: BlockBandedOperator, LM: BlockBandedOperator,
                                  method="dense", which="both", k=1):
    """Eigenvalues of ``LM^{-T} L^T L LM^{-1}``.

    ``method="dense"`` returns the full sorted spectrum; ``"extremes"`` runs
    Lanczos on the product operator and returns ``(smallest, largest)``
    arrays of length ``k``.
    """
    if L.dim != LM.dim:
        raise ValueError("L and LM dimensions differ")
    if method == "dense":
        X = L.dense() @ np.linalg.inv(LM.dense())
        return np.linalg.eigvalsh(X.T @ X)
    if method != "extremes":
        raise ValueError(f"unknown method {method!r}")

    def op(v):
        y = L.apply(LM.apply_inverse(v))
        return LM.apply_inverse_transpose(L.apply_transpose(y))

    lo, _ = lanczos_extremes(op, L.dim, "smallest", k)
    hi, _ = lanczos_extremes(op, L.dim, "largest", k)
    return np.asarray(lo), np.asarray(hi)


def lt_l_bounds(mu_max):
    """``((1 - mu)^2, (1 + mu)^2)``; the lower value is a bound only for ``mu <= 1``."""
    return (1 - mu_max) ** 2, (1 + mu_max) ** 2


def reduced_size(N, k):
    return k * (N // k) + 1


def reduced_A_mu(mu, N, k):
    """Small dense matrix carrying the non-unit spectrum for one eigenvalue ``mu`` of M.

    For each full chain ``n = 1..floor(N/k)`` with 1-based indices
    ``(n-1)k+1 <= i, j <= nk`` the block holds ``mu^(2nk - i - j + 2)``,
    and the coupling to index ``nk + 1`` is ``-mu^(nk - j + 1)``.
    """
    if k < 1 or N < 0:
        raise ValueError("need k >= 1 and N >= 0")
    eta = reduced_size(N, k)
    A = np.zeros((eta, eta))
    for n in range(1, N // k + 1):
        idx = np.arange((n - 1) * k + 1, n * k + 1)
        I, J = np.meshgrid(idx, idx, indexing="ij")
        A[I - 1, J - 1] = mu ** (2 * n * k - (I + J) + 2)
        border = -(mu ** (n * k - idx + 1))
        A[n * k, idx - 1] = border
        A[idx - 1, n * k] = border
    return A


def propS4_closed_form(mu, N=3, k=3):
    """``(nu_minus, nu_plus)`` for ``k = 3`` and ``N`` in ``{3, 4, 5}``."""
    if k != 3 or N not in (3, 4, 5):
        raise ValueError("closed form holds only for k = 3 and N in {3, 4, 5}")
    sig = mu**2 + mu**4 + mu**6
    root = math.sqrt(sig**2 + 4 * sig)
    return 1 + 0.5 * (sig - root), 1 + 0.5 * (sig + root)


def count_unit(values, tol=1e-8):
    return int(np.sum(np.abs(np.asarray(values) - 1.0) <= tol))

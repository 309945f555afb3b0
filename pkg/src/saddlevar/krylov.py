"""Preconditioned MINRES and full right-preconditioned GMRES.

Both solvers start from ``x0 = 0`` but still form the initial residual
``b - A x0`` with one operator application, so every run applies ``A`` and
the preconditioner the same number of times.  Convergence is declared when
the unpreconditioned residual satisfies ``||r||_2 / ||b||_2 <= tol``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class SolveReport:
    """Outcome of one Krylov solve.

    Attributes
    ----------
    method : str
    iterations : int
    residuals : list of float
        Relative 2-norm residual after each iteration (index 0 is the start).
    converged : bool
    counts : dict
        Constituent tallies copied from the operator counters, if given.
    wallclock_s : float
    precond_residuals : list of float
        MINRES only: residual in the preconditioner-induced norm.
    """

    method: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    counts: dict = field(default_factory=dict)
    wallclock_s: float = 0.0
    precond_residuals: list = field(default_factory=list)
    final_true_residual: float = float("nan")

    @property
    def relative_residual(self):
        return self.residuals[-1] if self.residuals else float("nan")


class IndefinitePreconditionerError(ValueError):
    pass


def _finish(report, counters, t0, A, b, x):
    report.wallclock_s = time.perf_counter() - t0
    if counters is not None:
        report.counts = counters.as_dict()
        with counters.paused():
            r = b - A(x)
    else:
        r = b - A(x)
    report.final_true_residual = float(np.linalg.norm(r) / np.linalg.norm(b))


def minres(A, Pinv, b, tol=1e-6, maxit=1000, *, counters=None, refresh=50, name="P"):
    """Preconditioned MINRES for symmetric ``A`` and SPD ``Pinv``.

    Parameters
    ----------
    A, Pinv : callable
        Operator and preconditioner-inverse applications.
    b : ndarray
        Right-hand side, nonzero.
    tol, maxit : float, int
        Relative residual target and iteration cap.
    counters : Counters, optional
        Shared tallies; the explicit residual refresh every ``refresh``
        iterations is done with counting paused.
    name : str
        Preconditioner label used in error messages.

    Returns
    -------
    x : ndarray
    report : SolveReport
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        raise ValueError("right-hand side must be nonzero")
    n = b.size
    x = np.zeros(n)
    report = SolveReport("minres")

    r1 = b - A(x)
    y = Pinv(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise IndefinitePreconditionerError(f"preconditioner {name} is not positive definite")
    beta1 = np.sqrt(beta1)
    r = r1.copy()  # true residual, updated by recurrence
    rnorm = np.linalg.norm(r) / bnorm
    report.residuals.append(rnorm)
    report.precond_residuals.append(beta1)
    if rnorm <= tol or beta1 == 0:
        report.converged = True
        _finish(report, counters, t0, A, b, x)
        return x, report

    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    itn = 0
    while itn < maxit:
        itn += 1
        v = y / beta
        y = A(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = Pinv(r2)
        oldb = beta
        bb = float(r2 @ y)
        if bb < 0:
            raise IndefinitePreconditionerError(f"preconditioner {name} is not positive definite")
        beta = np.sqrt(bb)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = np.hypot(gbar, beta)
        if gamma == 0:
            gamma = np.finfo(float).eps
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        # unpreconditioned residual: r_k = s_k^2 r_{k-1} - phibar_k c_k q_{k+1}
        if beta > 0:
            r = sn * sn * r - (phibar * cs / beta) * r2
        if itn % refresh == 0:
            if counters is not None:
                with counters.paused():
                    r = b - A(x)
            else:
                r = b - A(x)
        rnorm = np.linalg.norm(r) / bnorm
        report.residuals.append(rnorm)
        report.precond_residuals.append(abs(phibar))
        if rnorm <= tol:
            report.converged = True
            break
        if beta == 0:
            # Krylov space is invariant: the iterate is the exact solution
            report.converged = True
            break
    report.iterations = itn
    _finish(report, counters, t0, A, b, x)
    if not report.converged:
        log.warning("minres: no convergence in %d iterations (rel. residual %.3e)", itn, rnorm)
    return x, report


def gmres(A, Pinv, b, tol=1e-6, maxit=1000, *, counters=None, reorth=1.0 / np.sqrt(2.0)):
    """Full (unrestarted) right-preconditioned GMRES.

    Arnoldi uses modified Gram-Schmidt; a second pass is made whenever the
    new vector's norm drops below ``reorth`` times its norm before
    orthogonalization.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        raise ValueError("right-hand side must be nonzero")
    n = b.size
    x0 = np.zeros(n)
    report = SolveReport("gmres")

    r0 = b - A(x0)
    beta = np.linalg.norm(r0)
    report.residuals.append(beta / bnorm)
    m = min(maxit, n)
    V = np.zeros((m + 1, n))
    Hm = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r0 / beta
    j = 0
    if beta / bnorm <= tol:
        report.converged = True
        x = x0 + Pinv(np.zeros(n))
        report.iterations = 0
        _finish(report, counters, t0, A, b, x)
        return x, report

    for j in range(m):
        w = np.array(A(Pinv(V[j])), dtype=float)  # copy: operators may return their input
        h0 = np.linalg.norm(w)
        for i in range(j + 1):
            Hm[i, j] = V[i] @ w
            w -= Hm[i, j] * V[i]
        if np.linalg.norm(w) < reorth * h0:
            for i in range(j + 1):
                c = V[i] @ w
                Hm[i, j] += c
                w -= c * V[i]
        Hm[j + 1, j] = np.linalg.norm(w)
        breakdown = Hm[j + 1, j] <= 1e-14 * h0
        if not breakdown:
            V[j + 1] = w / Hm[j + 1, j]
        for i in range(j):
            a, bb = Hm[i, j], Hm[i + 1, j]
            Hm[i, j] = cs[i] * a + sn[i] * bb
            Hm[i + 1, j] = -sn[i] * a + cs[i] * bb
        denom = np.hypot(Hm[j, j], Hm[j + 1, j])
        cs[j], sn[j] = Hm[j, j] / denom, Hm[j + 1, j] / denom
        Hm[j, j] = denom
        Hm[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        rel = abs(g[j + 1]) / bnorm
        report.residuals.append(rel)
        if rel <= tol or breakdown:
            report.converged = True
            break
    k = j + 1
    ycoef = np.linalg.solve(np.triu(Hm[:k, :k]), g[:k]) if k else np.zeros(0)
    x = x0 + Pinv(V[:k].T @ ycoef)
    report.iterations = k
    _finish(report, counters, t0, A, b, x)
    if not report.converged:
        log.warning("gmres: no convergence in %d iterations (rel. residual %.3e)", k,
                    report.residuals[-1])
    return x, report

"""Forward and tangent-linear models that fill the sub-diagonal of ``L``.

Two models are provided: Lorenz 96 integrated with classical RK4 (nonlinear,
so every subwindow has its own Jacobian) and the 1-D heat equation with
forward Euler and Dirichlet rows (linear and symmetric, the same block in
every subwindow).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .sparse_core import SparseSym


# ---------------------------------------------------------------------------
# Tangent-linear blocks
# ---------------------------------------------------------------------------


class TangentLinearBlock:
    """An ``s x s`` linear map with its exact transpose.

    ``matvec``/``rmatvec`` accept a vector or an ``(s, m)`` block of columns.
    Calling :meth:`materialize` caches the dense matrix, after which both
    products become single BLAS calls.
    """

    def __init__(self, s, matvec, rmatvec, dense=None, symmetric=False):
        self.s = s
        self._matvec = matvec
        self._rmatvec = rmatvec
        self._dense = dense
        self.symmetric = symmetric

    @classmethod
    def from_matrix(cls, M, symmetric=False):
        M = np.asarray(M, dtype=float)
        return cls(M.shape[0], lambda v: M @ v, lambda v: M.T @ v, dense=M, symmetric=symmetric)

    @property
    def shape(self):
        return (self.s, self.s)

    def matvec(self, v):
        if self._dense is not None:
            return self._dense @ v
        return self._matvec(v)

    def rmatvec(self, v):
        if self._dense is not None:
            return self._dense.T @ v
        return self._rmatvec(v)

    def materialize(self):
        if self._dense is None:
            self._dense = np.ascontiguousarray(self._matvec(np.eye(self.s)))
        return self

    def dense(self):
        if self._dense is not None:
            return self._dense
        return self._matvec(np.eye(self.s))


# ---------------------------------------------------------------------------
# Lorenz 96
# ---------------------------------------------------------------------------


def lorenz_rhs(x, forcing=8.0):
    """Tendency ``(x[i+1] - x[i-2]) x[i-1] - x[i] + F`` with cyclic indices.

    Works along axis 0, so a ``(s, m)`` array is treated as m states.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 4:
        raise ValueError(f"Lorenz 96 needs at least 4 variables, got {x.shape[0]}")
    return (np.roll(x, -1, axis=0) - np.roll(x, 2, axis=0)) * np.roll(x, 1, axis=0) - x + forcing


def _lorenz_jvp(x, v):
    # x enters as (s,) and broadcasts over the columns of v
    if v.ndim == 2:
        x = x[:, None]
    return ((np.roll(v, -1, axis=0) - np.roll(v, 2, axis=0)) * np.roll(x, 1, axis=0)
            + (np.roll(x, -1, axis=0) - np.roll(x, 2, axis=0)) * np.roll(v, 1, axis=0)
            - v)


def _lorenz_vjp(x, w):
    if w.ndim == 2:
        x = x[:, None]
    # (J^T w)_j = x[j-2] w[j-1] - x[j+1] w[j+2] + (x[j+2] - x[j-1]) w[j+1] - w[j]
    return (np.roll(x, 2, axis=0) * np.roll(w, 1, axis=0)
            - np.roll(x, -1, axis=0) * np.roll(w, -2, axis=0)
            + (np.roll(x, -2, axis=0) - np.roll(x, 1, axis=0)) * np.roll(w, -1, axis=0)
            - w)


@dataclass(frozen=True)
class Lorenz96Model:
    s: int
    forcing: float = 8.0
    dt: float = 1e-4
    steps: int = 10

    def __post_init__(self):
        if self.s < 4:
            raise ValueError("Lorenz 96 needs s >= 4")
        if self.dt <= 0 or self.steps < 1:
            raise ValueError("need dt > 0 and at least one step per subwindow")

    def rhs(self, x):
        return lorenz_rhs(x, self.forcing)

    def rk4_step(self, x):
        return rk4_step(self, x)

    def integrate(self, x, nsteps):
        for _ in range(nsteps):
            x = rk4_step(self, x)
        return x

    def spun_up_state(self, nsteps=1000):
        """State after ``nsteps`` RK4 steps from ``F + 0.01 e_1``."""
        x = np.full(self.s, self.forcing)
        x[0] += 0.01
        return self.integrate(x, nsteps)

    def tlm_block(self, x0, materialize=True):
        return lorenz_tlm_block(self, x0, materialize=materialize)

    def window(self, x0, N, materialize=True):
        """Tangent-linear blocks ``M_1..M_N`` along the trajectory from ``x0``.

        Returns ``(blocks, states)`` with ``states[i]`` the state at the
        start of subwindow ``i + 1``.
        """
        blocks, states = [], [np.asarray(x0, dtype=float)]
        x = states[0]
        for _ in range(N):
            blocks.append(lorenz_tlm_block(self, x, materialize=materialize))
            x = self.integrate(x, self.steps)
            states.append(x)
        return blocks, states


def rk4_step(model, x):
    dt = model.dt
    f = model.rhs
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_stage_states(model, x):
    dt = model.dt
    f = model.rhs
    x1 = x
    k1 = f(x1)
    x2 = x + 0.5 * dt * k1
    k2 = f(x2)
    x3 = x + 0.5 * dt * k2
    k3 = f(x3)
    x4 = x + dt * k3
    k4 = f(x4)
    nxt = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return (x1, x2, x3, x4), nxt


def lorenz_tlm_block(model: Lorenz96Model, x0, materialize=True) -> TangentLinearBlock:
    """Exact Jacobian of ``model.steps`` composed RK4 steps starting at ``x0``.

    Each step is differentiated stage by stage, so the transpose is the
    discrete adjoint and the adjoint identity holds to rounding.
    """
    dt = model.dt
    stages = []
    x = np.asarray(x0, dtype=float)
    for _ in range(model.steps):
        st, x = _rk4_stage_states(model, x)
        stages.append(st)

    def matvec(v):
        v = np.array(v, dtype=float)
        for x1, x2, x3, x4 in stages:
            d1 = _lorenz_jvp(x1, v)
            d2 = _lorenz_jvp(x2, v + 0.5 * dt * d1)
            d3 = _lorenz_jvp(x3, v + 0.5 * dt * d2)
            d4 = _lorenz_jvp(x4, v + dt * d3)
            v = v + dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        return v

    def rmatvec(w):
        w = np.array(w, dtype=float)
        for x1, x2, x3, x4 in reversed(stages):
            a4 = dt / 6.0 * w
            g4 = _lorenz_vjp(x4, a4)
            a3 = dt / 3.0 * w + dt * g4
            g3 = _lorenz_vjp(x3, a3)
            a2 = dt / 3.0 * w + 0.5 * dt * g3
            g2 = _lorenz_vjp(x2, a2)
            a1 = dt / 6.0 * w + 0.5 * dt * g2
            g1 = _lorenz_vjp(x1, a1)
            w = w + g1 + g2 + g3 + g4
        return w

    block = TangentLinearBlock(model.s, matvec, rmatvec)
    return block.materialize() if materialize else block


# ---------------------------------------------------------------------------
# Heat equation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeatModel:
    """Forward-Euler heat equation on the unit line, ``dx = 1/s``."""

    s: int
    alpha: float = 1.0
    r: float = 0.4
    steps: int = 10

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("need r > 0")
        if self.s < 3:
            raise ValueError("heat model needs s >= 3")
        if self.steps < 1:
            raise ValueError("need at least one step per subwindow")

    @property
    def dx(self):
        return 1.0 / self.s

    @property
    def dt(self):
        return self.r * self.dx**2 / self.alpha

    def step_matrix(self):
        return heat_step_matrix(self)

    def subwindow_block(self, materialize=True):
        return heat_subwindow_block(self, materialize=materialize)

    def window(self, N, materialize=True):
        # one shared block: the model is linear and time invariant
        block = heat_subwindow_block(self, materialize=materialize)
        return [block] * N


def heat_step_matrix(model: HeatModel) -> SparseSym:
    """Single-step matrix: interior rows ``(r, 1-2r, r)``, zero first/last rows."""
    s, r = model.s, model.r
    if r > 0.5:
        warnings.warn(f"r = {r} > 1/2: step matrix spectrum leaves (-1, 1)", stacklevel=2)
    main = np.full(s, 1.0 - 2.0 * r)
    off = np.full(s - 1, r)
    main[[0, -1]] = 0.0
    # couplings into the boundary rows/columns are dropped too
    off[[0, -1]] = 0.0
    M = sps.diags([off, main, off], [-1, 0, 1], format="csr")
    return SparseSym(M)


def heat_subwindow_block(model: HeatModel, materialize=True) -> TangentLinearBlock:
    """``M_dt^m`` applied by ``m`` repeated sparse products."""
    Mdt = heat_step_matrix(model).csr
    m = model.steps

    def apply(v):
        v = np.asarray(v, dtype=float)
        for _ in range(m):
            v = Mdt @ v
        return v

    block = TangentLinearBlock(model.s, apply, apply, symmetric=True)
    return block.materialize() if materialize else block

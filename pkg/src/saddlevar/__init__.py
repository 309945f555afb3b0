"""Preconditioned saddle-point solvers for weak-constraint 4D-Var.

Modules
-------
sparse_core  sparse symmetric storage, IC(0), Woodbury solves, extreme eigenvalues
models       Lorenz 96 and heat-equation tangent-linear blocks
covariance   B, Q, R_i, H and the block-diagonal collections D and R
lprecond     the model term L and its approximations L0, LI, LM(k)
rprecond     approximations of R_i (diag, block, ridge, minimum eigenvalue, exact)
saddle_ops   the saddle operator and the two preconditioners, with counters
krylov       MINRES and GMRES
spectra      eigenvalue bounds and dense oracles
harness      config-driven experiment and spectral-study runners
"""

__version__ = "0.1.0"

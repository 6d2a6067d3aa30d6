"""
Utilities module for the FD-DLM augmented Lagrangian toolkit.

Contains sparse/dense linear algebra kernels, eigensolvers, Krylov
solvers, the AMG wrapper and plotting helpers.
"""

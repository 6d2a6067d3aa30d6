"""
Services module for the FD-DLM augmented Lagrangian toolkit.

Contains the mesh, assembly, preconditioning, spectral and benchmark
service layers.
"""

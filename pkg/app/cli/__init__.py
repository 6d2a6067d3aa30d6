"""
CLI module for the FD-DLM augmented Lagrangian toolkit.

Contains the command-line driver for assembly, solves, spectra and sweeps.
"""

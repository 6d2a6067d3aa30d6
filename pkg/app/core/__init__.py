"""
Core module for the FD-DLM augmented Lagrangian toolkit.

Contains configuration settings and the global exception hierarchy.
"""

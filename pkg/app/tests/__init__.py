"""
Tests module for the FD-DLM augmented Lagrangian toolkit.

Contains unit tests and integration tests.
"""

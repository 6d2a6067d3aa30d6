"""
Models module for the FD-DLM augmented Lagrangian toolkit.

Contains Pydantic models for meshes, assembled systems, experiment
configuration documents and solver/spectrum reports.
"""

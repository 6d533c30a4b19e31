"""Datasets, training, inference and evaluation services."""

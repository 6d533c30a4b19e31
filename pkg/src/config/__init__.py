"""Experiment configuration, schema and layout tables."""

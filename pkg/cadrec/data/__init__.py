"""Interaction data and on-disk artifacts."""

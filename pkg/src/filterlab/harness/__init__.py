"""Experiment orchestration, reporting and the command line."""

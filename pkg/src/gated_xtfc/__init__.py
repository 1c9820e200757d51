"""Gated X-TFC solvers."""

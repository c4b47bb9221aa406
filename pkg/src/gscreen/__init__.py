"""Screening under non-quasilinear preferences: certification and discrete solvers."""

"""Desk-scale numerical laboratory for evolution multivalued
quasi-variational inequalities with feedback: discretization, model
operators, inner/outer solvers, a-priori bound certificates, brute-force
oracles, and derivative-free parameter identification."""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
